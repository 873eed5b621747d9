//! Parallel edit decoding, iterative refinement, and the latency benchmark.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::editspace::{apply_edits, EditSequence, TokenSequence, TransformTable};
use crate::error::{PieError, Result};
use crate::numcore::{Scalar, Tensor};
use crate::piemodel::{edit_distribution, PieModel};

/// Anything that labels every token of a batch of sequences with an edit.
pub trait EditPredictor {
    fn predict_batch(&self, xs: &[TokenSequence]) -> Result<Vec<EditSequence>>;

    /// Transformation rules the predicted transform indices refer to.
    fn table(&self) -> &TransformTable;

    /// Sentences encoded so far; one per sentence per call.
    fn forward_passes(&self) -> u64;

    /// Longest sequence the predictor accepts, in tokens.
    fn max_len(&self) -> Option<usize> {
        None
    }
}

impl<T: Scalar> EditPredictor for PieModel<T> {
    fn predict_batch(&self, xs: &[TokenSequence]) -> Result<Vec<EditSequence>> {
        let batch: Vec<Vec<usize>> = xs.iter().map(|x| self.vocab().encode(x)).collect();
        self.predict_indices(&batch)?
            .iter()
            .map(|idx| self.space().decode(idx))
            .collect()
    }

    fn table(&self) -> &TransformTable {
        self.space().table()
    }

    fn forward_passes(&self) -> u64 {
        PieModel::forward_passes(self)
    }

    fn max_len(&self) -> Option<usize> {
        Some(self.config().max_positions)
    }
}

/// Most probable edit at every position, from one forward pass.
pub fn predict_edits<P: EditPredictor + ?Sized>(model: &P, x: &TokenSequence) -> Result<EditSequence> {
    Ok(model.predict_batch(std::slice::from_ref(x))?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub max_iterations: usize,
    pub batch_size: usize,
    pub record_rounds: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            max_iterations: 4,
            batch_size: 32,
            record_rounds: true,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(PieError::Config("max_iterations must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PieError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub edits: String,
    pub output: String,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub rounds_used: usize,
    /// Per-round edits and outputs; empty unless rounds are recorded.
    pub rounds: Vec<Round>,
}

struct Active {
    current: TokenSequence,
    seen: HashSet<TokenSequence>,
    trace: RefinementTrace,
    done: bool,
}

/// Refines a batch of sequences together. Each round decodes every sequence
/// that has not settled in one batched pass and applies the edits; a
/// sequence settles when its output was seen before or after the last round.
/// An output too long to feed back is discarded and the sequence settles on
/// its previous value.
pub fn refine_batch<P: EditPredictor + ?Sized>(
    model: &P,
    xs: &[TokenSequence],
    cfg: &InferenceConfig,
) -> Result<Vec<(TokenSequence, RefinementTrace)>> {
    cfg.validate()?;
    let mut states: Vec<Active> = xs
        .iter()
        .map(|x| Active {
            current: x.clone(),
            seen: HashSet::from([x.clone()]),
            trace: RefinementTrace::default(),
            done: false,
        })
        .collect();
    for _ in 0..cfg.max_iterations {
        let active: Vec<usize> = (0..states.len()).filter(|&i| !states[i].done).collect();
        if active.is_empty() {
            break;
        }
        for chunk in active.chunks(cfg.batch_size) {
            let inputs: Vec<TokenSequence> = chunk.iter().map(|&i| states[i].current.clone()).collect();
            let edits = model.predict_batch(&inputs)?;
            for (&i, e) in chunk.iter().zip(edits) {
                let s = &mut states[i];
                let next = apply_edits(&s.current, &e, model.table())?;
                if model.max_len().is_some_and(|m| next.len() > m) {
                    s.trace.rounds_used += 1;
                    s.done = true;
                    continue;
                }
                let changed = next != s.current;
                s.trace.rounds_used += 1;
                if cfg.record_rounds {
                    s.trace.rounds.push(Round {
                        edits: e.to_string(),
                        output: next.detokenize(),
                        changed,
                    });
                }
                if !s.seen.insert(next.clone()) {
                    s.done = true;
                }
                s.current = next;
            }
        }
    }
    Ok(states.into_iter().map(|s| (s.current, s.trace)).collect())
}

/// Re-applies the model to its own output until it produces a sequence it
/// has produced or seen before, or `max_iterations` rounds have run.
pub fn refine_iteratively<P: EditPredictor + ?Sized>(
    model: &P,
    x: &TokenSequence,
    cfg: &InferenceConfig,
) -> Result<(TokenSequence, RefinementTrace)> {
    Ok(refine_batch(model, std::slice::from_ref(x), cfg)?.remove(0))
}

/// Averages the edit distributions of several models sharing one edit space.
pub struct Ensemble<T: Scalar> {
    models: Vec<PieModel<T>>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(models: Vec<PieModel<T>>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| PieError::InvalidInput("an ensemble needs at least one model".into()))?;
        for m in &models[1..] {
            if m.space() != first.space() || m.vocab() != first.vocab() {
                return Err(PieError::VocabularyMismatch(
                    "ensemble members use different vocabularies or edit spaces".into(),
                ));
            }
        }
        Ok(Ensemble { models })
    }
}

impl<T: Scalar> EditPredictor for Ensemble<T> {
    fn predict_batch(&self, xs: &[TokenSequence]) -> Result<Vec<EditSequence>> {
        let first = &self.models[0];
        let batch: Vec<Vec<usize>> = xs.iter().map(|x| first.vocab().encode(x)).collect();
        let mut avg: Vec<Tensor<f64>> = Vec::new();
        for m in &self.models {
            for (i, l) in m.forward_logits(&batch)?.iter().enumerate() {
                let p: Tensor<f64> = edit_distribution(l).probs.cast();
                match avg.get_mut(i) {
                    Some(a) => a.add_assign(&p),
                    None => avg.push(p),
                }
            }
        }
        avg.iter()
            .map(|p| first.space().decode(&edit_distribution_of_probs(p)))
            .collect()
    }

    fn table(&self) -> &TransformTable {
        self.models[0].space().table()
    }

    fn forward_passes(&self) -> u64 {
        self.models[0].forward_passes()
    }

    fn max_len(&self) -> Option<usize> {
        Some(self.models[0].config().max_positions)
    }
}

fn edit_distribution_of_probs(p: &Tensor<f64>) -> Vec<usize> {
    (0..p.rows())
        .map(|r| {
            let row = p.row(r);
            (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub bucket_mean_length: f64,
    pub mean_ms: f64,
    pub mean_rounds: f64,
    pub mean_passes: f64,
    pub baseline_mean_ms: f64,
    /// Passes of the one-pass-per-output-token baseline; not part of the CSV.
    pub baseline_mean_passes: f64,
    pub sentences: usize,
}

pub const BENCH_CSV_HEADER: &str = "bucket_mean_length,mean_ms,mean_rounds,mean_passes,baseline_mean_ms";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.3},{:.4},{:.4},{:.4},{:.4}",
            r.bucket_mean_length, r.mean_ms, r.mean_rounds, r.mean_passes, r.baseline_mean_ms
        );
    }
    out
}

/// Times refinement of each sentence on its own, grouped into length
/// buckets by inner token count (`buckets` are inclusive upper bounds;
/// longer sentences are dropped). The baseline runs the encoder once per
/// output token over the growing output prefix, as an autoregressive
/// decoder would.
pub fn decode_latency_bench<T: Scalar>(
    model: &PieModel<T>,
    sentences: &[TokenSequence],
    buckets: &[usize],
    cfg: &InferenceConfig,
) -> Result<Vec<BenchRow>> {
    let mut bounds = buckets.to_vec();
    bounds.sort_unstable();
    bounds.dedup();
    let mut groups: Vec<Vec<&TokenSequence>> = vec![Vec::new(); bounds.len()];
    for s in sentences {
        if let Some(b) = bounds.iter().position(|&b| s.inner().len() <= b) {
            groups[b].push(s);
        }
    }
    let mut rows = Vec::new();
    for group in groups.into_iter().filter(|g| !g.is_empty()) {
        let n = group.len() as f64;
        let (mut ms, mut rounds, mut passes, mut base_ms, mut base_passes, mut len) =
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for s in group {
            len += s.inner().len() as f64;
            let before = model.forward_passes();
            let t = Instant::now();
            let (out, trace) = refine_iteratively(model, s, cfg)?;
            ms += t.elapsed().as_secs_f64() * 1e3;
            passes += (model.forward_passes() - before) as f64;
            rounds += trace.rounds_used as f64;

            let ids = model.vocab().encode(&out);
            let before = model.forward_passes();
            let t = Instant::now();
            let cap = model.config().max_positions;
            for k in 1..=ids.len() {
                model.forward_logits(&[ids[..k.min(cap)].to_vec()])?;
            }
            base_ms += t.elapsed().as_secs_f64() * 1e3;
            base_passes += (model.forward_passes() - before) as f64;
        }
        rows.push(BenchRow {
            bucket_mean_length: len / n,
            mean_ms: ms / n,
            mean_rounds: rounds / n,
            mean_passes: passes / n,
            baseline_mean_ms: base_ms / n,
            baseline_mean_passes: base_passes / n,
            sentences: n as usize,
        });
    }
    Ok(rows)
}
