//! Supervised training of the edit labeler and checkpoint files.

pub mod checkpoint;
pub mod loss;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::editspace::{EditSequence, TokenSequence};
use crate::error::{PieError, Result};
use crate::numcore::{adam_step_with_lr, AdamConfig, Graph, OptimizerState, Scalar};
use crate::piemodel::{HeadMode, PieModel};

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, verify_edit_space,
    Checkpoint, FORMAT_VERSION,
};
pub use loss::{edit_label_loss, edit_label_loss_node, loss_parts, LossParts};

/// Copy weight used for grammatical error correction.
pub const GEC_COPY_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub copy_weight: f64,
    pub seed: u64,
    pub head_mode: HeadMode,
    /// Linear warmup length in optimizer steps; 0 keeps the rate constant.
    pub warmup_steps: u64,
    /// Batches are formed from windows of this many batches sorted by length.
    pub bucket_window: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            batch_size: 64,
            learning_rate: adam.learning_rate,
            epochs: 1,
            copy_weight: GEC_COPY_WEIGHT,
            seed: 0,
            head_mode: HeadMode::Factorized,
            warmup_steps: 0,
            bucket_window: 50,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(PieError::Config("batch_size must be at least 1".into()));
        }
        if !(self.copy_weight > 0.0 && self.copy_weight <= 1.0) {
            return Err(PieError::Config(format!(
                "copy_weight {} outside (0, 1]",
                self.copy_weight
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PieError::Config("learning_rate must be positive".into()));
        }
        if self.bucket_window == 0 {
            return Err(PieError::Config("bucket_window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    fn rate_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64
        }
    }
}

/// A compiled training pair: source token ids and gold edit indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Maps (source, edits) pairs into model ids. Fails on the first edit the
/// model's edit space cannot represent.
pub fn compile_examples<T: Scalar>(
    model: &PieModel<T>,
    pairs: &[(TokenSequence, EditSequence)],
) -> Result<Vec<TrainExample>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (x, e))| {
            if x.len() != e.len() {
                return Err(PieError::MalformedEdits(format!(
                    "pair {i}: {} edits for {} tokens",
                    e.len(),
                    x.len()
                )));
            }
            let labels = model
                .space()
                .encode(e)
                .map_err(|err| PieError::VocabularyMismatch(format!("pair {i}: {err}")))?;
            Ok(TrainExample {
                ids: model.vocab().encode(x),
                labels,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean copy-weighted loss per position.
    pub loss: f64,
    /// Fraction of positions whose argmax equals the gold label.
    pub label_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// When set, a checkpoint is written here after every epoch as
    /// `epoch-{k}.ckpt`, plus `model.ckpt` for the latest one.
    pub out_dir: Option<PathBuf>,
    /// Keep optimizer moments in written checkpoints.
    pub save_optimizer: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub steps: u64,
}

/// Groups example indices into batches: shuffled, then sorted by length
/// inside windows so batches hold similar lengths, then shuffled again.
pub fn make_batches(
    examples: &[TrainExample],
    batch_size: usize,
    window: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size * window) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| examples[i].ids.len());
        batches.extend(chunk.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn write_epoch_checkpoint<T: Scalar>(
    dir: &Path,
    epoch: usize,
    model: &PieModel<T>,
    opt: Option<&OptimizerState<T>>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PieError::file(dir, e))?;
    let bytes = checkpoint_bytes(model, opt)?;
    crate::fsio::write_atomic(&dir.join(format!("epoch-{epoch}.ckpt")), &bytes)?;
    crate::fsio::write_atomic(&dir.join("model.ckpt"), &bytes)
}

/// Trains `model` in place. `on_epoch` sees each epoch's log and the model
/// as it finishes; returning `false` stops training after that epoch.
///
/// A non-finite loss or gradient aborts with a divergence error; the
/// parameters and checkpoints of the last completed epoch are kept.
pub fn train<T: Scalar>(
    model: &mut PieModel<T>,
    data: &[TrainExample],
    cfg: &TrainConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog, &PieModel<T>) -> Result<bool>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(PieError::InvalidInput("training corpus is empty".into()));
    }
    let width = model.space().len();
    for (i, ex) in data.iter().enumerate() {
        if ex.ids.len() != ex.labels.len() {
            return Err(PieError::MalformedEdits(format!("example {i}: label count differs")));
        }
        if let Some(&l) = ex.labels.iter().find(|&&l| l >= width) {
            return Err(PieError::VocabularyMismatch(format!(
                "example {i}: label {l} outside an edit space of {width}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new(model.params(), cfg.adam());
    let copy_weight = T::from_f64(cfg.copy_weight);
    let mut report = TrainReport {
        epochs: Vec::new(),
        steps: 0,
    };
    if cfg.epochs == 0 {
        if let Some(dir) = &opts.out_dir {
            write_epoch_checkpoint(dir, 0, model, None)?;
        }
        return Ok(report);
    }
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = make_batches(data, cfg.batch_size, cfg.bucket_window, &mut rng);
        let (mut loss_sum, mut positions, mut correct) = (0.0f64, 0usize, 0usize);
        for batch in batches {
            let ids: Vec<Vec<usize>> = batch.iter().map(|&i| data[i].ids.clone()).collect();
            let gold: Vec<usize> = batch.iter().flat_map(|&i| data[i].labels.iter().copied()).collect();
            let grads = {
                let mut g = Graph::new(model.params());
                let enc = model.encode(&mut g, &ids, Some(&mut rng))?;
                let logits = model.logits(&mut g, &enc)?;
                let loss = edit_label_loss_node(&mut g, logits, &gold, copy_weight)?;
                let lv = g.value(loss).item().to_f64();
                if !lv.is_finite() {
                    return Err(PieError::Divergence(format!("loss at epoch {epoch}")));
                }
                let lt = g.value(logits);
                for (r, &gl) in gold.iter().enumerate() {
                    let row = lt.row(r);
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    correct += usize::from(best == gl);
                }
                loss_sum += lv;
                positions += gold.len();
                g.backward(loss)?
            };
            let params = model.params_mut();
            params.zero_grads();
            params.accumulate(&grads);
            let lr = cfg.rate_at(state.step);
            adam_step_with_lr(params, &mut state, lr)?;
            report.steps += 1;
        }
        let log = EpochLog {
            epoch,
            loss: loss_sum / positions.max(1) as f64,
            label_accuracy: correct as f64 / positions.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(dir) = &opts.out_dir {
            let opt = opts.save_optimizer.then_some(&state);
            write_epoch_checkpoint(dir, epoch, model, opt)?;
        }
        let go_on = on_epoch(&log, model)?;
        report.epochs.push(log);
        if !go_on {
            break;
        }
    }
    Ok(report)
}

/// Finite-difference check of the training loss gradient for every
/// parameter of `model`, on one batch with the given gold labels.
pub fn model_grad_check(
    model: &PieModel<f64>,
    batch: &[Vec<usize>],
    gold: &[usize],
    copy_weight: f64,
    cfg: &crate::numcore::GradCheckConfig,
) -> Result<crate::numcore::GradCheckReport> {
    let mut store = model.params().clone();
    crate::numcore::grad_check(
        &mut store,
        |p| {
            let mut g = Graph::new(p);
            let enc = model.encode(&mut g, batch, None)?;
            let logits = model.logits(&mut g, &enc)?;
            let loss = edit_label_loss_node(&mut g, logits, gold, copy_weight)?;
            Ok((g.value(loss).item(), g.backward(loss)?))
        },
        cfg,
    )
}
