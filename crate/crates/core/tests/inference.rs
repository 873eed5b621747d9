mod common;

use std::cell::Cell;

use common::*;
use pie_core::editspace::*;
use pie_core::inference::*;
use pie_core::piemodel::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rewrites every "a" to "b" and every "b" to "a", forever.
struct Flipper {
    table: TransformTable,
    passes: Cell<u64>,
}

impl EditPredictor for Flipper {
    fn predict_batch(&self, xs: &[TokenSequence]) -> pie_core::Result<Vec<EditSequence>> {
        self.passes.set(self.passes.get() + xs.len() as u64);
        Ok(xs
            .iter()
            .map(|x| {
                EditSequence::new(
                    x.tokens()
                        .iter()
                        .map(|t| match t.as_str() {
                            "a" => EditOp::Replace("b".into()),
                            "b" => EditOp::Replace("a".into()),
                            _ => EditOp::Copy,
                        })
                        .collect(),
                )
            })
            .collect())
    }

    fn table(&self) -> &TransformTable {
        &self.table
    }

    fn forward_passes(&self) -> u64 {
        self.passes.get()
    }
}

fn flipper() -> Flipper {
    Flipper {
        table: TransformTable::empty(),
        passes: Cell::new(0),
    }
}

#[test]
fn two_cycle_terminates_on_revisit() {
    let f = flipper();
    let x = words("a c b");
    let (out, trace) = refine_iteratively(&f, &x, &InferenceConfig::default()).unwrap();
    // x -> "b c a" -> x, which was seen.
    assert_eq!(trace.rounds_used, 2);
    assert_eq!(out, x);
    assert_eq!(f.forward_passes(), 2);
    assert!(trace.rounds.iter().all(|r| r.changed));
}

#[test]
fn round_cap_is_respected() {
    struct Grow(TransformTable);
    impl EditPredictor for Grow {
        fn predict_batch(&self, xs: &[TokenSequence]) -> pie_core::Result<Vec<EditSequence>> {
            Ok(xs
                .iter()
                .map(|x| {
                    let mut ops = vec![EditOp::Copy; x.len()];
                    ops[0] = EditOp::Append("z".into());
                    EditSequence::new(ops)
                })
                .collect())
        }
        fn table(&self) -> &TransformTable {
            &self.0
        }
        fn forward_passes(&self) -> u64 {
            0
        }
    }
    for cap in 1..=4 {
        let cfg = InferenceConfig {
            max_iterations: cap,
            ..InferenceConfig::default()
        };
        let (out, trace) = refine_iteratively(&Grow(TransformTable::empty()), &words("q"), &cfg).unwrap();
        assert_eq!(trace.rounds_used, cap);
        assert_eq!(out.inner().len(), 1 + cap);
    }
    let zero = InferenceConfig {
        max_iterations: 0,
        ..InferenceConfig::default()
    };
    assert!(refine_iteratively(&flipper(), &words("a"), &zero).is_err());
}

/// A model whose final hidden states are constant and whose copy score
/// dominates every other edit.
fn identity_model() -> PieModel<f64> {
    let mut m: PieModel<f64> = tiny_model(ModelConfig::tiny(), 0);
    let last = m.config().num_layers - 1;
    let params = m.params_mut();
    for p in params.iter_mut() {
        if p.name == format!("layer.{last}.ffn.ln.gain") {
            p.value.fill(0.0);
        } else if p.name == format!("layer.{last}.ffn.ln.bias") {
            p.value.fill(10.0);
        } else if p.name == "head.theta" {
            p.value.fill(0.0);
            p.value.row_mut(COPY_INDEX).fill(1.0);
        }
    }
    m
}

#[test]
fn identity_model_copies_everything_in_one_round() {
    let m = identity_model();
    for s in SENTENCES {
        let x = words(s);
        assert_eq!(predict_edits(&m, &x).unwrap(), EditSequence::all_copy(x.len()));
        let (out, trace) = refine_iteratively(&m, &x, &InferenceConfig::default()).unwrap();
        assert_eq!(out, x);
        assert_eq!(trace.rounds_used, 1);
        assert!(!trace.rounds[0].changed);
    }
}

fn random_sentence(n: usize, rng: &mut ChaCha8Rng) -> TokenSequence {
    let pool: Vec<&str> = SENTENCES.iter().flat_map(|s| s.split(' ')).collect();
    let w: Vec<&str> = (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    TokenSequence::wrap(&w, TokenMode::Word).unwrap()
}

fn long_model(seed: u64) -> PieModel<f32> {
    tiny_model(
        ModelConfig {
            max_positions: 128,
            ..ModelConfig::tiny()
        },
        seed,
    )
}

#[test]
fn passes_per_sentence_are_bounded_independent_of_length() {
    let m = long_model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = InferenceConfig::default();
    for n in [8, 16, 32, 64] {
        for _ in 0..5 {
            let x = random_sentence(n, &mut rng);
            let before = m.forward_passes();
            let (_, trace) = refine_iteratively(&m, &x, &cfg).unwrap();
            let passes = m.forward_passes() - before;
            assert_eq!(passes, trace.rounds_used as u64);
            assert!((1..=4).contains(&passes), "length {n}: {passes} passes");
        }
    }
}

#[test]
fn batched_refinement_matches_one_at_a_time() {
    let m = long_model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<TokenSequence> = (0..9).map(|i| random_sentence(3 + i, &mut rng)).collect();
    let cfg = InferenceConfig {
        batch_size: 4,
        ..InferenceConfig::default()
    };
    let batched = refine_batch(&m, &xs, &cfg).unwrap();
    for (x, b) in xs.iter().zip(&batched) {
        assert_eq!(&refine_iteratively(&m, x, &cfg).unwrap(), b);
    }
}

#[test]
fn trace_is_consistent_with_output() {
    let m = long_model(8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let x = random_sentence(6, &mut rng);
        let (out, trace) = refine_iteratively(&m, &x, &InferenceConfig::default()).unwrap();
        assert_eq!(trace.rounds.len(), trace.rounds_used);
        let mut prev = x.detokenize();
        for r in &trace.rounds {
            assert_eq!(r.changed, r.output != prev);
            prev = r.output.clone();
        }
        let last = trace.rounds.last().unwrap();
        // A final round that produced an already-seen sequence keeps it.
        assert_eq!(last.output, out.detokenize());
    }
}

#[test]
fn single_member_ensemble_equals_the_model() {
    let m = long_model(4);
    let e = Ensemble::new(vec![m.clone()]).unwrap();
    let xs: Vec<TokenSequence> = SENTENCES.iter().map(|s| words(s)).collect();
    assert_eq!(e.predict_batch(&xs).unwrap(), m.predict_batch(&xs).unwrap());
    assert!(Ensemble::<f32>::new(vec![]).is_err());
}

#[test]
fn overlong_output_settles_on_previous_sequence() {
    let m = tiny_model::<f32>(
        ModelConfig {
            max_positions: 8,
            ..ModelConfig::tiny()
        },
        0,
    );
    struct Grow<'a>(&'a PieModel<f32>, TransformTable);
    impl EditPredictor for Grow<'_> {
        fn predict_batch(&self, xs: &[TokenSequence]) -> pie_core::Result<Vec<EditSequence>> {
            Ok(xs
                .iter()
                .map(|x| {
                    let mut ops = vec![EditOp::Copy; x.len()];
                    ops[0] = EditOp::Append("a red".into());
                    EditSequence::new(ops)
                })
                .collect())
        }
        fn table(&self) -> &TransformTable {
            &self.1
        }
        fn forward_passes(&self) -> u64 {
            0
        }
        fn max_len(&self) -> Option<usize> {
            Some(self.0.config().max_positions)
        }
    }
    let g = Grow(&m, TransformTable::empty());
    let (out, trace) = refine_iteratively(&g, &words("x y"), &InferenceConfig::default()).unwrap();
    // 4 tokens -> 6 -> 8; the next round would need 10.
    assert_eq!(out.len(), 8);
    assert_eq!(trace.rounds_used, 3);
}

#[test]
fn bench_rows_have_the_expected_shape() {
    let m = long_model(6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let buckets = [8, 16, 32, 64];
    let sentences: Vec<TokenSequence> = buckets
        .iter()
        .flat_map(|&n| (0..3).map(|_| random_sentence(n, &mut rng)).collect::<Vec<_>>())
        .collect();
    let rows = decode_latency_bench(&m, &sentences, &buckets, &InferenceConfig::default()).unwrap();
    assert_eq!(rows.len(), 4);
    for (r, &n) in rows.iter().zip(&buckets) {
        assert_eq!(r.bucket_mean_length, n as f64);
        assert!(r.mean_passes <= 4.0);
        assert!(r.baseline_mean_passes >= n as f64);
    }
    for w in rows.windows(2) {
        assert!(w[1].baseline_mean_passes > w[0].baseline_mean_passes);
    }
    let csv = bench_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(BENCH_CSV_HEADER));
    assert_eq!(lines.count(), 4);
}
