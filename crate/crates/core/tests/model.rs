mod common;

use common::*;
use pie_core::editspace::EditOp;
use pie_core::numcore::*;
use pie_core::piemodel::*;
use pie_core::PieError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

fn param(model: &PieModel<f64>, name: &str) -> M {
    let t = &model.params().by_name(name).unwrap().value;
    if t.shape().len() == 1 {
        return vec![t.data().to_vec()];
    }
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn matmul(x: &M, w: &M, b: &[f64]) -> M {
    x.iter()
        .map(|row| {
            (0..w[0].len())
                .map(|j| b[j] + row.iter().zip(w).map(|(a, wr)| a * wr[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &M, g: &[f64], b: &[f64]) -> M {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + 1e-12).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * inv * g[j] + b[j])
                .collect()
        })
        .collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Scalar-loop encoder over `[h, r, a]` rows with explicit visibility sets.
fn reference_encoder(model: &PieModel<f64>, ids: &[usize]) -> (M, M, M) {
    let cfg = model.config();
    let (n, d, heads) = (ids.len(), cfg.hidden_size, cfg.num_heads);
    let tok = param(model, "embeddings.token");
    let pos = param(model, "embeddings.position");
    let mut x: M = Vec::new();
    for (i, &t) in ids.iter().enumerate() {
        x.push((0..d).map(|c| tok[t][c] + pos[i][c]).collect());
    }
    for i in 0..n {
        x.push((0..d).map(|c| tok[MASK_ID][c] + pos[i][c]).collect());
    }
    for i in 0..n {
        let p: Vec<f64> = if i + 1 < n {
            (0..d).map(|c| 0.5 * pos[i][c] + 0.5 * pos[i + 1][c]).collect()
        } else {
            pos[i].clone()
        };
        x.push((0..d).map(|c| tok[MASK_ID][c] + p[c]).collect());
    }
    // Visible keys per row, written out from the stream rules.
    let visible = |row: usize| -> Vec<usize> {
        let (stream, i) = (row / n, row % n);
        match stream {
            0 => (0..n).collect(),
            1 => (0..n).filter(|&j| j != i).chain([n + i]).collect(),
            _ => (0..n).chain([2 * n + i]).collect(),
        }
    };
    let g = |name: &str| param(model, name)[0].clone();
    x = layer_norm(&x, &g("embeddings.ln.gain"), &g("embeddings.ln.bias"));
    let dh = d / heads;
    for l in 0..cfg.num_layers {
        let p = |s: &str| format!("layer.{l}.{s}");
        let qkv = matmul(&x, &param(model, &p("attn.qkv.weight")), &g(&p("attn.qkv.bias")));
        let mut att = vec![vec![0.0; d]; 3 * n];
        for row in 0..3 * n {
            for h in 0..heads {
                let keys = visible(row);
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|&k| {
                        (0..dh)
                            .map(|c| qkv[row][h * dh + c] * qkv[k][d + h * dh + c])
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for (s, &k) in scores.iter().zip(&keys) {
                    let w = (s - max).exp() / z;
                    for c in 0..dh {
                        att[row][h * dh + c] += w * qkv[k][2 * d + h * dh + c];
                    }
                }
            }
        }
        let o = matmul(&att, &param(model, &p("attn.out.weight")), &g(&p("attn.out.bias")));
        x = layer_norm(&add(&x, &o), &g(&p("attn.ln.gain")), &g(&p("attn.ln.bias")));
        let mut f = matmul(&x, &param(model, &p("ffn.in.weight")), &g(&p("ffn.in.bias")));
        for row in f.iter_mut() {
            for v in row.iter_mut() {
                *v = 0.5 * *v * (1.0 + libm::erf(*v / std::f64::consts::SQRT_2));
            }
        }
        let f = matmul(&f, &param(model, &p("ffn.out.weight")), &g(&p("ffn.out.bias")));
        x = layer_norm(&add(&x, &f), &g(&p("ffn.ln.gain")), &g(&p("ffn.ln.bias")));
    }
    let a = x.split_off(2 * n);
    let r = x.split_off(n);
    (x, r, a)
}

fn randomize(model: &mut PieModel<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut().iter_mut() {
        let gain = p.name.ends_with(".gain");
        for v in p.value.data_mut() {
            let u: f64 = rng.random_range(-scale..scale);
            *v = if gain { 1.0 + u } else { u };
        }
    }
}

fn close(t: &Tensor<f64>, m: &M, tol: f64) -> bool {
    m.iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, v)| (t.at(i, j) - v).abs() < tol))
}

#[test]
fn encoder_matches_scalar_reference_on_three_tokens() {
    let cfg = ModelConfig {
        num_layers: 2,
        hidden_size: 8,
        intermediate_size: 12,
        num_heads: 2,
        ..ModelConfig::tiny()
    };
    let mut model = tiny_model::<f64>(cfg, 1);
    randomize(&mut model, 2, 0.5);
    let ids = vec![START_ID, model.vocab().id("cat"), END_ID];
    let state = model.encoder_state(&ids).unwrap();
    let (h, r, a) = reference_encoder(&model, &ids);
    assert!(close(&state.h, &h, 1e-10));
    assert!(close(&state.r, &r, 1e-10));
    assert!(close(&state.a, &a, 1e-10));
}

#[test]
fn single_token_sequence_encodes() {
    let mut model = tiny_model::<f64>(ModelConfig::tiny(), 3);
    randomize(&mut model, 4, 0.3);
    let state = model.encoder_state(&[START_ID]).unwrap();
    let (h, r, a) = reference_encoder(&model, &[START_ID]);
    assert!(close(&state.h, &h, 1e-10) && close(&state.r, &r, 1e-10) && close(&state.a, &a, 1e-10));
}

#[test]
fn too_long_input_is_rejected() {
    let model = tiny_model::<f32>(ModelConfig::tiny(), 0);
    let ids = vec![START_ID; 33];
    assert!(matches!(
        model.forward_logits(&[ids]),
        Err(PieError::InputTooLong { len: 33, max: 32 })
    ));
}

#[test]
fn token_states_ignore_edit_unit_inputs() {
    let model = tiny_model::<f32>(ModelConfig::tiny(), 5);
    let ids: Vec<usize> = model.vocab().encode(&words("the cat sat on mat"));
    let n = ids.len();
    let batch = vec![ids.clone()];
    let run = |fill: &dyn Fn(usize) -> f32| {
        let mut g = Graph::new(model.params());
        let x0 = model.embed(&mut g, &batch, true).unwrap();
        let mut t = g.value(x0).clone();
        for r in n..3 * n {
            for (c, v) in t.row_mut(r).iter_mut().enumerate() {
                *v = fill(r * 100 + c);
            }
        }
        let x = g.input(t);
        let enc = model.encode_rows(&mut g, x, &batch, true, None).unwrap();
        g.value(enc.h).clone()
    };
    let zeroed = run(&|_| 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise: Vec<f32> = (0..100 * 3 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let randomized = run(&|k| noise[k]);
    let plain = model.encode_plain(&ids).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&zeroed), bits(&randomized));
    assert_eq!(bits(&zeroed), bits(&plain));
}

#[test]
fn head_is_the_only_extra_parameter() {
    let cfg = ModelConfig::tiny();
    let model = tiny_model::<f32>(cfg.clone(), 0);
    let enc_only: usize = parameter_layout(model.config())
        .iter()
        .filter(|(n, _)| !n.starts_with("head."))
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    let extra = model.params().num_scalars() - enc_only;
    assert_eq!(extra, model.space().len() * cfg.hidden_size);
    let names: Vec<&str> = model
        .params()
        .iter()
        .map(|(_, p)| p.name.as_str())
        .filter(|n| n.starts_with("head."))
        .collect();
    assert_eq!(names, vec!["head.theta"]);
}

#[test]
fn edit_space_size_formula() {
    let model = tiny_model::<f32>(ModelConfig::tiny(), 0);
    assert_eq!(model.space().len(), 2 + 60 + 2 * 3);
    assert_eq!(model.config().edit_space_size(), model.space().len());
}

fn phi(model: &PieModel<f64>, ids: &[usize]) -> Vec<f64> {
    let tok = &model.params().by_name("embeddings.token").unwrap().value;
    let mut v = vec![0.0; tok.cols()];
    for &i in ids {
        for (a, b) in v.iter_mut().zip(tok.row(i)) {
            *a += b;
        }
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn factorized_logits_match_scalar_formula() {
    let cfg = ModelConfig {
        num_layers: 1,
        hidden_size: 4,
        intermediate_size: 8,
        num_heads: 2,
        ..ModelConfig::tiny()
    };
    let mut model = tiny_model::<f64>(cfg, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..100 {
        randomize(&mut model, case, 1.0);
        let len = rng.random_range(1..6);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..model.vocab().len())).collect();
        let logits = model.forward_logits(std::slice::from_ref(&ids)).unwrap().remove(0);
        let state = model.encoder_state(&ids).unwrap();
        let theta = &model.params().by_name("head.theta").unwrap().value;
        let space = model.space();
        for i in 0..len {
            let (h, r, a) = (state.h.row(i), state.r.row(i), state.a.row(i));
            let px = phi(&model, &[ids[i]]);
            for e in 0..space.len() {
                let base = dot(theta.row(e), h);
                let expected = match space.op_at(e).unwrap() {
                    EditOp::Copy | EditOp::Transform(_) => base + dot(&px, h),
                    EditOp::Delete => base,
                    EditOp::Append(w) => {
                        let pw = phi(&model, &model.vocab().encode_payload(&w, space.mode()));
                        base + dot(&px, h) + dot(&pw, a)
                    }
                    EditOp::Replace(w) => {
                        let pw = phi(&model, &model.vocab().encode_payload(&w, space.mode()));
                        let diff: Vec<f64> = pw.iter().zip(&px).map(|(p, q)| p - q).collect();
                        base + dot(&diff, r)
                    }
                };
                let got = logits.at(i, e);
                let rel = (got - expected).abs() / expected.abs().max(1e-8);
                assert!(rel < 1e-6 || (got - expected).abs() < 1e-12, "case {case} {i} {e}");
            }
        }
    }
}

#[test]
fn zero_theta_and_orthogonal_input_zero_the_copy_family() {
    let cfg = ModelConfig {
        hidden_size: 4,
        num_heads: 1,
        intermediate_size: 4,
        num_layers: 1,
        ..ModelConfig::tiny()
    };
    let mut model = tiny_model::<f64>(cfg, 0);
    // Zero token rows make every phi(x) orthogonal to h.
    for p in model.params_mut().iter_mut() {
        if p.name == "head.theta" || p.name == "embeddings.token" {
            p.value.fill(0.0);
        }
    }
    let logits = model.forward_logits(&[vec![START_ID, 5, END_ID]]).unwrap().remove(0);
    for i in 0..3 {
        for e in 0..2 + 60 {
            assert_eq!(logits.at(i, e), 0.0);
        }
    }
}

#[test]
fn replace_with_own_token_leaves_theta_term() {
    let cfg = ModelConfig {
        hidden_size: 4,
        num_heads: 2,
        intermediate_size: 8,
        num_layers: 1,
        ..ModelConfig::tiny()
    };
    let mut model = tiny_model::<f64>(cfg, 0);
    randomize(&mut model, 11, 1.0);
    let the = model.vocab().id("the");
    let ids = vec![START_ID, the, END_ID];
    let logits = model.forward_logits(std::slice::from_ref(&ids)).unwrap().remove(0);
    let state = model.encoder_state(&ids).unwrap();
    let e = model.space().index_of(&EditOp::Replace("the".into())).unwrap();
    let theta = &model.params().by_name("head.theta").unwrap().value;
    assert!((logits.at(1, e) - dot(theta.row(e), state.h.row(1))).abs() < 1e-12);
}

#[test]
fn default_head_with_zero_weights_is_uniform() {
    let cfg = ModelConfig {
        head: HeadMode::Default,
        ..ModelConfig::tiny()
    };
    let mut model = tiny_model::<f64>(cfg, 0);
    for p in model.params_mut().iter_mut() {
        if p.name == "head.w" {
            p.value.fill(0.0);
        }
    }
    let logits = model.forward_logits(&[vec![START_ID, 7, END_ID]]).unwrap().remove(0);
    let d = edit_distribution(&logits);
    let u = 1.0 / model.space().len() as f64;
    assert!(d.probs.data().iter().all(|p| (p - u).abs() < 1e-12));
}

#[test]
fn default_head_single_row_by_hand() {
    let cfg = ModelConfig {
        head: HeadMode::Default,
        hidden_size: 4,
        num_heads: 1,
        intermediate_size: 4,
        num_layers: 1,
        ..ModelConfig::tiny()
    };
    let mut model = tiny_model::<f64>(cfg, 4);
    randomize(&mut model, 5, 0.7);
    let ids = vec![START_ID];
    let logits = model.forward_logits(std::slice::from_ref(&ids)).unwrap().remove(0);
    let h = model.encoder_state(&ids).unwrap().h;
    let w = &model.params().by_name("head.w").unwrap().value;
    for e in 0..model.space().len() {
        assert!((logits.at(0, e) - dot(w.row(e), h.row(0))).abs() < 1e-12);
    }
    let d = edit_distribution(&logits);
    let sum: f64 = d.probs.row(0).iter().sum();
    assert!((sum - 1.0).abs() < 1e-6);
}

#[test]
fn argmax_is_shift_invariant() {
    let model = tiny_model::<f32>(ModelConfig::tiny(), 8);
    let ids = model.vocab().encode(&words("he plays with the ball"));
    let logits = model.forward_logits(&[ids]).unwrap().remove(0);
    let base = edit_distribution(&logits).argmax;
    let mut shifted = logits.clone();
    for r in 0..shifted.rows() {
        let c = (r as f32 + 1.0) * 4.0;
        shifted.row_mut(r).iter_mut().for_each(|v| *v += c);
    }
    assert_eq!(edit_distribution(&shifted).argmax, base);
}

#[test]
fn batched_logits_match_single_runs() {
    let model = tiny_model::<f32>(ModelConfig::tiny(), 6);
    let batch: Vec<Vec<usize>> = SENTENCES.iter().map(|s| model.vocab().encode(&words(s))).collect();
    let together = model.forward_logits(&batch).unwrap();
    for (ids, t) in batch.iter().zip(&together) {
        let alone = model.forward_logits(std::slice::from_ref(ids)).unwrap().remove(0);
        assert!(alone.max_abs_diff(t) < 1e-5);
    }
    assert_eq!(model.forward_passes(), 2 * batch.len() as u64);
}

fn model_grad_check(head: HeadMode) -> GradCheckReport {
    let cfg = ModelConfig {
        head,
        ..ModelConfig::tiny()
    };
    let mut model = tiny_model::<f64>(cfg, 12);
    randomize(&mut model, 13, 0.3);
    let batch: Vec<Vec<usize>> = SENTENCES[..3].iter().map(|s| model.vocab().encode(&words(s))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let gold: Vec<usize> = batch
        .iter()
        .flatten()
        .map(|_| if rng.random_bool(0.5) { 0 } else { rng.random_range(0..model.space().len()) })
        .collect();
    let is_copy: Vec<bool> = gold.iter().map(|&g| g == 0).collect();
    let mut store = model.params().clone();
    grad_check(
        &mut store,
        |p| {
            let mut g = Graph::new(p);
            let enc = model.encode(&mut g, &batch, None)?;
            let logits = model.logits(&mut g, &enc)?;
            let loss = g.cross_entropy(
                logits,
                std::sync::Arc::new(gold.clone()),
                std::sync::Arc::new(is_copy.clone()),
                0.4,
            )?;
            Ok((g.value(loss).item(), g.backward(loss)?))
        },
        &GradCheckConfig::default(),
    )
    .unwrap()
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    let r = model_grad_check(HeadMode::Factorized);
    assert!(r.passed(1e-4), "{:?}", r.failures(1e-4));
    let r = model_grad_check(HeadMode::Default);
    assert!(r.passed(1e-4), "{:?}", r.failures(1e-4));
}
