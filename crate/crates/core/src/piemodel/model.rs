use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{HeadMode, ModelConfig};
use super::space::EditSpace;
use super::vocab::{Vocab, MASK_ID};
use crate::error::{PieError, Result};
use crate::numcore::{
    AttentionSegment, ColSlice, GatherRows, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor,
};

#[derive(Debug, Clone)]
struct LayerIds {
    qkv_w: ParamId,
    qkv_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    attn_ln_g: ParamId,
    attn_ln_b: ParamId,
    ffn_in_w: ParamId,
    ffn_in_b: ParamId,
    ffn_out_w: ParamId,
    ffn_out_b: ParamId,
    ffn_ln_g: ParamId,
    ffn_ln_b: ParamId,
}

#[derive(Debug, Clone)]
struct ParamIds {
    token: ParamId,
    position: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<LayerIds>,
    head: ParamId,
}

/// Parameter names and shapes, in creation order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, i) = (cfg.hidden_size, cfg.intermediate_size);
    let mut out = vec![
        ("embeddings.token".to_string(), vec![cfg.token_vocab_size, d]),
        ("embeddings.position".to_string(), vec![cfg.max_positions, d]),
        ("embeddings.ln.gain".to_string(), vec![d]),
        ("embeddings.ln.bias".to_string(), vec![d]),
    ];
    for l in 0..cfg.num_layers {
        let p = |s: &str| format!("layer.{l}.{s}");
        out.extend([
            (p("attn.qkv.weight"), vec![d, 3 * d]),
            (p("attn.qkv.bias"), vec![3 * d]),
            (p("attn.out.weight"), vec![d, d]),
            (p("attn.out.bias"), vec![d]),
            (p("attn.ln.gain"), vec![d]),
            (p("attn.ln.bias"), vec![d]),
            (p("ffn.in.weight"), vec![d, i]),
            (p("ffn.in.bias"), vec![i]),
            (p("ffn.out.weight"), vec![i, d]),
            (p("ffn.out.bias"), vec![d]),
            (p("ffn.ln.gain"), vec![d]),
            (p("ffn.ln.bias"), vec![d]),
        ]);
    }
    out.push((head_name(cfg.head).to_string(), vec![cfg.edit_space_size(), d]));
    out
}

fn head_name(mode: HeadMode) -> &'static str {
    match mode {
        HeadMode::Factorized => "head.theta",
        HeadMode::Default => "head.w",
    }
}

/// Row mask for one example laid out as `[h_0..h_n, r_0..r_n, a_0..a_n]`.
///
/// Token states see only token states. A replace unit sees every token
/// state except its own position, plus itself. An append unit sees every
/// token state plus itself.
pub fn edit_unit_mask(n: usize) -> Vec<bool> {
    let w = 3 * n;
    let mut m = vec![false; w * w];
    for i in 0..n {
        for j in 0..n {
            m[i * w + j] = true;
            m[(n + i) * w + j] = j != i;
            m[(2 * n + i) * w + j] = true;
        }
        m[(n + i) * w + n + i] = true;
        m[(2 * n + i) * w + 2 * n + i] = true;
    }
    m
}

/// Graph nodes produced by one encoder pass over a batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Token states of all examples stacked, `[N, hidden]`.
    pub h: NodeId,
    /// Replace and append units, present when the pass ran with edit units.
    pub r: Option<NodeId>,
    pub a: Option<NodeId>,
    /// Token ids of all examples stacked, matching the rows of `h`.
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
}

/// Final-layer states of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState<T> {
    pub h: Tensor<T>,
    pub r: Tensor<T>,
    pub a: Tensor<T>,
}

/// The edit labeler: token embeddings, a post-LN transformer encoder shared
/// by the token, replace and append streams, and an edit-scoring head.
pub struct PieModel<T: Scalar = f32> {
    config: ModelConfig,
    vocab: Vocab,
    space: EditSpace,
    params: ParamStore<T>,
    ids: ParamIds,
    insert_rows: GatherRows<T>,
    passes: AtomicU64,
}

impl<T: Scalar> Clone for PieModel<T> {
    fn clone(&self) -> Self {
        PieModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            space: self.space.clone(),
            params: self.params.clone(),
            ids: self.ids.clone(),
            insert_rows: self.insert_rows.clone(),
            passes: AtomicU64::new(0),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for PieModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PieModel")
            .field("config", &self.config)
            .field("vocab", &self.vocab.len())
            .field("edits", &self.space.len())
            .finish()
    }
}

impl<T: Scalar> PieModel<T> {
    /// Builds a randomly initialized model. Sizes that depend on the
    /// vocabulary and edit space are taken from them.
    pub fn new(mut config: ModelConfig, vocab: Vocab, space: EditSpace, seed: u64) -> Result<Self> {
        config.token_vocab_size = vocab.len();
        config.num_inserts = space.dictionary().len();
        config.num_transforms = space.table().len();
        config.token_mode = space.mode();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_range)
            .map_err(|e| PieError::Config(format!("init range: {e}")))?;
        let mut params = ParamStore::new();
        for (name, shape) in parameter_layout(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = if name.ends_with(".gain") {
                vec![T::one(); n]
            } else if name.ends_with(".bias") {
                vec![T::zero(); n]
            } else {
                (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect()
            };
            params.add(name, Tensor::new(shape, data)?)?;
        }
        Self::from_parts(config, vocab, space, params)
    }

    /// Assembles a model from existing parameters, checking names and shapes.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocab,
        space: EditSpace,
        params: ParamStore<T>,
    ) -> Result<Self> {
        config.validate()?;
        if config.token_vocab_size != vocab.len()
            || config.num_inserts != space.dictionary().len()
            || config.num_transforms != space.table().len()
        {
            return Err(PieError::VocabularyMismatch(format!(
                "config expects {} tokens, {} inserts, {} transforms; got {}, {}, {}",
                config.token_vocab_size,
                config.num_inserts,
                config.num_transforms,
                vocab.len(),
                space.dictionary().len(),
                space.table().len()
            )));
        }
        let layout = parameter_layout(&config);
        if layout.len() != params.len() {
            return Err(PieError::ShapeMismatch {
                op: "model",
                detail: format!("expected {} parameters, got {}", layout.len(), params.len()),
            });
        }
        for (name, shape) in &layout {
            let p = params.by_name(name).ok_or_else(|| PieError::ShapeMismatch {
                op: "model",
                detail: format!("missing parameter {name}"),
            })?;
            if p.value.shape() != shape.as_slice() {
                return Err(PieError::ShapeMismatch {
                    op: "model",
                    detail: format!("{name}: expected {shape:?}, got {:?}", p.value.shape()),
                });
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let ids = ParamIds {
            token: id("embeddings.token"),
            position: id("embeddings.position"),
            emb_ln_g: id("embeddings.ln.gain"),
            emb_ln_b: id("embeddings.ln.bias"),
            layers: (0..config.num_layers)
                .map(|l| {
                    let p = |s: &str| id(&format!("layer.{l}.{s}"));
                    LayerIds {
                        qkv_w: p("attn.qkv.weight"),
                        qkv_b: p("attn.qkv.bias"),
                        out_w: p("attn.out.weight"),
                        out_b: p("attn.out.bias"),
                        attn_ln_g: p("attn.ln.gain"),
                        attn_ln_b: p("attn.ln.bias"),
                        ffn_in_w: p("ffn.in.weight"),
                        ffn_in_b: p("ffn.in.bias"),
                        ffn_out_w: p("ffn.out.weight"),
                        ffn_out_b: p("ffn.out.bias"),
                        ffn_ln_g: p("ffn.ln.gain"),
                        ffn_ln_b: p("ffn.ln.bias"),
                    }
                })
                .collect(),
            head: id(head_name(config.head)),
        };
        let mode = space.mode();
        let insert_rows = Arc::new(
            space
                .dictionary()
                .entries()
                .iter()
                .map(|(w, _)| {
                    vocab
                        .encode_payload(w, mode)
                        .into_iter()
                        .map(|t| (t, T::one()))
                        .collect()
                })
                .collect(),
        );
        Ok(PieModel {
            config,
            vocab,
            space,
            params,
            ids,
            insert_rows,
            passes: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn space(&self) -> &EditSpace {
        &self.space
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Number of sentences run through the encoder for prediction so far.
    pub fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn reset_forward_passes(&self) {
        self.passes.store(0, Ordering::Relaxed);
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> PieModel<U> {
        PieModel::from_parts(
            self.config.clone(),
            self.vocab.clone(),
            self.space.clone(),
            self.params.cast(),
        )
        .expect("casting keeps names and shapes")
    }

    fn check_lengths(&self, batch: &[Vec<usize>]) -> Result<()> {
        for ids in batch {
            if ids.is_empty() {
                return Err(PieError::InvalidInput("empty sequence".into()));
            }
            if ids.len() > self.config.max_positions {
                return Err(PieError::InputTooLong {
                    len: ids.len(),
                    max: self.config.max_positions,
                });
            }
            if let Some(&bad) = ids.iter().find(|&&t| t >= self.vocab.len()) {
                return Err(PieError::InvalidInput(format!("token id {bad} out of range")));
            }
        }
        Ok(())
    }

    /// Input rows before the first layer: token plus position for token
    /// states, the mask embedding plus a position for edit units. Append
    /// units take the mean of their own and the next position, or their own
    /// alone at the last index.
    pub fn embed(&self, g: &mut Graph<T>, batch: &[Vec<usize>], units: bool) -> Result<NodeId> {
        self.check_lengths(batch)?;
        let one = T::one();
        let half = T::from_f64(0.5);
        let mut tok_rows: Vec<Vec<(usize, T)>> = Vec::new();
        let mut pos_rows: Vec<Vec<(usize, T)>> = Vec::new();
        for ids in batch {
            let n = ids.len();
            for (i, &t) in ids.iter().enumerate() {
                tok_rows.push(vec![(t, one)]);
                pos_rows.push(vec![(i, one)]);
            }
            if units {
                for i in 0..n {
                    tok_rows.push(vec![(MASK_ID, one)]);
                    pos_rows.push(vec![(i, one)]);
                }
                for i in 0..n {
                    tok_rows.push(vec![(MASK_ID, one)]);
                    if i + 1 < n {
                        pos_rows.push(vec![(i, half), (i + 1, half)]);
                    } else {
                        pos_rows.push(vec![(i, one)]);
                    }
                }
            }
        }
        let tok = g.param(self.ids.token);
        let pos = g.param(self.ids.position);
        let xt = g.gather(tok, Arc::new(tok_rows))?;
        let xp = g.gather(pos, Arc::new(pos_rows))?;
        g.add(xt, xp)
    }

    /// Runs the encoder layers over embedded rows and splits the streams.
    pub fn encode_rows(
        &self,
        g: &mut Graph<T>,
        x0: NodeId,
        batch: &[Vec<usize>],
        units: bool,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded> {
        let cfg = &self.config;
        let d = cfg.hidden_size;
        let streams = if units { 3 } else { 1 };
        let lengths: Vec<usize> = batch.iter().map(Vec::len).collect();
        let total: usize = lengths.iter().map(|n| n * streams).sum();
        if g.value(x0).rows() != total || g.value(x0).cols() != d {
            return Err(PieError::ShapeMismatch {
                op: "encoder",
                detail: format!("input {:?} for {total} rows", g.value(x0).shape()),
            });
        }

        let mut masks: HashMap<usize, Arc<Vec<bool>>> = HashMap::new();
        let mut segments = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for &n in &lengths {
            let mask = masks
                .entry(n)
                .or_insert_with(|| {
                    Arc::new(if units {
                        edit_unit_mask(n)
                    } else {
                        vec![true; n * n]
                    })
                })
                .clone();
            segments.push(AttentionSegment {
                offset,
                len: n * streams,
                mask,
            });
            offset += n * streams;
        }
        let segments = Arc::new(segments);

        let p = cfg.dropout;
        let mut drop = |g: &mut Graph<T>, x: NodeId| -> Result<NodeId> {
            match dropout.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let keep = T::from_f64(1.0 / (1.0 - p));
                    let mask = (0..g.value(x).len())
                        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                        .collect();
                    g.dropout(x, mask)
                }
                _ => Ok(x),
            }
        };

        let (lg, lb) = (g.param(self.ids.emb_ln_g), g.param(self.ids.emb_ln_b));
        let x = g.layer_norm(x0, lg, lb)?;
        let mut x = drop(g, x)?;
        for l in &self.ids.layers {
            let w = g.param(l.qkv_w);
            let b = g.param(l.qkv_b);
            let qkv = g.matmul(x, w)?;
            let qkv = g.add_bias(qkv, b)?;
            let att = g.masked_attention(
                ColSlice { node: qkv, offset: 0 },
                ColSlice { node: qkv, offset: d },
                ColSlice {
                    node: qkv,
                    offset: 2 * d,
                },
                d,
                cfg.num_heads,
                segments.clone(),
            )?;
            let w = g.param(l.out_w);
            let b = g.param(l.out_b);
            let o = g.matmul(att, w)?;
            let o = g.add_bias(o, b)?;
            let o = drop(g, o)?;
            let res = g.add(x, o)?;
            let (lg, lb) = (g.param(l.attn_ln_g), g.param(l.attn_ln_b));
            x = g.layer_norm(res, lg, lb)?;

            let w = g.param(l.ffn_in_w);
            let b = g.param(l.ffn_in_b);
            let f = g.matmul(x, w)?;
            let f = g.add_bias(f, b)?;
            let f = g.gelu(f);
            let w = g.param(l.ffn_out_w);
            let b = g.param(l.ffn_out_b);
            let f = g.matmul(f, w)?;
            let f = g.add_bias(f, b)?;
            let f = drop(g, f)?;
            let res = g.add(x, f)?;
            let (lg, lb) = (g.param(l.ffn_ln_g), g.param(l.ffn_ln_b));
            x = g.layer_norm(res, lg, lb)?;
        }

        // Split the packed rows into per-stream matrices.
        let one = T::one();
        let mut picks: [Vec<Vec<(usize, T)>>; 3] = Default::default();
        let mut offset = 0;
        for &n in &lengths {
            for (s, rows) in picks.iter_mut().enumerate().take(streams) {
                rows.extend((0..n).map(|i| vec![(offset + s * n + i, one)]));
            }
            offset += n * streams;
        }
        let [ph, pr, pa] = picks;
        let h = g.gather(x, Arc::new(ph))?;
        let (r, a) = if units {
            (
                Some(g.gather(x, Arc::new(pr))?),
                Some(g.gather(x, Arc::new(pa))?),
            )
        } else {
            (None, None)
        };
        Ok(Encoded {
            h,
            r,
            a,
            ids: batch.iter().flatten().copied().collect(),
            lengths,
        })
    }

    /// Embeds and encodes a batch. Edit units are included when the head needs them.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        batch: &[Vec<usize>],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded> {
        let units = self.config.head == HeadMode::Factorized;
        let x0 = self.embed(g, batch, units)?;
        self.encode_rows(g, x0, batch, units, dropout)
    }

    /// Edit logits `[N, |E|]` for an encoded batch.
    pub fn logits(&self, g: &mut Graph<T>, enc: &Encoded) -> Result<NodeId> {
        let head = g.param(self.ids.head);
        let theta = g.matmul_t(enc.h, false, head, true)?;
        match self.config.head {
            HeadMode::Default => Ok(theta),
            HeadMode::Factorized => {
                let (r, a) = match (enc.r, enc.a) {
                    (Some(r), Some(a)) => (r, a),
                    _ => {
                        return Err(PieError::InvalidState(
                            "factorized head needs replace and append units".into(),
                        ))
                    }
                };
                let tok = g.param(self.ids.token);
                let phi_x = g.embedding_lookup(tok, &enc.ids)?;
                let copy = g.row_dot(phi_x, enc.h)?;
                let replace_src = g.row_dot(phi_x, r)?;
                let (append, replace) = if self.insert_rows.is_empty() {
                    let z = g.input(Tensor::zeros(&[enc.ids.len(), 0]));
                    (z, z)
                } else {
                    let phi_w = g.gather(tok, self.insert_rows.clone())?;
                    (
                        g.matmul_t(a, false, phi_w, true)?,
                        g.matmul_t(r, false, phi_w, true)?,
                    )
                };
                g.edit_logits(theta, copy, append, replace, replace_src, self.space.layout())
            }
        }
    }

    /// Inference logits, one `[n, |E|]` tensor per sequence.
    pub fn forward_logits(&self, batch: &[Vec<usize>]) -> Result<Vec<Tensor<T>>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, batch, None)?;
        let logits = self.logits(&mut g, &enc)?;
        self.passes.fetch_add(batch.len() as u64, Ordering::Relaxed);
        Ok(split_rows(g.value(logits), &enc.lengths))
    }

    /// Most probable edit index per position, for each sequence.
    pub fn predict_indices(&self, batch: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        Ok(self
            .forward_logits(batch)?
            .iter()
            .map(|l| edit_distribution(l).argmax)
            .collect())
    }

    /// Final token, replace and append states for one sequence.
    pub fn encoder_state(&self, ids: &[usize]) -> Result<EncoderState<T>> {
        let batch = [ids.to_vec()];
        let mut g = Graph::new(&self.params);
        let x0 = self.embed(&mut g, &batch, true)?;
        let enc = self.encode_rows(&mut g, x0, &batch, true, None)?;
        let get = |n: Option<NodeId>| g.value(n.expect("units requested")).clone();
        Ok(EncoderState {
            h: g.value(enc.h).clone(),
            r: get(enc.r),
            a: get(enc.a),
        })
    }

    /// Token states from a plain encoder pass with no edit units.
    pub fn encode_plain(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let batch = [ids.to_vec()];
        let mut g = Graph::new(&self.params);
        let x0 = self.embed(&mut g, &batch, false)?;
        let enc = self.encode_rows(&mut g, x0, &batch, false, None)?;
        Ok(g.value(enc.h).clone())
    }
}

fn split_rows<T: Scalar>(t: &Tensor<T>, lengths: &[usize]) -> Vec<Tensor<T>> {
    let cols = t.cols();
    let mut out = Vec::with_capacity(lengths.len());
    let mut start = 0;
    for &n in lengths {
        let data = t.data()[start * cols..(start + n) * cols].to_vec();
        out.push(Tensor::new(vec![n, cols], data).expect("row split"));
        start += n;
    }
    out
}

/// Per-position categorical distributions over the edit space.
#[derive(Debug, Clone, PartialEq)]
pub struct EditDistribution<T> {
    pub probs: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Softmax and argmax per row; ties go to the lower edit index.
pub fn edit_distribution<T: Scalar>(logits: &Tensor<T>) -> EditDistribution<T> {
    let mut probs = logits.clone();
    let mut argmax = Vec::with_capacity(logits.rows());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        argmax.push(best);
        let out = probs.row_mut(r);
        let max = row[best];
        let mut z = T::zero();
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in out.iter_mut() {
            *v /= z;
        }
    }
    EditDistribution { probs, argmax }
}
