//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] and never copied; [`Graph::backward`]
//! returns their gradients, which the store accumulates.

use std::collections::HashMap;
use std::sync::Arc;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{PieError, Result};

const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named parameters of a model. Names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(PieError::InvalidState(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Gradients of one backward pass, indexed like the parameter store.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    per_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.per_param.get(id.0).and_then(Option::as_ref)
    }
}

/// An elementwise function together with its derivative.
pub trait Pointwise<T>: Send + Sync {
    fn value(&self, x: T) -> T;
    fn derivative(&self, x: T) -> T;
}

/// Exact GELU, `x * Phi(x)`.
pub struct Gelu;

impl<T: Scalar> Pointwise<T> for Gelu {
    fn value(&self, x: T) -> T {
        let half = T::from_f64(0.5);
        half * x * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
    }

    fn derivative(&self, x: T) -> T {
        let half = T::from_f64(0.5);
        let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
        let pdf = (-(x * x) * half).exp() * T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        cdf + x * pdf
    }
}

/// A block of consecutive rows attending only among themselves.
#[derive(Debug, Clone)]
pub struct AttentionSegment {
    pub offset: usize,
    pub len: usize,
    /// `len * len` row-major; entry `(i, j)` allows row `i` to attend to row `j`.
    pub mask: Arc<Vec<bool>>,
}

/// A column window of a node, used to read Q, K and V out of one fused projection.
#[derive(Debug, Clone, Copy)]
pub struct ColSlice {
    pub node: NodeId,
    pub offset: usize,
}

impl From<NodeId> for ColSlice {
    fn from(node: NodeId) -> Self {
        ColSlice { node, offset: 0 }
    }
}

/// Rows of a weighted gather: output row `r` is `sum(w * table[i])` over `rows[r]`.
pub type GatherRows<T> = Arc<Vec<Vec<(usize, T)>>>;

/// Column layout of the factorized edit logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditLayout {
    pub transforms: usize,
    pub inserts: usize,
}

impl EditLayout {
    pub fn width(&self) -> usize {
        2 + self.transforms + 2 * self.inserts
    }
    pub fn append_start(&self) -> usize {
        2 + self.transforms
    }
    pub fn replace_start(&self) -> usize {
        2 + self.transforms + self.inserts
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Add(NodeId, NodeId),
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Scale {
        x: NodeId,
        factor: T,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Pointwise {
        x: NodeId,
        f: Arc<dyn Pointwise<T>>,
    },
    Softmax {
        x: NodeId,
    },
    Gather {
        table: NodeId,
        rows: GatherRows<T>,
    },
    RowDot {
        a: NodeId,
        b: NodeId,
    },
    Attention {
        q: ColSlice,
        k: ColSlice,
        v: ColSlice,
        width: usize,
        heads: usize,
        segments: Arc<Vec<AttentionSegment>>,
        probs: Vec<T>,
    },
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    Sum {
        x: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Arc<Vec<usize>>,
        is_copy: Arc<Vec<bool>>,
        copy_weight: T,
        probs: Vec<T>,
    },
    EditLogits {
        theta: NodeId,
        copy: NodeId,
        append: NodeId,
        replace: NodeId,
        replace_src: NodeId,
        layout: EditLayout,
    },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
}

/// Matrix view with arbitrary strides.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Scalar> View<'a, T> {
    fn of(t: &'a Tensor<T>) -> Self {
        View {
            data: t.data(),
            rows: t.rows(),
            cols: t.cols(),
            rs: t.cols(),
            cs: 1,
        }
    }

    fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn maybe_t(self, flag: bool) -> Self {
        if flag {
            self.t()
        } else {
            self
        }
    }
}

/// `out = a * b + beta * out`, `out` row-major.
fn gemm_into<T: Scalar>(a: View<T>, b: View<T>, beta: T, out: &mut [T]) {
    debug_assert_eq!(a.cols, b.rows);
    T::gemm(
        a.rows,
        a.cols,
        b.cols,
        T::one(),
        a.data,
        a.rs,
        a.cs,
        b.data,
        b.rs,
        b.cs,
        beta,
        out,
        b.cols,
        1,
    );
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => &self.params.get(*p).value,
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_err(op: &'static str, detail: String) -> PieError {
        PieError::ShapeMismatch { op, detail }
    }

    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<NodeId> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| PieError::InvalidState(format!("unknown parameter {name}")))?;
        Ok(self.param(id))
    }

    /// `op(a) * op(b)` where `op` optionally transposes a 2-D operand.
    pub fn matmul_t(&mut self, a: NodeId, ta: bool, b: NodeId, tb: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let va = View::of(av).maybe_t(ta);
        let vb = View::of(bv).maybe_t(tb);
        if va.cols != vb.rows || av.shape().len() > 2 || bv.shape().len() > 2 {
            return Err(Self::shape_err(
                "matmul",
                format!(
                    "{:?}{} x {:?}{}",
                    av.shape(),
                    if ta { "^T" } else { "" },
                    bv.shape(),
                    if tb { "^T" } else { "" }
                ),
            ));
        }
        let mut out = Tensor::zeros(&[va.rows, vb.cols]);
        gemm_into(va, vb, T::zero(), out.data_mut());
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Self::shape_err(
                "add",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.len() != xv.cols() {
            return Err(Self::shape_err(
                "add_bias",
                format!("{:?} + bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        let b = bv.data();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(b) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBias { x, bias }))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale { x, factor })
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let cols = xv.cols();
        if gv.len() != cols || bv.len() != cols {
            return Err(Self::shape_err(
                "layer_norm",
                format!("{:?} with gain {:?}, bias {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let rows = xv.rows();
        let n = T::from_f64(cols as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let mut out = Tensor::zeros(xv.shape());
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            let xh = &mut xhat[r * cols..(r + 1) * cols];
            let o = out.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * inv;
                o[c] = xh[c] * gv.data()[c] + bv.data()[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn pointwise(&mut self, x: NodeId, f: Arc<dyn Pointwise<T>>) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = f.value(*v));
        self.push(out, Op::Pointwise { x, f })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.pointwise(x, Arc::new(Gelu))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::Softmax { x })
    }

    /// Weighted row gather from `table` (an embedding lookup when every row has one unit-weight entry).
    pub fn gather(&mut self, table: NodeId, rows: GatherRows<T>) -> Result<NodeId> {
        let tv = self.value(table);
        let (n_rows, cols) = (tv.rows(), tv.cols());
        let mut out = Tensor::zeros(&[rows.len(), cols]);
        for (r, entries) in rows.iter().enumerate() {
            let o = out.row_mut(r);
            for &(idx, w) in entries {
                if idx >= n_rows {
                    return Err(Self::shape_err(
                        "gather",
                        format!("row {idx} out of range for {:?}", tv.shape()),
                    ));
                }
                for (ov, &tv) in o.iter_mut().zip(tv.row(idx)) {
                    *ov += w * tv;
                }
            }
        }
        Ok(self.push(out, Op::Gather { table, rows }))
    }

    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let rows = ids.iter().map(|&i| vec![(i, T::one())]).collect();
        self.gather(table, Arc::new(rows))
    }

    /// Per-row dot product of two equally shaped matrices, giving a vector.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() || av.cols() != bv.cols() {
            return Err(Self::shape_err(
                "row_dot",
                format!("{:?} . {:?}", av.shape(), bv.shape()),
            ));
        }
        let out: Vec<T> = (0..av.rows())
            .map(|r| dot(av.row(r), bv.row(r)))
            .collect();
        let n = out.len();
        Ok(self.push(Tensor::new(vec![n], out)?, Op::RowDot { a, b }))
    }

    /// Multi-head scaled dot-product attention restricted to `segments`.
    /// Disallowed logits are treated as negative infinity.
    pub fn masked_attention(
        &mut self,
        q: impl Into<ColSlice>,
        k: impl Into<ColSlice>,
        v: impl Into<ColSlice>,
        width: usize,
        heads: usize,
        segments: Arc<Vec<AttentionSegment>>,
    ) -> Result<NodeId> {
        let (q, k, v) = (q.into(), k.into(), v.into());
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Self::shape_err(
                "attention",
                format!("width {width} not divisible into {heads} heads"),
            ));
        }
        let rows = self.value(q.node).rows();
        for s in [q, k, v] {
            let t = self.value(s.node);
            if t.rows() != rows || s.offset + width > t.cols() {
                return Err(Self::shape_err(
                    "attention",
                    format!("slice at {} of {:?} (rows {rows}, width {width})", s.offset, t.shape()),
                ));
            }
        }
        for seg in segments.iter() {
            if seg.offset + seg.len > rows || seg.mask.len() != seg.len * seg.len {
                return Err(Self::shape_err(
                    "attention",
                    format!("segment {}+{} over {rows} rows", seg.offset, seg.len),
                ));
            }
        }
        let dh = width / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let (qt, kt, vt) = (self.value(q.node), self.value(k.node), self.value(v.node));
        let mut out = Tensor::zeros(&[rows, width]);
        let total: usize = segments.iter().map(|s| heads * s.len * s.len).sum();
        let mut probs = vec![T::zero(); total];
        let mut base = 0;
        let mut scores: Vec<T> = Vec::new();
        for seg in segments.iter() {
            let l = seg.len;
            for h in 0..heads {
                let hc = h * dh;
                for i in 0..l {
                    let qi = &qt.row(seg.offset + i)[q.offset + hc..q.offset + hc + dh];
                    scores.clear();
                    let mut max = None::<T>;
                    for j in 0..l {
                        if seg.mask[i * l + j] {
                            let kj = &kt.row(seg.offset + j)[k.offset + hc..k.offset + hc + dh];
                            let s = dot(qi, kj) * scale;
                            max = Some(max.map_or(s, |m: T| m.max(s)));
                            scores.push(s);
                        }
                    }
                    let Some(max) = max else { continue };
                    let mut z = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let p_row = &mut probs[base + (h * l + i) * l..base + (h * l + i + 1) * l];
                    let mut it = scores.iter();
                    for j in 0..l {
                        if seg.mask[i * l + j] {
                            p_row[j] = *it.next().expect("score per allowed key") / z;
                        }
                    }
                    let o = &mut out.row_mut(seg.offset + i)[hc..hc + dh];
                    for j in 0..l {
                        if seg.mask[i * l + j] {
                            let p = p_row[j];
                            let vj = &vt.row(seg.offset + j)[v.offset + hc..v.offset + hc + dh];
                            for (ov, &vv) in o.iter_mut().zip(vj) {
                                *ov += p * vv;
                            }
                        }
                    }
                }
            }
            base += heads * l * l;
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                width,
                heads,
                segments,
                probs,
            },
        ))
    }

    /// Multiplies by a fixed mask (zeros and `1/(1-p)` for inverted dropout).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<T>) -> Result<NodeId> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(Self::shape_err(
                "dropout",
                format!("mask of {} for {:?}", mask.len(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Summed cross-entropy against `targets`, with copy-labelled rows scaled
    /// by `copy_weight`: `sum(non-copy) + copy_weight * sum(copy)`.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: Arc<Vec<usize>>,
        is_copy: Arc<Vec<bool>>,
        copy_weight: T,
    ) -> Result<NodeId> {
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        if targets.len() != rows || is_copy.len() != rows || targets.iter().any(|&t| t >= cols) {
            return Err(Self::shape_err(
                "cross_entropy",
                format!("{} targets for {:?}", targets.len(), lv.shape()),
            ));
        }
        let mut probs = lv.data().to_vec();
        let (mut other, mut copy) = (T::zero(), T::zero());
        for r in 0..rows {
            let row = &mut probs[r * cols..(r + 1) * cols];
            let nll = -log_softmax_at(row, targets[r]);
            softmax_in_place(row);
            if is_copy[r] {
                copy += nll;
            } else {
                other += nll;
            }
        }
        let loss = other + copy_weight * copy;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                is_copy,
                copy_weight,
                probs,
            },
        ))
    }

    /// Assembles factorized edit logits from their per-term pieces:
    /// `theta` `[n, E]`, `copy` `[n]`, `append` and `replace` `[n, S]`, `replace_src` `[n]`.
    pub fn edit_logits(
        &mut self,
        theta: NodeId,
        copy: NodeId,
        append: NodeId,
        replace: NodeId,
        replace_src: NodeId,
        layout: EditLayout,
    ) -> Result<NodeId> {
        let th = self.value(theta);
        let n = th.rows();
        let (cp, ap, rp, rs) = (
            self.value(copy),
            self.value(append),
            self.value(replace),
            self.value(replace_src),
        );
        let s = layout.inserts;
        let ok = th.cols() == layout.width()
            && cp.len() == n
            && rs.len() == n
            && ap.len() == n * s
            && rp.len() == n * s;
        if !ok {
            return Err(Self::shape_err(
                "edit_logits",
                format!(
                    "theta {:?}, copy {:?}, append {:?}, replace {:?}, replace_src {:?} for {layout:?}",
                    th.shape(),
                    cp.shape(),
                    ap.shape(),
                    rp.shape(),
                    rs.shape()
                ),
            ));
        }
        let mut out = th.clone();
        let (a0, r0) = (layout.append_start(), layout.replace_start());
        for i in 0..n {
            let c = cp.data()[i];
            let src = rs.data()[i];
            let row = out.row_mut(i);
            row[0] += c;
            for v in &mut row[2..a0] {
                *v += c;
            }
            for w in 0..s {
                row[a0 + w] += c + ap.data()[i * s + w];
                row[r0 + w] += rp.data()[i * s + w] - src;
            }
        }
        Ok(self.push(
            out,
            Op::EditLogits {
                theta,
                copy,
                append,
                replace,
                replace_src,
                layout,
            },
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(PieError::InvalidState(
                "backward called on a node that was never computed".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(PieError::InvalidState(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(_) => {
                    grads[idx] = Some(g);
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let gv = View::of(&g);
                    let opa = View::of(av).maybe_t(*ta);
                    let opb = View::of(bv).maybe_t(*tb);
                    let mut da = Tensor::zeros(av.shape());
                    if *ta {
                        gemm_into(opb, gv.t(), T::zero(), da.data_mut());
                    } else {
                        gemm_into(gv, opb.t(), T::zero(), da.data_mut());
                    }
                    let mut db = Tensor::zeros(bv.shape());
                    if *tb {
                        gemm_into(gv.t(), opa, T::zero(), db.data_mut());
                    } else {
                        gemm_into(opa.t(), gv, T::zero(), db.data_mut());
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddBias { x, bias } => {
                    let bv = self.value(*bias);
                    let mut db = Tensor::zeros(bv.shape());
                    for r in 0..g.rows() {
                        for (d, &gv) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale { x, factor } => {
                    let mut d = g;
                    d.data_mut().iter_mut().for_each(|v| *v *= *factor);
                    accumulate(&mut grads, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let cols = gv.len();
                    let n = T::from_f64(cols as f64);
                    let mut dgain = Tensor::zeros(gv.shape());
                    let mut dbias = Tensor::zeros(self.value(*bias).shape());
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let (mut s1, mut s2) = (T::zero(), T::zero());
                        for c in 0..cols {
                            dgain.data_mut()[c] += gr[c] * xh[c];
                            dbias.data_mut()[c] += gr[c];
                            dxhat[c] = gr[c] * gv.data()[c];
                            s1 += dxhat[c];
                            s2 += dxhat[c] * xh[c];
                        }
                        let inv = inv_std[r];
                        let dr = dx.row_mut(r);
                        for c in 0..cols {
                            dr[c] = inv / n * (n * dxhat[c] - s1 - xh[c] * s2);
                        }
                    }
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Pointwise { x, f } => {
                    let xv = self.value(*x);
                    let mut d = g;
                    for (dv, &xx) in d.data_mut().iter_mut().zip(xv.data()) {
                        *dv *= f.derivative(xx);
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Softmax { x } => {
                    let y = self.value(NodeId(idx));
                    let mut d = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = d.row_mut(r);
                        let s = dot(yr, dr);
                        for (dv, &yv) in dr.iter_mut().zip(yr) {
                            *dv = yv * (*dv - s);
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Gather { table, rows } => {
                    let tv = self.value(*table);
                    let mut d = Tensor::zeros(tv.shape());
                    for (r, entries) in rows.iter().enumerate() {
                        let gr = g.row(r);
                        for &(i, w) in entries {
                            for (dv, &gv) in d.row_mut(i).iter_mut().zip(gr) {
                                *dv += w * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *table, d);
                }
                Op::RowDot { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Tensor::zeros(av.shape());
                    let mut db = Tensor::zeros(bv.shape());
                    for r in 0..av.rows() {
                        let gr = g.data()[r];
                        for ((d, &x), (e, &y)) in da
                            .row_mut(r)
                            .iter_mut()
                            .zip(bv.row(r))
                            .zip(db.row_mut(r).iter_mut().zip(av.row(r)))
                        {
                            *d = gr * x;
                            *e = gr * y;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    width,
                    heads,
                    segments,
                    probs,
                } => {
                    let parts = self.attention_backward(&g, *q, *k, *v, *width, *heads, segments, probs);
                    for (node, d) in parts {
                        accumulate(&mut grads, node, d);
                    }
                }
                Op::Dropout { x, mask } => {
                    let mut d = g;
                    for (dv, &m) in d.data_mut().iter_mut().zip(mask) {
                        *dv *= m;
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Sum { x } => {
                    let gv = g.item();
                    let d = Tensor::full(self.value(*x).shape(), gv);
                    accumulate(&mut grads, *x, d);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    is_copy,
                    copy_weight,
                    probs,
                } => {
                    let gv = g.item();
                    let lv = self.value(*logits);
                    let cols = lv.cols();
                    let mut d = Tensor::new(lv.shape().to_vec(), probs.clone())?;
                    for r in 0..lv.rows() {
                        let w = if is_copy[r] { *copy_weight } else { T::one() } * gv;
                        let row = d.row_mut(r);
                        row[targets[r]] -= T::one();
                        row.iter_mut().for_each(|x| *x *= w);
                    }
                    debug_assert_eq!(d.cols(), cols);
                    accumulate(&mut grads, *logits, d);
                }
                Op::EditLogits {
                    theta,
                    copy,
                    append,
                    replace,
                    replace_src,
                    layout,
                } => {
                    let n = g.rows();
                    let s = layout.inserts;
                    let (a0, r0) = (layout.append_start(), layout.replace_start());
                    let mut dcopy = vec![T::zero(); n];
                    let mut dsrc = vec![T::zero(); n];
                    let mut dapp = vec![T::zero(); n * s];
                    let mut drep = vec![T::zero(); n * s];
                    for i in 0..n {
                        let row = g.row(i);
                        let mut c = row[0];
                        for &v in &row[2..a0] {
                            c += v;
                        }
                        let mut src = T::zero();
                        for w in 0..s {
                            c += row[a0 + w];
                            dapp[i * s + w] = row[a0 + w];
                            drep[i * s + w] = row[r0 + w];
                            src -= row[r0 + w];
                        }
                        dcopy[i] = c;
                        dsrc[i] = src;
                    }
                    let shape_of = |id: &NodeId| self.value(*id).shape().to_vec();
                    accumulate(&mut grads, *copy, Tensor::new(shape_of(copy), dcopy)?);
                    accumulate(&mut grads, *replace_src, Tensor::new(shape_of(replace_src), dsrc)?);
                    accumulate(&mut grads, *append, Tensor::new(shape_of(append), dapp)?);
                    accumulate(&mut grads, *replace, Tensor::new(shape_of(replace), drep)?);
                    accumulate(&mut grads, *theta, g);
                }
            }
        }

        let mut per_param: Vec<Option<Tensor<T>>> = (0..self.params.len()).map(|_| None).collect();
        for (pid, nid) in &self.param_nodes {
            per_param[pid.0] = grads[nid.0].take();
        }
        Ok(Gradients { per_param })
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Tensor<T>,
        q: ColSlice,
        k: ColSlice,
        v: ColSlice,
        width: usize,
        heads: usize,
        segments: &[AttentionSegment],
        probs: &[T],
    ) -> Vec<(NodeId, Tensor<T>)> {
        let dh = width / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let (qt, kt, vt) = (self.value(q.node), self.value(k.node), self.value(v.node));
        // Q, K and V often live in one fused node; keep one buffer per distinct node.
        let mut bufs: Vec<(NodeId, Tensor<T>)> = Vec::new();
        for s in [q, k, v] {
            if !bufs.iter().any(|(n, _)| *n == s.node) {
                bufs.push((s.node, Tensor::zeros(self.value(s.node).shape())));
            }
        }
        let slot = |bufs: &[(NodeId, Tensor<T>)], n: NodeId| {
            bufs.iter().position(|(m, _)| *m == n).expect("buffer exists")
        };
        let (iq, ik, iv) = (slot(&bufs, q.node), slot(&bufs, k.node), slot(&bufs, v.node));
        let mut dp = Vec::new();
        let mut base = 0;
        for seg in segments {
            let l = seg.len;
            for h in 0..heads {
                let hc = h * dh;
                for i in 0..l {
                    let p_row = &probs[base + (h * l + i) * l..base + (h * l + i + 1) * l];
                    let go = &g.row(seg.offset + i)[hc..hc + dh];
                    dp.clear();
                    dp.resize(l, T::zero());
                    let mut inner = T::zero();
                    for j in 0..l {
                        if seg.mask[i * l + j] {
                            let vj = &vt.row(seg.offset + j)[v.offset + hc..v.offset + hc + dh];
                            dp[j] = dot(go, vj);
                            inner += p_row[j] * dp[j];
                            let dv = &mut bufs[iv].1.row_mut(seg.offset + j)
                                [v.offset + hc..v.offset + hc + dh];
                            for (d, &gg) in dv.iter_mut().zip(go) {
                                *d += p_row[j] * gg;
                            }
                        }
                    }
                    let qi: Vec<T> =
                        qt.row(seg.offset + i)[q.offset + hc..q.offset + hc + dh].to_vec();
                    for j in 0..l {
                        if !seg.mask[i * l + j] {
                            continue;
                        }
                        let ds = p_row[j] * (dp[j] - inner) * scale;
                        let kj = &kt.row(seg.offset + j)[k.offset + hc..k.offset + hc + dh];
                        let dq = &mut bufs[iq].1.row_mut(seg.offset + i)
                            [q.offset + hc..q.offset + hc + dh];
                        for (d, &kk) in dq.iter_mut().zip(kj) {
                            *d += ds * kk;
                        }
                        let dk = &mut bufs[ik].1.row_mut(seg.offset + j)
                            [k.offset + hc..k.offset + hc + dh];
                        for (d, &qq) in dk.iter_mut().zip(&qi) {
                            *d += ds * qq;
                        }
                    }
                }
            }
            base += heads * l * l;
        }
        bufs
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, d: Tensor<T>) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(None, |m: Option<T>, v| {
        Some(m.map_or(v, |m| m.max(v)))
    });
    let Some(max) = max else { return };
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

fn log_softmax_at<T: Scalar>(row: &[T], at: usize) -> T {
    let max = row.iter().copied().fold(row[0], T::max);
    let z: T = row.iter().map(|&v| (v - max).exp()).sum();
    row[at] - max - z.ln()
}
