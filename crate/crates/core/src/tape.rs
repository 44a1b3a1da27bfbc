//! Reverse-mode differentiation over a recorded list of dense primitives.
//!
//! A [`Tape`] is the computation record: every primitive appends one node
//! holding its output value. Parameters enter through [`Tape::param`], which
//! copies the current value out of a [`ParamStore`]. [`Tape::replay`]
//! re-evaluates the whole record against a (possibly perturbed) store, which
//! is what the finite-difference checker relies on.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::tensor::{shape_err, ParamStore, Real, Tensor, TensorError};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Attention mask over (query, key) token pairs. A blocked pair contributes
/// exactly zero weight, which is the `+inf` entry of an additive mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl Mask {
    /// Nothing blocked.
    pub fn open(queries: usize, keys: usize) -> Self {
        Self { queries, keys, allowed: vec![true; queries * keys] }
    }

    pub fn from_fn(queries: usize, keys: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(queries * keys);
        for i in 0..queries {
            for j in 0..keys {
                allowed.push(f(i, j));
            }
        }
        Self { queries, keys, allowed }
    }

    /// Query `i` may read key `j` iff `parents[i][j]`, optionally plus the diagonal.
    pub fn from_parents(d: usize, is_parent: impl Fn(usize, usize) -> bool, self_edges: bool) -> Self {
        Self::from_fn(d, d, |i, j| is_parent(i, j) || (self_edges && i == j))
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.keys + key]
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    fn row(&self, query: usize) -> &[bool] {
        &self.allowed[query * self.keys..(query + 1) * self.keys]
    }
}

/// Row normalizer used after exponentiating attention logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalizer {
    /// Divide by the row sum; a fully masked row becomes all zeros.
    Softmax,
    /// Divide by `max(row sum, 1)`, so rows may sum to anything in `[0, 1]`.
    Dag,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(String),
    Affine { x: Var, w: Var, b: Option<Var> },
    Bmm { a: Var, b: Var, trans_b: bool },
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    SwapAxes01 { x: Var },
    Reshape { x: Var },
    Expand { x: Var, count: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScaleShift { x: Var, scale: f64, shift: f64 },
    Attention { logits: Var, mask: Option<Rc<Mask>>, kind: Normalizer, scale: f64 },
    Gelu { x: Var },
    LayerNorm { x: Var, gamma: Option<Var>, beta: Option<Var> },
    MaxPool0 { x: Var },
    Mse { pred: Var, target: Var },
    RowScale { z: Var, c: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::Bmm { .. } => "bmm",
            Op::SplitHeads { .. } => "split_heads",
            Op::MergeHeads { .. } => "merge_heads",
            Op::SwapAxes01 { .. } => "swap_axes",
            Op::Reshape { .. } => "reshape",
            Op::Expand { .. } => "expand",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::ScaleShift { .. } => "scale_shift",
            Op::Attention { .. } => "attention",
            Op::Gelu { .. } => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MaxPool0 { .. } => "max_pool",
            Op::Mse { .. } => "mse",
            Op::RowScale { .. } => "row_scale",
        }
    }
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
    shape: Vec<usize>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Computation record.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Names of every parameter read by this record.
    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    fn push(&mut self, op: Op) -> Result<Var, TensorError> {
        let value = self.eval(&op)?;
        Ok(self.push_value(op, value))
    }

    fn push_value(&mut self, op: Op, value: Tensor<T>) -> Var {
        let shape = value.shape().to_vec();
        self.nodes.push(Node { op, value, shape });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "input" });
        }
        Ok(self.push_value(Op::Input, value))
    }

    /// Reads a parameter from `store`. Repeated reads of the same name share a node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var, TensorError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push_value(Op::Param(name.to_string()), value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `x · w + b` over the last axis of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        self.push(Op::Affine { x, w, b })
    }

    /// Batched `a · b` (or `a · bᵀ`) over a leading batch axis of rank-3 tensors.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        self.push(Op::Bmm { a, b, trans_b })
    }

    /// `[B, T, H·e] -> [B·H, T, e]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var, TensorError> {
        self.push(Op::SplitHeads { x, heads })
    }

    /// `[B·H, T, e] -> [B, T, H·e]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var, TensorError> {
        self.push(Op::MergeHeads { x, heads })
    }

    /// `[A, B, C] -> [B, A, C]`.
    pub fn swap_axes01(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::SwapAxes01 { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let op = Op::Reshape { x };
        Ok(self.push_value(op, value))
    }

    /// Repeats `x` along a new leading axis of length `count`.
    pub fn expand(&mut self, x: Var, count: usize) -> Result<Var, TensorError> {
        self.push(Op::Expand { x, count })
    }

    /// Elementwise sum; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.push(Op::Add { a, b })
    }

    /// Elementwise product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.push(Op::Mul { a, b })
    }

    /// `scale · x + shift` with constant scalars.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        self.push(Op::ScaleShift { x, scale, shift })
    }

    /// Attention weights from logits `[B, Tq, Tk]`: `exp(scale · logits)` with
    /// blocked entries exactly zero, normalized per row by `kind`.
    pub fn attention_weights(
        &mut self,
        logits: Var,
        mask: Option<Rc<Mask>>,
        kind: Normalizer,
        scale: f64,
    ) -> Result<Var, TensorError> {
        self.push(Op::Attention { logits, mask, kind, scale })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::Gelu { x })
    }

    /// Normalization over the last axis with population variance, optionally
    /// followed by a learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var, TensorError> {
        self.push(Op::LayerNorm { x, gamma, beta })
    }

    /// Max over the leading axis.
    pub fn max_pool0(&mut self, x: Var) -> Result<Var, TensorError> {
        self.push(Op::MaxPool0 { x })
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.push(Op::Mse { pred, target })
    }

    /// `out[r, i, :] = z[r, i] · c[i, :]` for `z: [R, d]`, `c: [d, D]`.
    pub fn row_scale(&mut self, z: Var, c: Var) -> Result<Var, TensorError> {
        self.push(Op::RowScale { z, c })
    }

    /// Re-evaluates every node in record order, re-reading parameters from `store`.
    pub fn replay(&mut self, store: &ParamStore<T>) -> Result<(), TensorError> {
        for idx in 0..self.nodes.len() {
            let op = self.nodes[idx].op.clone();
            let value = match &op {
                Op::Input => continue,
                Op::Param(name) => store.get(name)?.clone(),
                Op::Reshape { x } => {
                    let shape = self.nodes[idx].shape.clone();
                    self.value(*x).clone().reshaped(shape)?
                }
                _ => self.eval(&op)?,
            };
            if value.shape() != self.nodes[idx].shape.as_slice() {
                return Err(shape_err("replay", format!("node {idx} changed shape")));
            }
            self.nodes[idx].value = value;
        }
        Ok(())
    }

    fn eval(&self, op: &Op) -> Result<Tensor<T>, TensorError> {
        let out = match op {
            Op::Input | Op::Param(_) | Op::Reshape { .. } => unreachable!("leaf values are stored"),
            Op::Affine { x, w, b } => {
                let (x, w) = (self.value(*x), self.value(*w));
                let inp = *x.shape().last().unwrap();
                if w.shape().len() != 2 || w.shape()[0] != inp {
                    return Err(shape_err("affine", format!("x {:?} w {:?}", x.shape(), w.shape())));
                }
                let outd = w.shape()[1];
                let rows = x.len() / inp;
                let mut data = vec![T::zero(); rows * outd];
                if let Some(b) = b {
                    let b = self.value(*b);
                    if b.len() != outd {
                        return Err(shape_err("affine", format!("bias {:?} for width {outd}", b.shape())));
                    }
                    for row in data.chunks_mut(outd) {
                        row.copy_from_slice(b.data());
                    }
                }
                T::gemm(rows, inp, outd, x.data(), false, w.data(), false, &mut data, b.is_some());
                let mut shape = x.shape().to_vec();
                *shape.last_mut().unwrap() = outd;
                Tensor::new(shape, data)?
            }
            Op::Bmm { a, b, trans_b } => {
                let (a, b) = (self.value(*a), self.value(*b));
                let (sa, sb) = (a.shape(), b.shape());
                if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
                    return Err(shape_err("bmm", format!("{sa:?} x {sb:?}")));
                }
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let (kb, n) = if *trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
                if kb != k {
                    return Err(shape_err("bmm", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
                }
                let mut data = vec![T::zero(); batch * m * n];
                for i in 0..batch {
                    T::gemm(
                        m,
                        k,
                        n,
                        &a.data()[i * m * k..(i + 1) * m * k],
                        false,
                        &b.data()[i * k * n..(i + 1) * k * n],
                        *trans_b,
                        &mut data[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
                Tensor::new(vec![batch, m, n], data)?
            }
            Op::SplitHeads { x, heads } => {
                let x = self.value(*x);
                let s = x.shape();
                if s.len() != 3 || s[2] % heads != 0 {
                    return Err(shape_err("split_heads", format!("{s:?} into {heads}")));
                }
                let (b, t, e) = (s[0], s[1], s[2] / heads);
                let mut data = vec![T::zero(); x.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let src = (bi * t + ti) * s[2] + h * e;
                            let dst = ((bi * heads + h) * t + ti) * e;
                            data[dst..dst + e].copy_from_slice(&x.data()[src..src + e]);
                        }
                    }
                }
                Tensor::new(vec![b * heads, t, e], data)?
            }
            Op::MergeHeads { x, heads } => {
                let x = self.value(*x);
                let s = x.shape();
                if s.len() != 3 || s[0] % heads != 0 {
                    return Err(shape_err("merge_heads", format!("{s:?} from {heads}")));
                }
                let (b, t, e) = (s[0] / heads, s[1], s[2]);
                let width = e * heads;
                let mut data = vec![T::zero(); x.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let dst = (bi * t + ti) * width + h * e;
                            let src = ((bi * heads + h) * t + ti) * e;
                            data[dst..dst + e].copy_from_slice(&x.data()[src..src + e]);
                        }
                    }
                }
                Tensor::new(vec![b, t, width], data)?
            }
            Op::SwapAxes01 { x } => {
                let x = self.value(*x);
                let s = x.shape();
                if s.len() != 3 {
                    return Err(shape_err("swap_axes", format!("{s:?}")));
                }
                Tensor::new(vec![s[1], s[0], s[2]], swap01(x.data(), s[0], s[1], s[2]))?
            }
            Op::Expand { x, count } => {
                let x = self.value(*x);
                let mut data = Vec::with_capacity(x.len() * count);
                for _ in 0..*count {
                    data.extend_from_slice(x.data());
                }
                let mut shape = vec![*count];
                shape.extend_from_slice(x.shape());
                Tensor::new(shape, data)?
            }
            Op::Add { a, b } | Op::Mul { a, b } => {
                let (a, b) = (self.value(*a), self.value(*b));
                check_broadcast(op.name(), a.shape(), b.shape())?;
                let bl = b.len();
                let is_add = matches!(op, Op::Add { .. });
                let data = a
                    .data()
                    .chunks(bl)
                    .flat_map(|chunk| {
                        chunk.iter().zip(b.data()).map(move |(&p, &q)| if is_add { p + q } else { p * q })
                    })
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::ScaleShift { x, scale, shift } => {
                let (s, t) = (T::lit(*scale), T::lit(*shift));
                self.value(*x).map(|v| s * v + t)
            }
            Op::Attention { logits, mask, kind, scale } => {
                let l = self.value(*logits);
                let s = l.shape();
                if s.len() != 3 {
                    return Err(shape_err("attention", format!("logits {s:?}")));
                }
                let (tq, tk) = (s[1], s[2]);
                if let Some(m) = mask {
                    if m.queries() != tq || m.keys() != tk {
                        return Err(shape_err(
                            "attention",
                            format!("mask {}x{} for logits {s:?}", m.queries(), m.keys()),
                        ));
                    }
                }
                let mut data = vec![T::zero(); l.len()];
                let sc = T::lit(*scale);
                for (r, (row, out)) in l.data().chunks(tk).zip(data.chunks_mut(tk)).enumerate() {
                    let allowed = mask.as_ref().map(|m| m.row(r % tq));
                    normalize_row(row, allowed, *kind, sc, out);
                }
                Tensor::new(s.to_vec(), data)?
            }
            Op::Gelu { x } => self.value(*x).map(|v| gelu(v).0),
            Op::LayerNorm { x, gamma, beta } => {
                let x = self.value(*x);
                let w = *x.shape().last().unwrap();
                let gamma = gamma.map(|g| self.value(g));
                let beta = beta.map(|b| self.value(b));
                for p in gamma.iter().chain(beta.iter()) {
                    if p.len() != w {
                        return Err(shape_err("layer_norm", format!("affine {:?} for width {w}", p.shape())));
                    }
                }
                let mut data = vec![T::zero(); x.len()];
                for (row, out) in x.data().chunks(w).zip(data.chunks_mut(w)) {
                    let (mean, rstd) = moments(row);
                    for k in 0..w {
                        let mut v = (row[k] - mean) * rstd;
                        if let Some(g) = gamma {
                            v = v * g.data()[k];
                        }
                        if let Some(b) = beta {
                            v = v + b.data()[k];
                        }
                        out[k] = v;
                    }
                }
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::MaxPool0 { x } => {
                let x = self.value(*x);
                let s = x.shape();
                if s.len() < 2 {
                    return Err(shape_err("max_pool", format!("{s:?}")));
                }
                let inner = x.len() / s[0];
                let mut data = x.data()[..inner].to_vec();
                for chunk in x.data().chunks(inner).skip(1) {
                    for (m, &v) in data.iter_mut().zip(chunk) {
                        if v > *m {
                            *m = v;
                        }
                    }
                }
                Tensor::new(s[1..].to_vec(), data)?
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                if p.shape() != t.shape() {
                    return Err(shape_err("mse", format!("{:?} vs {:?}", p.shape(), t.shape())));
                }
                let sum: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
                Tensor::scalar(sum / T::from_usize(p.len()).unwrap())
            }
            Op::RowScale { z, c } => {
                let (z, c) = (self.value(*z), self.value(*c));
                let (sz, sc) = (z.shape(), c.shape());
                if sz.len() != 2 || sc.len() != 2 || sz[1] != sc[0] {
                    return Err(shape_err("row_scale", format!("z {sz:?} c {sc:?}")));
                }
                let (r, d, w) = (sz[0], sz[1], sc[1]);
                let mut data = Vec::with_capacity(r * d * w);
                for ri in 0..r {
                    for i in 0..d {
                        let zi = z.data()[ri * d + i];
                        data.extend(c.data()[i * w..(i + 1) * w].iter().map(|&v| zi * v));
                    }
                }
                Tensor::new(vec![r, d, w], data)?
            }
        };
        if !out.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        Ok(out)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let ls = &self.nodes[loss.0].shape;
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(ls.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params = BTreeMap::new();
        for (name, v) in &self.params {
            let shape = &self.nodes[v.0].shape;
            let data = grads[v.0].take().unwrap_or_else(|| vec![T::zero(); shape.iter().product()]);
            params.insert(name.clone(), Tensor::new(shape.clone(), data)?);
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn backprop(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let inp = wv.shape()[0];
                let outd = wv.shape()[1];
                let rows = xv.len() / inp;
                let gx = acc(grads, *x, xv.len());
                T::gemm(rows, outd, inp, g, false, wv.data(), true, gx, true);
                let gw = acc(grads, *w, wv.len());
                T::gemm(inp, rows, outd, xv.data(), true, g, false, gw, true);
                if let Some(b) = b {
                    let gb = acc(grads, *b, outd);
                    for row in g.chunks(outd) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = node.shape[2];
                {
                    let ga = acc(grads, *a, av.len());
                    for i in 0..batch {
                        let gs = &g[i * m * n..(i + 1) * m * n];
                        let bs = &bv.data()[i * k * n..(i + 1) * k * n];
                        // ga = g · bᵀ  (b stored k×n), or g · b (b stored n×k)
                        T::gemm(m, n, k, gs, false, bs, !*trans_b, &mut ga[i * m * k..(i + 1) * m * k], true);
                    }
                }
                let gb = acc(grads, *b, bv.len());
                for i in 0..batch {
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    let as_ = &av.data()[i * m * k..(i + 1) * m * k];
                    let dst = &mut gb[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        // gb (n×k) = gᵀ · a
                        T::gemm(n, m, k, gs, true, as_, false, dst, true);
                    } else {
                        // gb (k×n) = aᵀ · g
                        T::gemm(k, m, n, as_, true, gs, false, dst, true);
                    }
                }
            }
            Op::SplitHeads { x, heads } => {
                let s = node.shape.clone();
                let (b, t, e) = (s[0] / heads, s[1], s[2]);
                let width = e * heads;
                let gx = acc(grads, *x, g.len());
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let dst = (bi * t + ti) * width + h * e;
                            let src = ((bi * heads + h) * t + ti) * e;
                            add_into(&mut gx[dst..dst + e], &g[src..src + e]);
                        }
                    }
                }
            }
            Op::MergeHeads { x, heads } => {
                let s = node.shape.clone();
                let (b, t, width) = (s[0], s[1], s[2]);
                let e = width / heads;
                let gx = acc(grads, *x, g.len());
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let src = (bi * t + ti) * width + h * e;
                            let dst = ((bi * heads + h) * t + ti) * e;
                            add_into(&mut gx[dst..dst + e], &g[src..src + e]);
                        }
                    }
                }
            }
            Op::SwapAxes01 { x } => {
                let s = &node.shape;
                let back = swap01(g, s[0], s[1], s[2]);
                add_into(acc(grads, *x, g.len()), &back);
            }
            Op::Reshape { x } => add_into(acc(grads, *x, g.len()), g),
            Op::Expand { x, .. } => {
                let n = self.value(*x).len();
                let gx = acc(grads, *x, n);
                for chunk in g.chunks(n) {
                    add_into(gx, chunk);
                }
            }
            Op::Add { a, b } => {
                add_into(acc(grads, *a, g.len()), g);
                let bl = self.value(*b).len();
                let gb = acc(grads, *b, bl);
                for chunk in g.chunks(bl) {
                    add_into(gb, chunk);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let bl = bv.len();
                {
                    let ga = acc(grads, *a, g.len());
                    for (i, (gi, &gv)) in ga.iter_mut().zip(g).enumerate() {
                        *gi = *gi + gv * bv[i % bl];
                    }
                }
                let gb = acc(grads, *b, bl);
                for (i, (&gv, &av)) in g.iter().zip(av).enumerate() {
                    gb[i % bl] = gb[i % bl] + gv * av;
                }
            }
            Op::ScaleShift { x, scale, .. } => {
                let s = T::lit(*scale);
                let gx = acc(grads, *x, g.len());
                for (a, &v) in gx.iter_mut().zip(g) {
                    *a = *a + s * v;
                }
            }
            Op::Attention { logits, mask, kind, scale } => {
                let lv = self.value(*logits);
                let tq = node.shape[1];
                let tk = node.shape[2];
                let sc = T::lit(*scale);
                let gl = acc(grads, *logits, g.len());
                for r in 0..g.len() / tk {
                    let span = r * tk..(r + 1) * tk;
                    let w = &out[span.clone()];
                    let gr = &g[span.clone()];
                    let softmax_branch = match kind {
                        Normalizer::Softmax => true,
                        Normalizer::Dag => {
                            let allowed = mask.as_ref().map(|m| m.row(r % tq));
                            dag_uses_row_sum(&lv.data()[span.clone()], allowed, sc)
                        }
                    };
                    let dst = &mut gl[span];
                    if softmax_branch {
                        let dot: T = gr.iter().zip(w).map(|(&a, &b)| a * b).sum();
                        for j in 0..tk {
                            dst[j] = dst[j] + sc * w[j] * (gr[j] - dot);
                        }
                    } else {
                        for j in 0..tk {
                            dst[j] = dst[j] + sc * w[j] * gr[j];
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                let gx = acc(grads, *x, g.len());
                for ((a, &gv), &v) in gx.iter_mut().zip(g).zip(xv) {
                    *a = *a + gv * gelu(v).1;
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xv = self.value(*x);
                let w = *node.shape.last().unwrap();
                let gam = gamma.map(|v| self.value(v).data().to_vec());
                let mut ggamma = vec![T::zero(); w];
                let mut gbeta = vec![T::zero(); w];
                let wt = T::from_usize(w).unwrap();
                let mut gx_all = vec![T::zero(); xv.len()];
                let mut gxhat = vec![T::zero(); w];
                for (r, row) in xv.data().chunks(w).enumerate() {
                    let (mean, rstd) = moments(row);
                    let gr = &g[r * w..(r + 1) * w];
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for k in 0..w {
                        let xhat = (row[k] - mean) * rstd;
                        ggamma[k] = ggamma[k] + gr[k] * xhat;
                        gbeta[k] = gbeta[k] + gr[k];
                        gxhat[k] = match &gam {
                            Some(gm) => gr[k] * gm[k],
                            None => gr[k],
                        };
                        sum_g = sum_g + gxhat[k];
                        sum_gx = sum_gx + gxhat[k] * xhat;
                    }
                    let (mg, mgx) = (sum_g / wt, sum_gx / wt);
                    for k in 0..w {
                        let xhat = (row[k] - mean) * rstd;
                        gx_all[r * w + k] = rstd * (gxhat[k] - mg - xhat * mgx);
                    }
                }
                add_into(acc(grads, *x, xv.len()), &gx_all);
                if let Some(gm) = gamma {
                    add_into(acc(grads, *gm, w), &ggamma);
                }
                if let Some(b) = beta {
                    add_into(acc(grads, *b, w), &gbeta);
                }
            }
            Op::MaxPool0 { x } => {
                let xv = self.value(*x);
                let inner = g.len();
                let rows = xv.len() / inner;
                let gx = acc(grads, *x, xv.len());
                for k in 0..inner {
                    let mut best = 0;
                    for r in 1..rows {
                        if xv.data()[r * inner + k] > xv.data()[best * inner + k] {
                            best = r;
                        }
                    }
                    gx[best * inner + k] = gx[best * inner + k] + g[k];
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let coef = T::lit(2.0) * g[0] / T::from_usize(p.len()).unwrap();
                let diff: Vec<T> = p.iter().zip(t).map(|(&a, &b)| coef * (a - b)).collect();
                add_into(acc(grads, *pred, p.len()), &diff);
                let gt = acc(grads, *target, t.len());
                for (a, &v) in gt.iter_mut().zip(&diff) {
                    *a = *a - v;
                }
            }
            Op::RowScale { z, c } => {
                let (zv, cv) = (self.value(*z), self.value(*c));
                let (r, d) = (zv.shape()[0], zv.shape()[1]);
                let w = cv.shape()[1];
                {
                    let gz = acc(grads, *z, zv.len());
                    for ri in 0..r {
                        for i in 0..d {
                            let gs = &g[(ri * d + i) * w..(ri * d + i + 1) * w];
                            let cs = &cv.data()[i * w..(i + 1) * w];
                            let dot: T = gs.iter().zip(cs).map(|(&a, &b)| a * b).sum();
                            gz[ri * d + i] = gz[ri * d + i] + dot;
                        }
                    }
                }
                let gc = acc(grads, *c, cv.len());
                for ri in 0..r {
                    for i in 0..d {
                        let zi = zv.data()[ri * d + i];
                        let gs = &g[(ri * d + i) * w..(ri * d + i + 1) * w];
                        for (a, &v) in gc[i * w..(i + 1) * w].iter_mut().zip(gs) {
                            *a = *a + zi * v;
                        }
                    }
                }
            }
        }
    }
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    params: BTreeMap<String, Tensor<T>>,
    nodes: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }

    /// Gradient with respect to any node, `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a = *a + b;
    }
}

fn check_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), TensorError> {
    if b.len() > a.len() || a[a.len() - b.len()..] != *b {
        return Err(shape_err(op, format!("{b:?} does not broadcast into {a:?}")));
    }
    Ok(())
}

fn swap01<T: Real>(data: &[T], a: usize, b: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * c;
            let dst = (j * a + i) * c;
            out[dst..dst + c].copy_from_slice(&data[src..src + c]);
        }
    }
    out
}

fn moments<T: Real>(row: &[T]) -> (T, T) {
    let w = T::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<T>() / w;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / w;
    (mean, (var + T::lit(LAYER_NORM_EPS)).sqrt().recip())
}

/// Tanh-approximation GELU and its derivative.
fn gelu<T: Real>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let value = half * x * (T::one() + t);
    let dinner = c * (T::one() + T::lit(3.0) * k * x * x);
    let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (value, deriv)
}

fn row_max<T: Real>(row: &[T], allowed: Option<&[bool]>, scale: T) -> Option<T> {
    let mut best: Option<T> = None;
    for (j, &l) in row.iter().enumerate() {
        if allowed.map_or(true, |a| a[j]) {
            let v = scale * l;
            best = Some(best.map_or(v, |b: T| b.max(v)));
        }
    }
    best
}

/// True when a DAG-normalized row divides by its exponential sum (sum ≥ 1).
fn dag_uses_row_sum<T: Real>(row: &[T], allowed: Option<&[bool]>, scale: T) -> bool {
    let Some(m) = row_max(row, allowed, scale) else { return false };
    let shift = m.max(T::zero());
    let sum: T = row
        .iter()
        .enumerate()
        .filter(|(j, _)| allowed.map_or(true, |a| a[*j]))
        .map(|(_, &l)| (scale * l - shift).exp())
        .sum();
    sum >= (-shift).exp()
}

pub(crate) fn normalize_row<T: Real>(row: &[T], allowed: Option<&[bool]>, kind: Normalizer, scale: T, out: &mut [T]) {
    let Some(m) = row_max(row, allowed, scale) else {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    };
    // Softmax subtracts the unmasked max. The DAG normalizer compares the raw
    // sum with 1, so it only shifts when the max is positive, and compares
    // the shifted sum against exp(-shift) instead.
    let shift = match kind {
        Normalizer::Softmax => m,
        Normalizer::Dag => m.max(T::zero()),
    };
    let mut sum = T::zero();
    for (j, &l) in row.iter().enumerate() {
        let e = if allowed.map_or(true, |a| a[j]) { (scale * l - shift).exp() } else { T::zero() };
        out[j] = e;
        sum = sum + e;
    }
    let denom = match kind {
        Normalizer::Softmax => sum,
        Normalizer::Dag => sum.max((-shift).exp()),
    };
    for v in out.iter_mut() {
        *v = *v / denom;
    }
}
