//! Masked softmax attention, DAG-attention, pre-norm transformer blocks and
//! condition-adaptive blocks, all recorded on a [`Tape`].

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tape::{normalize_row, Mask, Normalizer, Tape, Var};
use crate::tensor::{ParamStore, Real, Tensor, TensorError};

/// Single-head attention matrix for `q: d×e`, `k: d'×e` scaled by `1/√e`.
/// Softmax rows sum to one (or zero when fully masked); DAG rows sum to at most one.
pub fn attention_matrix(q: &Array2<f64>, k: &Array2<f64>, mask: Option<&Mask>, kind: Normalizer) -> Array2<f64> {
    assert_eq!(q.ncols(), k.ncols(), "query and key widths differ");
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let logits = q.dot(&k.t());
    let mut out = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let row = row.to_vec();
        let allowed: Option<Vec<bool>> = mask.map(|m| (0..k.nrows()).map(|j| m.allows(i, j)).collect());
        let mut w = vec![0.0; row.len()];
        normalize_row(&row, allowed.as_deref(), kind, scale, &mut w);
        for (j, v) in w.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

pub(crate) fn normal_init<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<f32> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::from_fn(shape, |_| dist.sample(rng) as f32)
}

/// `w: [fan_in, fan_out]` with std `1/√fan_in` (or zeros), bias zeros.
pub(crate) fn init_affine<R: Rng>(
    store: &mut ParamStore<f32>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    zero: bool,
    rng: &mut R,
) {
    let w = if zero {
        Tensor::zeros(&[fan_in, fan_out])
    } else {
        normal_init(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng)
    };
    store.insert(format!("{prefix}.w"), w);
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
}

pub(crate) fn affine<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
) -> Result<Var, TensorError> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    tape.affine(x, w, Some(b))
}

fn init_layer_norm(store: &mut ParamStore<f32>, prefix: &str, width: usize) {
    store.insert(format!("{prefix}.gamma"), Tensor::full(&[width], 1.0));
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[width]));
}

fn layer_norm<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var, TensorError> {
    let g = tape.param(store, &format!("{prefix}.gamma"))?;
    let b = tape.param(store, &format!("{prefix}.beta"))?;
    tape.layer_norm(x, Some(g), Some(b))
}

/// Width and head count of an attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub width: usize,
    pub heads: usize,
}

impl AttentionShape {
    pub fn new(width: usize, heads: usize) -> Result<Self, TensorError> {
        if heads == 0 || width % heads != 0 {
            return Err(TensorError::Shape {
                op: "attention",
                detail: format!("width {width} not divisible by {heads} heads"),
            });
        }
        Ok(Self { width, heads })
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }
}

/// Query/key/value/output projections under `prefix`.
pub fn init_attention<R: Rng>(
    store: &mut ParamStore<f32>,
    prefix: &str,
    shape: AttentionShape,
    zero_output: bool,
    rng: &mut R,
) {
    for p in ["q", "k", "v"] {
        init_affine(store, &format!("{prefix}.{p}"), shape.width, shape.width, false, rng);
    }
    init_affine(store, &format!("{prefix}.o"), shape.width, shape.width, zero_output, rng);
}

/// Multi-head attention: queries `[B, Tq, D]` read keys/values `[B, Tk, D]`.
pub fn multi_head_attention<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    queries: Var,
    keys_values: Var,
    mask: Option<Rc<Mask>>,
    shape: AttentionShape,
    kind: Normalizer,
) -> Result<Var, TensorError> {
    let heads = shape.heads;
    let q = affine(tape, store, &format!("{prefix}.q"), queries)?;
    let k = affine(tape, store, &format!("{prefix}.k"), keys_values)?;
    let v = affine(tape, store, &format!("{prefix}.v"), keys_values)?;
    let q = tape.split_heads(q, heads)?;
    let k = tape.split_heads(k, heads)?;
    let v = tape.split_heads(v, heads)?;
    let logits = tape.bmm(q, k, true)?;
    let weights = tape.attention_weights(logits, mask, kind, 1.0 / (shape.head_width() as f64).sqrt())?;
    let mixed = tape.bmm(weights, v, false)?;
    let merged = tape.merge_heads(mixed, heads)?;
    affine(tape, store, &format!("{prefix}.o"), merged)
}

fn init_feed_forward<R: Rng>(store: &mut ParamStore<f32>, prefix: &str, width: usize, hidden: usize, zero_output: bool, rng: &mut R) {
    init_affine(store, &format!("{prefix}.fc1"), width, hidden, false, rng);
    init_affine(store, &format!("{prefix}.fc2"), hidden, width, zero_output, rng);
}

fn feed_forward<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var, TensorError> {
    let h = affine(tape, store, &format!("{prefix}.fc1"), x)?;
    let h = tape.gelu(h)?;
    affine(tape, store, &format!("{prefix}.fc2"), h)
}

/// Block hyperparameters shared by plain and adaptive blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub attention: AttentionShape,
    /// Feed-forward hidden width.
    pub hidden: usize,
}

pub fn init_transformer_block<R: Rng>(store: &mut ParamStore<f32>, prefix: &str, shape: BlockShape, rng: &mut R) {
    init_layer_norm(store, &format!("{prefix}.ln1"), shape.attention.width);
    init_attention(store, &format!("{prefix}.attn"), shape.attention, false, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), shape.attention.width);
    init_feed_forward(store, &format!("{prefix}.ff"), shape.attention.width, shape.hidden, false, rng);
}

/// Pre-norm residual block: `t ← t + Attn(LN(t))`, `t ← t + FF(LN(t))`,
/// self-attention within each sequence of `tokens: [B, T, D]`.
pub fn transformer_block<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    tokens: Var,
    mask: Option<Rc<Mask>>,
    shape: BlockShape,
    kind: Normalizer,
) -> Result<Var, TensorError> {
    let h = layer_norm(tape, store, &format!("{prefix}.ln1"), tokens)?;
    let a = multi_head_attention(tape, store, &format!("{prefix}.attn"), h, h, mask, shape.attention, kind)?;
    let t = tape.add(tokens, a)?;
    let h = layer_norm(tape, store, &format!("{prefix}.ln2"), t)?;
    let f = feed_forward(tape, store, &format!("{prefix}.ff"), h)?;
    tape.add(t, f)
}

fn init_modulation<R: Rng>(store: &mut ParamStore<f32>, prefix: &str, width: usize, rng: &mut R) {
    init_affine(store, &format!("{prefix}.hidden"), width, width, false, rng);
    init_affine(store, &format!("{prefix}.scale"), width, width, true, rng);
    init_affine(store, &format!("{prefix}.shift"), width, width, true, rng);
}

/// One-hidden-layer producer of per-node `(1 + scale, shift)` from the condition `[d, D]`.
fn modulation<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    condition: Var,
) -> Result<(Var, Var), TensorError> {
    let h = affine(tape, store, &format!("{prefix}.hidden"), condition)?;
    let h = tape.gelu(h)?;
    let scale = affine(tape, store, &format!("{prefix}.scale"), h)?;
    let scale = tape.scale_shift(scale, 1.0, 1.0)?;
    let shift = affine(tape, store, &format!("{prefix}.shift"), h)?;
    Ok((scale, shift))
}

fn modulated_norm<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    condition: Var,
) -> Result<Var, TensorError> {
    let (scale, shift) = modulation(tape, store, prefix, condition)?;
    let h = tape.layer_norm(x, None, None)?;
    let h = tape.mul(h, scale)?;
    tape.add(h, shift)
}

pub fn init_ada_block<R: Rng>(store: &mut ParamStore<f32>, prefix: &str, shape: BlockShape, rng: &mut R) {
    let w = shape.attention.width;
    init_modulation(store, &format!("{prefix}.mod1"), w, rng);
    init_attention(store, &format!("{prefix}.attn"), shape.attention, false, rng);
    init_modulation(store, &format!("{prefix}.mod2"), w, rng);
    init_feed_forward(store, &format!("{prefix}.ff"), w, shape.hidden, false, rng);
}

/// Adaptive block: noise tokens `[R, d, D]` cross-attend (DAG-attention)
/// to `z_emb: [R, d, D]`; every layer norm is modulated per node by the
/// condition `[d, D]`.
pub fn ada_block<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    noise: Var,
    z_emb: Var,
    mask: Option<Rc<Mask>>,
    condition: Var,
    shape: BlockShape,
) -> Result<Var, TensorError> {
    let h = modulated_norm(tape, store, &format!("{prefix}.mod1"), noise, condition)?;
    let a = multi_head_attention(tape, store, &format!("{prefix}.attn"), h, z_emb, mask, shape.attention, Normalizer::Dag)?;
    let n = tape.add(noise, a)?;
    let h = modulated_norm(tape, store, &format!("{prefix}.mod2"), n, condition)?;
    let f = feed_forward(tape, store, &format!("{prefix}.ff"), h)?;
    tape.add(n, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn uniform_rows_for_zero_logits() {
        let q = Array2::zeros((4, 2));
        let a = attention_matrix(&q, &q, None, Normalizer::Softmax);
        assert!(a.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn diagonal_mask_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
        let mask = Mask::from_fn(3, 3, |i, j| i == j);
        for kind in [Normalizer::Softmax] {
            let a = attention_matrix(&q, &q, Some(&mask), kind);
            assert_eq!(a, Array2::eye(3));
        }
    }

    #[test]
    fn one_query_two_equal_keys() {
        let q = array![[0.0, 0.0]];
        let k = array![[1.0, 2.0], [3.0, -1.0]];
        let a = attention_matrix(&q, &k, None, Normalizer::Dag);
        assert_eq!(a, array![[0.5, 0.5]]);
    }

    #[test]
    fn dag_attention_with_all_keys_masked_outputs_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = AttentionShape::new(4, 2).unwrap();
        let mut store = ParamStore::new();
        init_attention(&mut store, "a", shape, false, &mut rng);
        store.insert("a.o.b", Tensor::from_fn(&[4], |i| i as f32));
        let store = store.cast::<f64>();
        let mut tape = Tape::new();
        let x = tape.input(random(&[2, 3, 4], &mut rng)).unwrap();
        let mask = Rc::new(Mask::from_fn(3, 3, |_, _| false));
        let out = multi_head_attention(&mut tape, &store, "a", x, x, Some(mask), shape, Normalizer::Dag).unwrap();
        for row in tape.value(out).data().chunks(4) {
            assert_eq!(row, &[0.0, 1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn single_head_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = AttentionShape::new(3, 1).unwrap();
        let mut store = ParamStore::new();
        init_attention(&mut store, "a", shape, false, &mut rng);
        let store = store.cast::<f64>();
        let xt = random(&[1, 4, 3], &mut rng);
        let mut tape = Tape::new();
        let x = tape.input(xt.clone()).unwrap();
        let out = multi_head_attention(&mut tape, &store, "a", x, x, None, shape, Normalizer::Softmax).unwrap();
        let mat = |name: &str| {
            let t = store.get(name).unwrap();
            Array2::from_shape_vec((t.shape()[0], t.shape()[1]), t.data().to_vec()).unwrap()
        };
        let vec = |name: &str| ndarray::Array1::from(store.get(name).unwrap().data().to_vec());
        let x = Array2::from_shape_vec((4, 3), xt.data().to_vec()).unwrap();
        let q = x.dot(&mat("a.q.w")) + vec("a.q.b");
        let k = x.dot(&mat("a.k.w")) + vec("a.k.b");
        let v = x.dot(&mat("a.v.w")) + vec("a.v.b");
        let a = attention_matrix(&q, &k, None, Normalizer::Softmax);
        let expect = a.dot(&v).dot(&mat("a.o.w")) + vec("a.o.b");
        let got = Array2::from_shape_vec((4, 3), tape.value(out).data().to_vec()).unwrap();
        assert!((got - expect).iter().all(|e| e.abs() < 1e-12));
    }

    fn block_shape() -> BlockShape {
        BlockShape { attention: AttentionShape::new(4, 2).unwrap(), hidden: 8 }
    }

    #[test]
    fn zero_output_projections_make_block_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        init_transformer_block(&mut store, "b", block_shape(), &mut rng);
        store.insert("b.attn.o.w", Tensor::zeros(&[4, 4]));
        store.insert("b.ff.fc2.w", Tensor::zeros(&[8, 4]));
        let store = store.cast::<f64>();
        let mut tape = Tape::new();
        let x = tape.input(random(&[2, 3, 4], &mut rng)).unwrap();
        let y = transformer_block(&mut tape, &store, "b", x, None, block_shape(), Normalizer::Softmax).unwrap();
        assert_eq!(tape.value(x), tape.value(y));
    }

    #[test]
    fn transformer_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        init_transformer_block(&mut store, "b", block_shape(), &mut rng);
        let store = store.cast::<f64>();
        let mut tape = Tape::new();
        let x = tape.input(random(&[2, 3, 4], &mut rng)).unwrap();
        let mask = Rc::new(Mask::from_fn(3, 3, |i, j| j <= i));
        let y = transformer_block(&mut tape, &store, "b", x, Some(mask), block_shape(), Normalizer::Softmax).unwrap();
        let target = tape.input(random(&[2, 3, 4], &mut rng)).unwrap();
        let loss = tape.mse(y, target).unwrap();
        // softmax is invariant to a key bias shared by every key
        let grads = tape.gradients(loss).unwrap();
        assert!(grads.param("b.attn.k.b").unwrap().data().iter().all(|g| g.abs() < 1e-12));
        let names: Vec<String> = tape.param_names().filter(|n| *n != "b.attn.k.b").cloned().collect();
        for name in names {
            let err = finite_difference_check(&mut tape, loss, &store, &name, 1e-4).unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn ada_block_reduces_to_unconditional_norm_at_init() {
        // zero-initialized producers give scale 1 and shift 0 for any condition
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        init_ada_block(&mut store, "a", block_shape(), &mut rng);
        let store = store.cast::<f64>();
        let mut tape = Tape::new();
        let noise = tape.input(random(&[2, 3, 4], &mut rng)).unwrap();
        let z = tape.input(random(&[2, 3, 4], &mut rng)).unwrap();
        let cond = tape.input(random(&[3, 4], &mut rng)).unwrap();
        let (scale, shift) = modulation(&mut tape, &store, "a.mod1", cond).unwrap();
        assert!(tape.value(scale).data().iter().all(|&v| v == 1.0));
        assert!(tape.value(shift).data().iter().all(|&v| v == 0.0));
        let mask = Rc::new(Mask::from_fn(3, 3, |i, j| j < i));
        let out = ada_block(&mut tape, &store, "a", noise, z, Some(mask), cond, block_shape()).unwrap();
        assert!(tape.value(out).is_finite());
    }
}
