//! Conditional fixed-point decoder `z ↦ 𝒯(z, D_X, 𝓖)`.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use crate::attention::{ada_block, affine, init_ada_block, init_affine, normal_init};
use crate::encoder::functional_target;
use crate::model::{matrix_tensor, tensor_matrix, ModelConfig, ModelError};
use crate::sim::{Dag, Dataset};
use crate::tape::{Mask, Tape, Var};
use crate::tensor::{ParamStore, Real};

/// Decoder mask: node `i` reads node `j` iff `j` is a parent of `i`.
pub fn parent_mask(dag: &Dag) -> Mask {
    Mask::from_parents(dag.d(), |i, j| dag.is_parent(i, j), false)
}

pub fn init_decoder<R: Rng>(config: &ModelConfig, rng: &mut R) -> ParamStore<f32> {
    let mut store = ParamStore::new();
    let w = config.width;
    let std = 1.0 / (w as f64).sqrt();
    for name in ["dec.codebook.w", "dec.position.w", "dec.start.w"] {
        store.insert(name, normal_init(&[w, w], std, rng));
    }
    for layer in 0..config.decoder_layers {
        init_ada_block(&mut store, &format!("dec.block{layer}"), config.block_shape(), rng);
    }
    init_affine(&mut store, "dec.out", w, 1, false, rng);
    store
}

/// Condition-derived tensors, all `[d, d_h]`.
#[derive(Clone, Copy, Debug)]
pub struct Condition {
    pub mu: Var,
    pub codebook: Var,
    pub position: Var,
    pub start: Var,
}

pub fn build_condition<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    mu: Var,
    dag: &Dag,
) -> Result<Condition, ModelError> {
    let d = tape.shape(mu)[0];
    if d != dag.d() {
        return Err(ModelError::NodeMismatch { graph: dag.d(), input: d });
    }
    let mut project = |name: &str| -> Result<Var, ModelError> {
        let w = tape.param(store, name)?;
        Ok(tape.affine(mu, w, None)?)
    };
    let codebook = project("dec.codebook.w")?;
    let position = project("dec.position.w")?;
    let start = project("dec.start.w")?;
    Ok(Condition { mu, codebook, position, start })
}

/// `z_emb[r] = [z_{r,i} · C_i]_i + P` for `z: [R, d]`.
pub fn embed_point<T: Real>(tape: &mut Tape<T>, cond: &Condition, z: Var) -> Result<Var, ModelError> {
    let scaled = tape.row_scale(z, cond.codebook)?;
    Ok(tape.add(scaled, cond.position)?)
}

/// Records `𝒯(z)` for every row of `z: [R, d]`, giving `[R, d]`.
pub fn decode<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    cond: &Condition,
    z: Var,
    dag: &Dag,
) -> Result<Var, ModelError> {
    let (rows, d) = (tape.shape(z)[0], tape.shape(z)[1]);
    if d != dag.d() {
        return Err(ModelError::NodeMismatch { graph: dag.d(), input: d });
    }
    let z_emb = embed_point(tape, cond, z)?;
    let mask = Rc::new(parent_mask(dag));
    let mut noise = tape.expand(cond.start, rows)?;
    for layer in 0..config.decoder_layers {
        let prefix = format!("dec.block{layer}");
        noise = ada_block(tape, store, &prefix, noise, z_emb, Some(mask.clone()), cond.mu, config.block_shape())?;
    }
    let out = affine(tape, store, "dec.out", noise)?;
    Ok(tape.reshape(out, &[rows, d])?)
}

/// Entrywise MSE of `𝒯(D_X′)` against `F(D_X′)` with the condition taken
/// from the encoder output `mu` of the disjoint conditioning split.
pub fn decoder_loss<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    mu: &Array2<f64>,
    conditioning: &Dataset,
    target: &Dataset,
) -> Result<Var, ModelError> {
    if conditioning.shares_rows_with(target) {
        return Err(ModelError::Leakage);
    }
    let f = functional_target(target)?;
    let mu = tape.input(matrix_tensor(mu, "condition")?)?;
    let cond = build_condition(tape, store, mu, &target.dag)?;
    let z = tape.input(matrix_tensor(&target.x, "targets")?)?;
    let pred = decode(tape, store, config, &cond, z, &target.dag)?;
    let f = tape.input(matrix_tensor(&f, "targets")?)?;
    Ok(tape.mse(pred, f)?)
}

/// Upper bound on `rows · d` per recorded decode, to bound memory.
pub const DECODE_TOKENS_PER_CHUNK: usize = 2048;

/// Evaluates `𝒯` on the rows of `z` in chunks, without gradients.
pub fn decode_rows(
    store: &ParamStore<f32>,
    config: &ModelConfig,
    mu: &Array2<f64>,
    dag: &Dag,
    z: &Array2<f64>,
) -> Result<Array2<f64>, ModelError> {
    let (n, d) = z.dim();
    if d != dag.d() || mu.nrows() != d {
        return Err(ModelError::NodeMismatch { graph: dag.d(), input: d });
    }
    let chunk = (DECODE_TOKENS_PER_CHUNK / d.max(1)).max(1);
    let mut out = Array2::zeros((n, d));
    let mu_t = matrix_tensor::<f32>(mu, "condition")?;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let mut tape = Tape::new();
        let m = tape.input(mu_t.clone())?;
        let cond = build_condition(&mut tape, store, m, dag)?;
        let rows = z.slice(ndarray::s![start..end, ..]).to_owned();
        let zv = tape.input(matrix_tensor(&rows, "decoder input")?)?;
        let pred = decode(&mut tape, store, config, &cond, zv, dag)?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&tensor_matrix(tape.value(pred)));
        start = end;
    }
    Ok(out)
}
