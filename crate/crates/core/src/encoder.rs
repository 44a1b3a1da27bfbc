//! Dataset encoder: value embedding, transformer blocks alternating between the
//! sample and node axes, a prediction head for `F(D_X)` and the pooled condition.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use crate::attention::{affine, init_affine, init_transformer_block, transformer_block};
use crate::model::{matrix_tensor, tensor_matrix, ModelConfig, ModelError};
use crate::sim::{Dag, Dataset};
use crate::tape::{Mask, Normalizer, Tape, Var};
use crate::tensor::{ParamStore, Real};

/// Axis a block attends over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Samples,
    Nodes,
}

/// `[samples, nodes, samples, nodes, ...]`.
pub fn block_axis(layer: usize) -> Axis {
    if layer % 2 == 0 {
        Axis::Samples
    } else {
        Axis::Nodes
    }
}

/// Node-axis mask: parents plus the node itself.
pub fn node_mask(dag: &Dag) -> Mask {
    Mask::from_parents(dag.d(), |i, j| dag.is_parent(i, j), true)
}

pub fn init_encoder<R: Rng>(config: &ModelConfig, rng: &mut R) -> ParamStore<f32> {
    let mut store = ParamStore::new();
    init_affine(&mut store, "enc.embed", 1, config.width, false, rng);
    for layer in 0..config.encoder_layers {
        init_transformer_block(&mut store, &format!("enc.block{layer}"), config.block_shape(), rng);
    }
    init_affine(&mut store, "enc.head.fc1", config.width, config.head_hidden, false, rng);
    init_affine(&mut store, "enc.head.fc2", config.head_hidden, config.head_hidden, false, rng);
    init_affine(&mut store, "enc.head.fc3", config.head_hidden, 1, false, rng);
    store
}

/// Shared scalar-to-token affine map: `[n, d]` to `[n, d, d_h]`.
pub fn embed_values<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, x: &Array2<f64>) -> Result<Var, ModelError> {
    let (n, d) = x.dim();
    let input = matrix_tensor::<T>(x, "observations")?.reshaped(vec![n, d, 1])?;
    let input = tape.input(input)?;
    Ok(affine(tape, store, "enc.embed", input)?)
}

/// Encoded tokens `[n, d, d_h]` and the pooled condition `μ: [d, d_h]`.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub tokens: Var,
    pub pooled: Var,
}

pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    tokens: Var,
    dag: &Dag,
) -> Result<Embedding, ModelError> {
    let d = tape.shape(tokens)[1];
    if d != dag.d() {
        return Err(ModelError::NodeMismatch { graph: dag.d(), input: d });
    }
    let mask = Rc::new(node_mask(dag));
    let shape = config.block_shape();
    let mut t = tokens;
    for layer in 0..config.encoder_layers {
        let prefix = format!("enc.block{layer}");
        t = match block_axis(layer) {
            Axis::Samples => {
                let s = tape.swap_axes01(t)?;
                let s = transformer_block(tape, store, &prefix, s, None, shape, Normalizer::Softmax)?;
                tape.swap_axes01(s)?
            }
            Axis::Nodes => transformer_block(tape, store, &prefix, t, Some(mask.clone()), shape, Normalizer::Softmax)?,
        };
    }
    let pooled = tape.max_pool0(t)?;
    Ok(Embedding { tokens: t, pooled })
}

/// Prediction head applied per token: `[n, d, d_h]` to `[n, d]`.
pub fn predict_functional<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, tokens: Var) -> Result<Var, ModelError> {
    let (n, d) = (tape.shape(tokens)[0], tape.shape(tokens)[1]);
    let h = affine(tape, store, "enc.head.fc1", tokens)?;
    let h = tape.gelu(h)?;
    let h = affine(tape, store, "enc.head.fc2", h)?;
    let h = tape.gelu(h)?;
    let out = affine(tape, store, "enc.head.fc3", h)?;
    Ok(tape.reshape(out, &[n, d])?)
}

/// Records the encoder on standardized observations.
pub fn run_encoder<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    x: &Array2<f64>,
    dag: &Dag,
) -> Result<Embedding, ModelError> {
    let tokens = embed_values(tape, store, x)?;
    encode(tape, store, config, tokens, dag)
}

/// `F(D_X) = D_X − D_N` in the dataset's units.
pub fn functional_target(ds: &Dataset) -> Result<Array2<f64>, ModelError> {
    let noise = ds.noise.as_ref().ok_or(ModelError::MissingNoise)?;
    Ok(&ds.x - noise)
}

/// Entrywise MSE between the head's prediction and `F(D_X)` for one dataset.
pub fn encoder_loss<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    config: &ModelConfig,
    ds: &Dataset,
) -> Result<Var, ModelError> {
    let target = functional_target(ds)?;
    let emb = run_encoder(tape, store, config, &ds.x, &ds.dag)?;
    let pred = predict_functional(tape, store, emb.tokens)?;
    let target = tape.input(matrix_tensor(&target, "targets")?)?;
    Ok(tape.mse(pred, target)?)
}

/// Pooled condition `μ` for a standardized dataset, without gradients.
pub fn condition_of(store: &ParamStore<f32>, config: &ModelConfig, x: &Array2<f64>, dag: &Dag) -> Result<Array2<f64>, ModelError> {
    let mut tape = Tape::new();
    let emb = run_encoder(&mut tape, store, config, x, dag)?;
    Ok(tensor_matrix(tape.value(emb.pooled)))
}

/// Head prediction `F̂(D_X)` for a standardized dataset.
pub fn predict_dataset(store: &ParamStore<f32>, config: &ModelConfig, x: &Array2<f64>, dag: &Dag) -> Result<Array2<f64>, ModelError> {
    let mut tape = Tape::new();
    let emb = run_encoder(&mut tape, store, config, x, dag)?;
    let pred = predict_functional(&mut tape, store, emb.tokens)?;
    Ok(tensor_matrix(tape.value(pred)))
}
