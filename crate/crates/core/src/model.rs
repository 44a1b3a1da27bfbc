//! Architecture hyperparameters and the errors shared by the encoder and decoder.

use thiserror::Error;

use crate::attention::{AttentionShape, BlockShape};
use crate::sim::SimError;
use crate::tensor::{Real, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("dataset has no noise matrix")]
    MissingNoise,
    #[error("target rows overlap the conditioning rows")]
    Leakage,
    #[error("graph has {graph} nodes but the input has {input}")]
    NodeMismatch { graph: usize, input: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Hyperparameters of both transformer stacks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Token width `d_h`.
    pub width: usize,
    pub heads: usize,
    /// Feed-forward hidden width inside every block.
    pub ff_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Width of both hidden layers of the encoder's prediction head.
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self { width: 256, heads: 8, ff_hidden: 512, encoder_layers: 4, decoder_layers: 4, head_hidden: 64 }
    }

    pub fn desk() -> Self {
        Self { width: 32, heads: 4, ff_hidden: 64, encoder_layers: 4, decoder_layers: 4, head_hidden: 64 }
    }

    /// Smallest sensible model, used for gradient checks.
    pub fn tiny() -> Self {
        Self { width: 8, heads: 2, ff_hidden: 16, encoder_layers: 2, decoder_layers: 2, head_hidden: 8 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.width == 0 || self.ff_hidden == 0 || self.head_hidden == 0 {
            return Err(ModelError::Config("widths must be positive".into()));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(ModelError::Config("layer counts must be positive".into()));
        }
        AttentionShape::new(self.width, self.heads)?;
        Ok(())
    }

    pub fn block_shape(&self) -> BlockShape {
        BlockShape {
            attention: AttentionShape { width: self.width, heads: self.heads },
            hidden: self.ff_hidden,
        }
    }

    /// `key=value` lines, parsed back by [`ModelConfig::from_entries`].
    pub fn entries(&self) -> Vec<(String, String)> {
        [
            ("width", self.width),
            ("heads", self.heads),
            ("ff_hidden", self.ff_hidden),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("head_hidden", self.head_hidden),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }

    /// Overrides fields of `self` from matching keys; unknown keys are ignored.
    pub fn with_entries<'a>(mut self, entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, ModelError> {
        for (k, v) in entries {
            let slot = match k {
                "width" => &mut self.width,
                "heads" => &mut self.heads,
                "ff_hidden" => &mut self.ff_hidden,
                "encoder_layers" => &mut self.encoder_layers,
                "decoder_layers" => &mut self.decoder_layers,
                "head_hidden" => &mut self.head_hidden,
                _ => continue,
            };
            *slot = v.parse().map_err(|_| ModelError::Config(format!("{k}={v}")))?;
        }
        self.validate()?;
        Ok(self)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub(crate) fn matrix_tensor<T: Real>(x: &ndarray::Array2<f64>, what: &'static str) -> Result<Tensor<T>, ModelError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite(what));
    }
    Ok(Tensor::new(vec![x.nrows(), x.ncols()], x.iter().map(|&v| T::lit(v)).collect())?)
}

pub(crate) fn tensor_matrix<T: Real>(t: &Tensor<T>) -> ndarray::Array2<f64> {
    let shape = t.shape();
    let (rows, cols) = (shape[0], shape[1..].iter().product());
    ndarray::Array2::from_shape_vec((rows, cols), t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .expect("shape matches data")
}
