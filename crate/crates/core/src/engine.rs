//! Noise abduction, fixed-point generation, interventions and marginal noise
//! resampling on top of any functional model `z ↦ 𝒯(z)`.

use ndarray::{Array2, Axis};
use rand::Rng;
use thiserror::Error;

use crate::decoder::decode_rows;
use crate::encoder::condition_of;
use crate::model::{ModelConfig, ModelError};
use crate::sim::{Dag, Scm, Standardization};
use crate::tensor::ParamStore;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model has {model} nodes but the input has {input}")]
    NodeMismatch { model: usize, input: usize },
    #[error("node {node} out of range for {d} nodes")]
    InvalidNode { node: usize, d: usize },
    #[error("node {0} is clamped twice")]
    DuplicateNode(usize),
    #[error("non-finite iterate")]
    NonFinite,
    #[error("need at least two noise rows")]
    TooFewRows,
}

/// A map `ℝ^d → ℝ^d` applied row-wise, in standardized units.
pub trait FunctionalModel {
    fn d(&self) -> usize;
    fn apply(&self, z: &Array2<f64>) -> Result<Array2<f64>, EngineError>;
}

fn check_width(model: &dyn FunctionalModel, x: &Array2<f64>) -> Result<(), EngineError> {
    if x.ncols() != model.d() {
        return Err(EngineError::NodeMismatch { model: model.d(), input: x.ncols() });
    }
    Ok(())
}

/// The true mechanism of a simulator SCM, expressed in standardized units:
/// `F_std(z) = (F(z·s + m) − m) / s`.
pub struct OracleModel<'a> {
    scm: &'a Scm,
    stats: Standardization,
}

impl<'a> OracleModel<'a> {
    pub fn new(scm: &'a Scm, stats: Standardization) -> Self {
        Self { scm, stats }
    }
}

impl FunctionalModel for OracleModel<'_> {
    fn d(&self) -> usize {
        self.scm.d()
    }

    fn apply(&self, z: &Array2<f64>) -> Result<Array2<f64>, EngineError> {
        check_width(self, z)?;
        Ok(self.stats.apply(&self.scm.eval(&self.stats.invert(z))))
    }
}

/// `𝒯 ≡ 0`, the trivial baseline.
pub struct ZeroModel(pub usize);

impl FunctionalModel for ZeroModel {
    fn d(&self) -> usize {
        self.0
    }

    fn apply(&self, z: &Array2<f64>) -> Result<Array2<f64>, EngineError> {
        check_width(self, z)?;
        Ok(Array2::zeros(z.raw_dim()))
    }
}

/// Trained decoder instantiated on the condition of one dataset.
pub struct LearnedModel<'a> {
    config: &'a ModelConfig,
    decoder: &'a ParamStore<f32>,
    mu: Array2<f64>,
    dag: Dag,
}

impl<'a> LearnedModel<'a> {
    /// Encodes the standardized conditioning observations `x` once.
    pub fn condition(
        config: &'a ModelConfig,
        encoder: &ParamStore<f32>,
        decoder: &'a ParamStore<f32>,
        x: &Array2<f64>,
        dag: &Dag,
    ) -> Result<Self, EngineError> {
        let mu = condition_of(encoder, config, x, dag)?;
        Ok(Self { config, decoder, mu, dag: dag.clone() })
    }

    pub fn mu(&self) -> &Array2<f64> {
        &self.mu
    }
}

impl FunctionalModel for LearnedModel<'_> {
    fn d(&self) -> usize {
        self.dag.d()
    }

    fn apply(&self, z: &Array2<f64>) -> Result<Array2<f64>, EngineError> {
        check_width(self, z)?;
        Ok(decode_rows(self.decoder, self.config, &self.mu, &self.dag, z)?)
    }
}

/// `N̂ = X − 𝒯(X)`.
pub fn predict_noise(model: &dyn FunctionalModel, x: &Array2<f64>) -> Result<Array2<f64>, EngineError> {
    Ok(x - &model.apply(x)?)
}

/// Clamped nodes and their values, in standardized units.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterventionSpec {
    clamps: Vec<(usize, f64)>,
}

impl InterventionSpec {
    pub fn new(clamps: Vec<(usize, f64)>, d: usize) -> Result<Self, EngineError> {
        for (k, &(node, _)) in clamps.iter().enumerate() {
            if node >= d {
                return Err(EngineError::InvalidNode { node, d });
            }
            if clamps[..k].iter().any(|&(other, _)| other == node) {
                return Err(EngineError::DuplicateNode(node));
            }
        }
        Ok(Self { clamps })
    }

    pub fn single(node: usize, value: f64, d: usize) -> Result<Self, EngineError> {
        Self::new(vec![(node, value)], d)
    }

    pub fn clamps(&self) -> &[(usize, f64)] {
        &self.clamps
    }

    fn apply(&self, x: &mut Array2<f64>) {
        for &(node, value) in &self.clamps {
            x.column_mut(node).fill(value);
        }
    }
}

/// Iterates `x ← 𝒯(x) + n` from `x = n` for `iterations` steps, clamping
/// after every step.
pub fn fixed_point(
    model: &dyn FunctionalModel,
    noise: &Array2<f64>,
    iterations: usize,
    intervention: &InterventionSpec,
) -> Result<Array2<f64>, EngineError> {
    check_width(model, noise)?;
    let mut x = noise.clone();
    intervention.apply(&mut x);
    for _ in 0..iterations {
        x = model.apply(&x)? + noise;
        intervention.apply(&mut x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite);
        }
    }
    Ok(x)
}

/// Observational generation: exactly `d` iterations.
pub fn generate(model: &dyn FunctionalModel, noise: &Array2<f64>) -> Result<Array2<f64>, EngineError> {
    fixed_point(model, noise, model.d(), &InterventionSpec::default())
}

pub fn generate_interventional(
    model: &dyn FunctionalModel,
    noise: &Array2<f64>,
    intervention: &InterventionSpec,
) -> Result<Array2<f64>, EngineError> {
    for &(node, _) in intervention.clamps() {
        if node >= model.d() {
            return Err(EngineError::InvalidNode { node, d: model.d() });
        }
    }
    fixed_point(model, noise, model.d(), intervention)
}

/// Per-node empirical quantile functions of estimated noise.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalNoiseModel {
    sorted: Vec<Vec<f64>>,
}

impl MarginalNoiseModel {
    pub fn fit(noise: &Array2<f64>) -> Result<Self, EngineError> {
        if noise.nrows() < 2 {
            return Err(EngineError::TooFewRows);
        }
        let sorted = noise
            .axis_iter(Axis(1))
            .map(|col| {
                let mut v = col.to_vec();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        Ok(Self { sorted })
    }

    pub fn d(&self) -> usize {
        self.sorted.len()
    }

    pub fn support(&self, node: usize) -> &[f64] {
        &self.sorted[node]
    }

    /// Linear interpolation of the order statistics at position `u · (m − 1)`.
    pub fn quantile(&self, node: usize, u: f64) -> f64 {
        let v = &self.sorted[node];
        let pos = u.clamp(0.0, 1.0) * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(v.len() - 1);
        let t = pos - lo as f64;
        v[lo] + t * (v[hi] - v[lo])
    }

    /// `m` rows with each node drawn independently by inverse CDF.
    pub fn sample<R: Rng>(&self, m: usize, rng: &mut R) -> Array2<f64> {
        let mut out = Array2::zeros((m, self.d()));
        for r in 0..m {
            for node in 0..self.d() {
                out[[r, node]] = self.quantile(node, rng.gen::<f64>());
            }
        }
        out
    }
}

/// A functional model together with the statistics that map user units to
/// the model's standardized units.
pub struct Session<'a> {
    pub model: &'a dyn FunctionalModel,
    pub stats: Standardization,
}

impl Session<'_> {
    pub fn predict_noise(&self, x: &Array2<f64>) -> Result<Array2<f64>, EngineError> {
        check_width(self.model, x)?;
        let n = predict_noise(self.model, &self.stats.apply(x))?;
        Ok(self.stats.invert_noise(&n))
    }

    pub fn generate(&self, noise: &Array2<f64>) -> Result<Array2<f64>, EngineError> {
        check_width(self.model, noise)?;
        let x = generate(self.model, &self.stats.apply_noise(noise))?;
        Ok(self.stats.invert(&x))
    }

    /// Clamp values are in user units.
    pub fn intervene(&self, noise: &Array2<f64>, clamps: &[(usize, f64)]) -> Result<Array2<f64>, EngineError> {
        check_width(self.model, noise)?;
        let d = self.model.d();
        for &(node, _) in clamps {
            if node >= d {
                return Err(EngineError::InvalidNode { node, d });
            }
        }
        let spec = InterventionSpec::new(clamps.iter().map(|&(i, a)| (i, self.stats.value(i, a))).collect(), d)?;
        let x = generate_interventional(self.model, &self.stats.apply_noise(noise), &spec)?;
        let mut x = self.stats.invert(&x);
        for &(node, a) in clamps {
            x.column_mut(node).fill(a);
        }
        Ok(x)
    }
}
