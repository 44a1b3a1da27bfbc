use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::noise::sample_noise;
use super::scm::{DistributionTag, Scm};
use super::mechanism::MechanismKind;
use super::{Dag, SimError};

/// Per-node affine standardization `x ↦ (x − mean) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Column means and population standard deviations; constant columns get scale 1.
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (i, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[i]) / self.scale[i]);
        }
        out
    }

    pub fn invert(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (i, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.scale[i] + self.mean[i]);
        }
        out
    }

    /// Noise only rescales: the mean is absorbed by the mechanisms.
    pub fn apply_noise(&self, n: &Array2<f64>) -> Array2<f64> {
        let mut out = n.clone();
        for (i, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v / self.scale[i]);
        }
        out
    }

    pub fn invert_noise(&self, n: &Array2<f64>) -> Array2<f64> {
        let mut out = n.clone();
        for (i, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.scale[i]);
        }
        out
    }

    pub fn value(&self, node: usize, raw: f64) -> f64 {
        (raw - self.mean[node]) / self.scale[node]
    }

    pub fn raw_value(&self, node: usize, standardized: f64) -> f64 {
        standardized * self.scale[node] + self.mean[node]
    }
}

/// Provenance carried with a dataset.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub distribution: Option<DistributionTag>,
    pub mechanism: Option<MechanismKind>,
    /// Index of the first row within the simulated pool it was split from.
    pub row_start: u64,
    /// Present when `x` is stored in standardized units.
    pub standardization: Option<Standardization>,
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub noise: Option<Array2<f64>>,
    pub dag: Dag,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: Array2<f64>, noise: Option<Array2<f64>>, dag: Dag, meta: DatasetMeta) -> Result<Self, SimError> {
        if x.ncols() != dag.d() || x.nrows() == 0 {
            return Err(SimError::InvalidParameter(format!(
                "observations {}x{} for a {}-node graph",
                x.nrows(),
                x.ncols(),
                dag.d()
            )));
        }
        if let Some(n) = &noise {
            if n.dim() != x.dim() {
                return Err(SimError::InvalidParameter("noise and observations differ in shape".into()));
            }
        }
        if let Some(st) = &meta.standardization {
            if st.d() != dag.d() {
                return Err(SimError::InvalidParameter("standardization width mismatch".into()));
            }
        }
        Ok(Self { x, noise, dag, meta })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_standardized(&self) -> bool {
        self.meta.standardization.is_some()
    }

    /// Rows `[start, end)` as a new dataset, keeping provenance.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Dataset, SimError> {
        if start >= end || end > self.n() {
            return Err(SimError::InvalidParameter(format!("row range {start}..{end} of {}", self.n())));
        }
        let mut meta = self.meta.clone();
        meta.row_start += start as u64;
        Dataset::new(
            self.x.slice(s![start..end, ..]).to_owned(),
            self.noise.as_ref().map(|n| n.slice(s![start..end, ..]).to_owned()),
            self.dag.clone(),
            meta,
        )
    }

    /// Splits off the first `n_first` rows.
    pub fn split(&self, n_first: usize) -> Result<(Dataset, Dataset), SimError> {
        Ok((self.slice_rows(0, n_first)?, self.slice_rows(n_first, self.n())?))
    }

    /// True when both datasets draw rows from the same simulated pool and their row ranges overlap.
    pub fn shares_rows_with(&self, other: &Dataset) -> bool {
        let same_pool = self.meta.generator == other.meta.generator && self.meta.seed == other.meta.seed;
        let (a0, a1) = (self.meta.row_start, self.meta.row_start + self.n() as u64);
        let (b0, b1) = (other.meta.row_start, other.meta.row_start + other.n() as u64);
        same_pool && a0 < b1 && b0 < a1
    }

    /// Standardized copy using `stats` (typically fitted on a conditioning split).
    pub fn standardized_with(&self, stats: &Standardization) -> Result<Dataset, SimError> {
        if self.is_standardized() {
            return Err(SimError::InvalidParameter("dataset is already standardized".into()));
        }
        let mut meta = self.meta.clone();
        meta.standardization = Some(stats.clone());
        Dataset::new(
            stats.apply(&self.x),
            self.noise.as_ref().map(|n| stats.apply_noise(n)),
            self.dag.clone(),
            meta,
        )
    }

    pub fn standardized(&self) -> Result<Dataset, SimError> {
        self.standardized_with(&Standardization::fit(&self.x))
    }

    /// Column means over rows.
    pub fn column_means(&self) -> Vec<f64> {
        self.x.mean_axis(Axis(0)).expect("non-empty").to_vec()
    }
}

/// Draws `n` noise rows and the matching observations from `scm`.
pub fn simulate_dataset<R: Rng>(scm: &Scm, n: usize, seed: u64, rng: &mut R) -> Result<Dataset, SimError> {
    let noise = sample_noise(scm.noise(), n, rng)?;
    let x = scm.generate(&noise)?;
    let info = scm.info();
    let meta = DatasetMeta {
        generator: "anm-simulator".into(),
        seed,
        distribution: info.map(|i| i.distribution),
        mechanism: info.map(|i| i.mechanism),
        row_start: 0,
        standardization: None,
        extra: info.map(|i| BTreeMap::from([("graph".to_string(), i.graph.clone())])).unwrap_or_default(),
    };
    Dataset::new(x, Some(noise), scm.dag().clone(), meta)
}
