use std::fmt;

use ndarray::Array2;
use rand::Rng;

use super::graphs::{sample_dag, GraphScheme};
use super::mechanism::{sample_mechanisms, MechanismKind, MechanismRanges, MechanismSpec, NodeMechanism, RFF_FEATURES};
use super::noise::{NoiseFamily, NoiseSpec};
use super::{Dag, SimError};

/// Which SCM distribution a sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistributionTag {
    In,
    Out,
}

impl DistributionTag {
    pub fn tag(self) -> &'static str {
        match self {
            DistributionTag::In => "IN",
            DistributionTag::Out => "OUT",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "IN" => Some(DistributionTag::In),
            "OUT" => Some(DistributionTag::Out),
            _ => None,
        }
    }
}

/// Restriction on the mechanism kinds an SCM distribution produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MechanismMix {
    Both,
    Linear,
    Rff,
}

impl MechanismMix {
    pub fn tag(self) -> &'static str {
        match self {
            MechanismMix::Both => "BOTH",
            MechanismMix::Linear => "LIN",
            MechanismMix::Rff => "RFF",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "BOTH" => Some(MechanismMix::Both),
            "LIN" => Some(MechanismMix::Linear),
            "RFF" => Some(MechanismMix::Rff),
            _ => None,
        }
    }

    fn pick<R: Rng>(self, rng: &mut R) -> MechanismKind {
        match self {
            MechanismMix::Linear => MechanismKind::Linear,
            MechanismMix::Rff => MechanismKind::Rff,
            MechanismMix::Both => {
                if rng.gen_bool(0.5) {
                    MechanismKind::Linear
                } else {
                    MechanismKind::Rff
                }
            }
        }
    }
}

impl fmt::Display for MechanismMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Parameterized graph family; concrete parameters are drawn per SCM.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphFamily {
    /// Edge probability chosen so the expected number of edges per node lies in the range.
    ErdosRenyi { edges_per_node: (f64, f64) },
    ScaleFree { m: usize },
    WattsStrogatz { k: usize, rewire: f64 },
    StochasticBlock { blocks: (usize, usize), p_within: f64, p_between: f64 },
}

impl GraphFamily {
    fn concretize<R: Rng>(&self, d: usize, rng: &mut R) -> GraphScheme {
        match *self {
            GraphFamily::ErdosRenyi { edges_per_node } => {
                let e = if edges_per_node.0 == edges_per_node.1 {
                    edges_per_node.0
                } else {
                    rng.gen_range(edges_per_node.0..edges_per_node.1)
                };
                let p = if d > 1 { (2.0 * e / (d as f64 - 1.0)).min(1.0) } else { 0.0 };
                GraphScheme::ErdosRenyi { edge_prob: p }
            }
            GraphFamily::ScaleFree { m } => GraphScheme::ScaleFree { m },
            GraphFamily::WattsStrogatz { k, rewire } => GraphScheme::WattsStrogatz { k, rewire },
            GraphFamily::StochasticBlock { blocks, p_within, p_between } => GraphScheme::StochasticBlock {
                blocks: rng.gen_range(blocks.0..=blocks.1),
                p_within,
                p_between,
            },
        }
    }
}

/// Distribution over SCMs with a fixed node count.
#[derive(Clone, Debug, PartialEq)]
pub struct ScmDistributionConfig {
    pub d: usize,
    pub tag: DistributionTag,
    pub graphs: Vec<(GraphFamily, f64)>,
    pub noise_family: NoiseFamily,
    pub noise_scale: (f64, f64),
    pub mechanisms: MechanismMix,
    pub ranges: MechanismRanges,
}

impl ScmDistributionConfig {
    /// In-distribution preset: ER and scale-free graphs, gaussian noise.
    pub fn p_in(d: usize, mechanisms: MechanismMix) -> Self {
        Self {
            d,
            tag: DistributionTag::In,
            graphs: vec![
                (GraphFamily::ErdosRenyi { edges_per_node: (1.0, 2.0) }, 1.0),
                (GraphFamily::ScaleFree { m: 2 }, 1.0),
            ],
            noise_family: NoiseFamily::Gaussian,
            noise_scale: (0.5, 1.0),
            mechanisms,
            ranges: MechanismRanges {
                linear_weight: (0.5, 2.0),
                rff_lengthscale: (3.0, 10.0),
                rff_output_scale: (1.0, 3.0),
                rff_features: RFF_FEATURES,
            },
        }
    }

    /// Shifted preset: Watts–Strogatz and SBM graphs, Laplace noise, shorter
    /// RFF lengthscales and larger output scales.
    pub fn p_out(d: usize, mechanisms: MechanismMix) -> Self {
        Self {
            d,
            tag: DistributionTag::Out,
            graphs: vec![
                (GraphFamily::WattsStrogatz { k: 4, rewire: 0.3 }, 1.0),
                (GraphFamily::StochasticBlock { blocks: (2, 4), p_within: 0.4, p_between: 0.06 }, 1.0),
            ],
            noise_family: NoiseFamily::Laplace,
            noise_scale: (0.5, 1.5),
            mechanisms,
            ranges: MechanismRanges {
                linear_weight: (0.5, 2.0),
                rff_lengthscale: (1.0, 3.0),
                rff_output_scale: (3.0, 6.0),
                rff_features: RFF_FEATURES,
            },
        }
    }

    pub fn preset(tag: DistributionTag, d: usize, mechanisms: MechanismMix) -> Self {
        match tag {
            DistributionTag::In => Self::p_in(d, mechanisms),
            DistributionTag::Out => Self::p_out(d, mechanisms),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.d == 0 {
            return Err(SimError::InvalidParameter("d must be at least 1".into()));
        }
        if self.graphs.is_empty() || self.graphs.iter().any(|(_, w)| !(*w >= 0.0)) {
            return Err(SimError::InvalidParameter("graph weights must be non-negative and non-empty".into()));
        }
        if !(self.noise_scale.0 > 0.0 && self.noise_scale.0 <= self.noise_scale.1) {
            return Err(SimError::InvalidParameter(format!("bad noise scale range {:?}", self.noise_scale)));
        }
        Ok(())
    }
}

/// Provenance of a sampled SCM.
#[derive(Clone, Debug, PartialEq)]
pub struct ScmInfo {
    pub distribution: DistributionTag,
    pub mechanism: MechanismKind,
    pub graph: String,
}

/// Additive-noise SCM: `X_i = F_i(PA(X_i)) + N_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scm {
    dag: Dag,
    mechanisms: MechanismSpec,
    noise: NoiseSpec,
    info: Option<ScmInfo>,
    order: Vec<usize>,
}

impl Scm {
    pub fn new(dag: Dag, mechanisms: MechanismSpec, noise: NoiseSpec) -> Result<Self, SimError> {
        if noise.d() != dag.d() {
            return Err(SimError::InvalidParameter(format!(
                "noise for {} nodes on a {}-node graph",
                noise.d(),
                dag.d()
            )));
        }
        // re-check mechanism/graph consistency since both were built separately
        let mechanisms = MechanismSpec::new(mechanisms.nodes().to_vec(), &dag)?;
        let order = dag.topological_order()?;
        Ok(Self { dag, mechanisms, noise, info: None, order })
    }

    pub fn with_info(mut self, info: ScmInfo) -> Self {
        self.info = Some(info);
        self
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn d(&self) -> usize {
        self.dag.d()
    }

    pub fn mechanisms(&self) -> &MechanismSpec {
        &self.mechanisms
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn info(&self) -> Option<&ScmInfo> {
        self.info.as_ref()
    }

    /// `F(x)` for one row.
    pub fn eval_row(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.mechanisms.node(i).eval(x);
        }
    }

    /// Row-wise `F(X)`.
    pub fn eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        let mut buf = vec![0.0; self.d()];
        for (r, row) in x.rows().into_iter().enumerate() {
            let row = row.to_vec();
            self.eval_row(&row, &mut buf);
            for (i, &v) in buf.iter().enumerate() {
                out[[r, i]] = v;
            }
        }
        out
    }

    /// Ancestral evaluation in topological order. Intervened (constant)
    /// nodes ignore their noise column.
    pub fn generate(&self, noise: &Array2<f64>) -> Result<Array2<f64>, SimError> {
        self.check_cols(noise)?;
        let mut x = Array2::zeros(noise.raw_dim());
        let mut row = vec![0.0; self.d()];
        for r in 0..noise.nrows() {
            row.iter_mut().for_each(|v| *v = 0.0);
            for &i in &self.order {
                let m = self.mechanisms.node(i);
                row[i] = m.eval(&row) + if m.is_constant() { 0.0 } else { noise[[r, i]] };
            }
            for (i, &v) in row.iter().enumerate() {
                x[[r, i]] = v;
            }
        }
        Ok(x)
    }

    /// Iterates `x ← F(x) + n` from `x = n` (constants ignore `n`).
    pub fn fixed_point(&self, noise: &Array2<f64>, iterations: usize) -> Result<Array2<f64>, SimError> {
        self.check_cols(noise)?;
        let d = self.d();
        let mut x = noise.clone();
        let mut next = vec![0.0; d];
        for r in 0..noise.nrows() {
            let mut cur: Vec<f64> = x.row(r).to_vec();
            for _ in 0..iterations {
                for (i, nv) in next.iter_mut().enumerate() {
                    let m = self.mechanisms.node(i);
                    *nv = m.eval(&cur) + if m.is_constant() { 0.0 } else { noise[[r, i]] };
                }
                std::mem::swap(&mut cur, &mut next);
            }
            for (i, &v) in cur.iter().enumerate() {
                x[[r, i]] = v;
            }
        }
        Ok(x)
    }

    /// `do(X_node = value)`: constant mechanism, incoming edges removed.
    pub fn intervene(&self, node: usize, value: f64) -> Result<Scm, SimError> {
        if node >= self.d() {
            return Err(SimError::InvalidNode { node, d: self.d() });
        }
        let dag = self.dag.without_parents_of(node);
        let mut mechanisms = self.mechanisms.clone();
        mechanisms.replace(node, NodeMechanism::Constant(value));
        let order = dag.topological_order()?;
        Ok(Scm { dag, mechanisms, noise: self.noise.clone(), info: self.info.clone(), order })
    }

    fn check_cols(&self, m: &Array2<f64>) -> Result<(), SimError> {
        if m.ncols() != self.d() {
            return Err(SimError::InvalidParameter(format!(
                "matrix has {} columns for a {}-node SCM",
                m.ncols(),
                self.d()
            )));
        }
        Ok(())
    }
}

/// Draws graph, mechanisms and noise scales from `config`.
pub fn sample_scm<R: Rng>(config: &ScmDistributionConfig, rng: &mut R) -> Result<Scm, SimError> {
    config.validate()?;
    let total: f64 = config.graphs.iter().map(|(_, w)| w).sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut family = &config.graphs[config.graphs.len() - 1].0;
    for (g, w) in &config.graphs {
        if pick < *w {
            family = g;
            break;
        }
        pick -= w;
    }
    let scheme = family.concretize(config.d, rng);
    let dag = sample_dag(&scheme, config.d, rng)?;
    let kind = config.mechanisms.pick(rng);
    let mechanisms = sample_mechanisms(kind, &config.ranges, &dag, rng)?;
    let (lo, hi) = config.noise_scale;
    let scales = (0..config.d).map(|_| if lo == hi { lo } else { rng.gen_range(lo..hi) }).collect();
    let noise = NoiseSpec::new(config.noise_family, scales)?;
    Ok(Scm::new(dag, mechanisms, noise)?.with_info(ScmInfo {
        distribution: config.tag,
        mechanism: kind,
        graph: scheme.to_string(),
    }))
}
