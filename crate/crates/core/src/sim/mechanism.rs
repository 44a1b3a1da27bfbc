use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dag, SimError};

/// Number of random Fourier features per nonlinear mechanism.
pub const RFF_FEATURES: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MechanismKind {
    Linear,
    Rff,
}

impl MechanismKind {
    pub fn tag(self) -> &'static str {
        match self {
            MechanismKind::Linear => "LIN",
            MechanismKind::Rff => "RFF",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "LIN" => Some(MechanismKind::Linear),
            "RFF" => Some(MechanismKind::Rff),
            _ => None,
        }
    }
}

/// Functional relationship of one node, `F_i(PA(x))`.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeMechanism {
    Linear {
        parents: Vec<usize>,
        weights: Vec<f64>,
        bias: f64,
    },
    /// `c · sqrt(2/K) · Σ_k α_k cos(ω_k · x_PA + b_k) + bias`.
    Rff {
        parents: Vec<usize>,
        /// `K × |PA|`, row-major.
        frequencies: Vec<f64>,
        phases: Vec<f64>,
        amplitudes: Vec<f64>,
        output_scale: f64,
        bias: f64,
    },
    /// Result of an intervention: ignores parents and noise.
    Constant(f64),
}

impl NodeMechanism {
    pub fn zero() -> Self {
        NodeMechanism::Linear { parents: Vec::new(), weights: Vec::new(), bias: 0.0 }
    }

    pub fn parents(&self) -> &[usize] {
        match self {
            NodeMechanism::Linear { parents, .. } | NodeMechanism::Rff { parents, .. } => parents,
            NodeMechanism::Constant(_) => &[],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, NodeMechanism::Constant(_))
    }

    /// Evaluates the mechanism on a full row `x` of length `d`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            NodeMechanism::Linear { parents, weights, bias } => {
                bias + parents.iter().zip(weights).map(|(&p, &w)| w * x[p]).sum::<f64>()
            }
            NodeMechanism::Rff { parents, frequencies, phases, amplitudes, output_scale, bias } => {
                let k = phases.len();
                let np = parents.len();
                let mut acc = 0.0;
                for f in 0..k {
                    let omega = &frequencies[f * np..(f + 1) * np];
                    let arg: f64 = parents.iter().zip(omega).map(|(&p, &w)| w * x[p]).sum::<f64>() + phases[f];
                    acc += amplitudes[f] * arg.cos();
                }
                bias + output_scale * (2.0 / k as f64).sqrt() * acc
            }
            NodeMechanism::Constant(a) => *a,
        }
    }

    fn check(&self, node: usize, dag: &Dag) -> Result<(), SimError> {
        let expected: Vec<usize> = dag.parents(node).collect();
        let ok = match self {
            NodeMechanism::Linear { parents, weights, .. } => *parents == expected && weights.len() == parents.len(),
            NodeMechanism::Rff { parents, frequencies, phases, amplitudes, .. } => {
                *parents == expected
                    && !phases.is_empty()
                    && amplitudes.len() == phases.len()
                    && frequencies.len() == phases.len() * parents.len()
            }
            NodeMechanism::Constant(_) => expected.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::MissingParameters(node))
        }
    }
}

/// Per-node mechanisms, checked against a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismSpec {
    nodes: Vec<NodeMechanism>,
}

impl MechanismSpec {
    pub fn new(nodes: Vec<NodeMechanism>, dag: &Dag) -> Result<Self, SimError> {
        if nodes.len() != dag.d() {
            return Err(SimError::InvalidParameter(format!(
                "{} mechanisms for {} nodes",
                nodes.len(),
                dag.d()
            )));
        }
        for (i, m) in nodes.iter().enumerate() {
            m.check(i, dag)?;
        }
        Ok(Self { nodes })
    }

    pub fn node(&self, i: usize) -> &NodeMechanism {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeMechanism] {
        &self.nodes
    }

    pub(crate) fn replace(&mut self, i: usize, m: NodeMechanism) {
        self.nodes[i] = m;
    }
}

/// Ranges for mechanism sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismRanges {
    pub linear_weight: (f64, f64),
    pub rff_lengthscale: (f64, f64),
    pub rff_output_scale: (f64, f64),
    pub rff_features: usize,
}

fn uniform<R: Rng>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Draws every node's mechanism of the given kind. Roots get `F_i ≡ 0`.
pub fn sample_mechanisms<R: Rng>(
    kind: MechanismKind,
    ranges: &MechanismRanges,
    dag: &Dag,
    rng: &mut R,
) -> Result<MechanismSpec, SimError> {
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut nodes = Vec::with_capacity(dag.d());
    for i in 0..dag.d() {
        let parents: Vec<usize> = dag.parents(i).collect();
        if parents.is_empty() {
            nodes.push(NodeMechanism::zero());
            continue;
        }
        let m = match kind {
            MechanismKind::Linear => {
                let weights = parents
                    .iter()
                    .map(|_| {
                        let mag = uniform(ranges.linear_weight, rng);
                        if rng.gen_bool(0.5) {
                            mag
                        } else {
                            -mag
                        }
                    })
                    .collect();
                NodeMechanism::Linear { parents, weights, bias: 0.0 }
            }
            MechanismKind::Rff => {
                let k = ranges.rff_features;
                if k == 0 {
                    return Err(SimError::MissingParameters(i));
                }
                let lengthscale = uniform(ranges.rff_lengthscale, rng);
                let frequencies =
                    (0..k * parents.len()).map(|_| std_normal.sample(rng) / lengthscale).collect();
                let phases = (0..k).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
                let amplitudes = (0..k).map(|_| std_normal.sample(rng)).collect();
                let output_scale = uniform(ranges.rff_output_scale, rng);
                NodeMechanism::Rff { parents, frequencies, phases, amplitudes, output_scale, bias: 0.0 }
            }
        };
        nodes.push(m);
    }
    MechanismSpec::new(nodes, dag)
}
