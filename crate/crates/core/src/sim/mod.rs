//! Ground-truth additive-noise SCMs: graph sampling, mechanisms, noise,
//! observational and interventional data, and the dataset file format.

mod dag;
mod dataset;
pub mod graphs;
pub mod io;
mod mechanism;
mod noise;
mod scm;

use thiserror::Error;

pub use dag::Dag;
pub use dataset::{simulate_dataset, Dataset, DatasetMeta, Standardization};
pub use graphs::{sample_dag, GraphScheme};
pub use mechanism::{sample_mechanisms, MechanismKind, MechanismRanges, MechanismSpec, NodeMechanism, RFF_FEATURES};
pub use noise::{sample_noise, NoiseFamily, NoiseSpec};
pub use scm::{sample_scm, DistributionTag, GraphFamily, MechanismMix, Scm, ScmDistributionConfig, ScmInfo};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("graph contains a cycle")]
    Cycle,
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node {node} out of range for {d} nodes")]
    InvalidNode { node: usize, d: usize },
    #[error("node {0} has parents but no mechanism parameters")]
    MissingParameters(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
