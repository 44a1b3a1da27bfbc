//! Metrics, the synthetic benchmark suite, reports and plots.

mod benchmark;
mod metrics;
mod plot;
mod real_data;
mod report;

use thiserror::Error;

pub use benchmark::{run_benchmark, score_case, test_case, BenchmarkSuiteConfig, Predictor, Scenario, TestCase};
pub use metrics::{median_bandwidth, mmd_rbf, rmse, MetricError};
pub use plot::rmse_plot;
pub use real_data::{real_data_protocol, MmdReport};
pub use report::{mean_stderr, Aggregate, DatasetResult, EvalReport, Task};

use crate::engine::EngineError;
use crate::model::ModelError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("malformed report: {0}")]
    Report(String),
    #[error("{0}")]
    Config(String),
}
