//! File formats, experiment orchestration and result reporting.

mod experiment;
mod format;

use thiserror::Error;

use crate::generators::GenError;
use crate::model::ModelError;
use crate::search::SearchError;

pub use experiment::{
    exact_value, materialize, read_assignments, read_results, run_experiment, run_experiment_with_jobs, solve,
    solved_fraction, summarize, write_results, Algorithm, AlgorithmSpec, AlgorithmSummary, ExperimentConfig, InputSpec,
    Instance, InstanceSource, InstanceSpec, ResultRow, SolveOptions,
};
pub use format::{
    format_evidence, format_network, parse_evidence, parse_network, read_evidence, read_network, write_evidence,
    write_network,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

impl HarnessError {
    pub fn is_resource(&self) -> bool {
        matches!(self, HarnessError::Search(e) if e.is_resource())
    }
}
