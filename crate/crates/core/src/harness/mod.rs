//! Experiment harness: configs, training loop, evaluation, run cache and
//! result tables.

mod config;
mod metrics;
mod store;
mod suite;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{EarlyStopSpec, ExperimentConfig, LambdaSchedule, Regime, SuiteSpec, CODE_VERSION, CONFIG_VERSION};
pub use metrics::{
    accuracy_from_logits, argmax, domain_accuracy_from_logits, domain_confusion, evaluate, in_top_k, predict_logits,
    shape_bias_from_predictions, shape_bias_score, Accuracy, ShapeBias,
};
pub use store::{write_atomic, RunStore, TimingReport, CACHE_ENV};
pub use suite::{
    build_table, format_delta, render_svg_chart, run_config, run_suite, search_hyperparameters, ResultRow, ResultTable,
    SuiteOutcome,
};
pub use train::{
    epoch_order, evaluate_all, materialize, train, training_samples, validation_samples, EpochRecord, Materialized,
    Net, RunReport, TrainOutcome,
};

use crate::data::DataError;
use crate::models::ModelError;
use crate::optim::OptimError;
use crate::stylize::StylizeError;
use crate::tensor::{CheckpointError, TensorError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("evaluation set is empty")]
    EmptyTestSet,
    #[error("domain accuracy needs samples from both domains")]
    SingleDomain,
    #[error(
        "non-finite loss {loss} at epoch {epoch}, batch {batch} (backbone lr {lr_backbone:e}, classifier lr {lr_classifier:e})"
    )]
    NonFinite { loss: f64, epoch: usize, batch: usize, lr_backbone: f64, lr_classifier: f64 },
    #[error("no cached result for the {regime} run {hash}; run it first")]
    MissingRun { regime: String, hash: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("search stopped after {completed} completed configs: {source}")]
    Search {
        completed: usize,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("{path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Stylize(#[from] StylizeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(source: std::io::Error) -> Self {
        HarnessError::Io { path: PathBuf::new(), source }
    }
}
