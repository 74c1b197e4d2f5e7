//! Podcast-level cross-validation, metrics, layer sweeps and reports.

use std::path::PathBuf;

use thiserror::Error;

use crate::dataio::DataError;
use crate::fusion::FusionError;

pub mod experiment;
pub mod folds;
pub mod metrics;
pub mod report;
pub mod sweep;

pub use experiment::{
    load_streams, run_experiment, run_on_streams, write_outputs, ExperimentConfig, ExperimentResult, FoldReport,
    MetricsTable,
};
pub use folds::{make_folds, Fold, FoldPlan, FoldRows, NUM_FOLDS};
pub use metrics::{per_class_accuracy, Confusion, MetricsRow, COLUMNS};
pub use report::{read_metrics_csv, read_sweep_csv, render_report, render_sweep_svg, render_table};
pub use sweep::{layer_sweep, write_sweep, SweepPoint};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("need at least {needed} podcasts for cross-validation, found {found}")]
    TooFewPodcasts { found: usize, needed: usize },
    #[error("podcast {0} is not in the fold plan")]
    UnknownPodcast(String),
    #[error("fold plan violates podcast separation: {0}")]
    Leakage(String),
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("manifest has no w2v2 layer {0}")]
    MissingLayer(u8),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("repeat {repeat}, fold {fold}: {source}")]
    Fold {
        repeat: usize,
        fold: usize,
        #[source]
        source: FusionError,
    },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}
