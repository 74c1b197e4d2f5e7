//! Downstream stuttering-detection pipeline over precomputed speaker and
//! contextual speech embeddings.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classifiers;
pub mod dataio;
pub mod evalharness;
pub mod features;
pub mod fusion;
pub mod label;
pub mod lda;
pub mod neuralnet;
pub mod seed;

pub use classifiers::{decide, DecisionRule, Scored};
pub use dataio::{DatasetManifest, Stream};
pub use evalharness::{ExperimentConfig, MetricsRow, MetricsTable};
pub use features::FeatureMatrix;
pub use fusion::{build_pipeline, ClassifierKind, FusionMode, Pipeline, PipelineSpec};
pub use label::{ClassLabel, NUM_CLASSES};
