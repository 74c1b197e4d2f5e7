//! Two-branch neural classifier: a binary fluent/disfluent gate (FluentNet)
//! and a four-way disfluency classifier (DisfluentNet).

use thiserror::Error;

use crate::dataio::DataError;
use crate::label::ClassLabel;

mod dd;
pub mod gradcheck;
pub mod net;
pub mod train;

pub use gradcheck::{gradient_check, gradient_check_with, Loss};
pub use net::{cross_entropy, softmax_rows, Adam, BranchNet, DropoutMasks, Grads, NetSpec};
pub use train::{
    train_two_branch, two_branch_predict, write_curves, EarlyStopping, EpochRecord, StopCriterion, TrainConfig,
    TwoBranchModel,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("training split has {0} disfluent sample(s); DisfluentNet needs at least 2")]
    NoDisfluentSamples(usize),
    #[error("non-finite loss at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("vector has length {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Collapses the five classes to fluent (0) versus disfluent (1).
pub fn pseudo_label(labels: &[ClassLabel]) -> Vec<u8> {
    labels.iter().map(|l| u8::from(!l.is_fluent())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::*;

    #[test]
    fn pseudo_labels() {
        assert_eq!(pseudo_label(&[Fluent, Block, Fluent]), vec![0, 1, 0]);
        assert_eq!(pseudo_label(&[Fluent; 4]), vec![0; 4]);
        assert_eq!(pseudo_label(&ClassLabel::DISFLUENT), vec![1; 4]);
    }
}
