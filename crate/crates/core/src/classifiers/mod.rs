//! Classical back-ends with probability outputs over the five classes, and
//! the decision rules that turn a probability vector into a label.

use thiserror::Error;

use crate::dataio::DataError;
use crate::label::{ClassLabel, NUM_CLASSES};

pub mod gnb;
pub mod knn;

pub use gnb::{gnb_fit, gnb_predict_proba, GnbConfig, GnbModel, PriorMode, VarFloor};
pub use knn::{knn_fit, knn_predict_proba, minkowski_distance, KnnModel};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("vector has length {actual}, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("Minkowski order {0} must be >= 1")]
    InvalidOrder(f64),
    #[error("k = {k} needs at least k training rows, got {n}")]
    InsufficientData { k: usize, n: usize },
    #[error("k must be >= 1")]
    InvalidK,
    #[error("class {class} has {count} training sample(s), need at least 2")]
    MissingClass { class: ClassLabel, count: usize },
    #[error("no class has at least 2 training samples")]
    NoClasses,
    #[error("variance floor must be > 0, got {0}")]
    InvalidVarFloor(f64),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("malformed model file: {0}")]
    Malformed(String),
}

/// A classifier's output for one query: class probabilities plus a
/// secondary score used only to order classes whose probabilities tie.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub proba: [f64; NUM_CLASSES],
    pub tiebreak: [f64; NUM_CLASSES],
}

impl Scored {
    pub fn new(proba: [f64; NUM_CLASSES]) -> Self {
        Self {
            proba,
            tiebreak: [0.0; NUM_CLASSES],
        }
    }
}

/// How a probability vector becomes a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionRule {
    /// Highest probability, then highest tiebreak, then lowest class code.
    Argmax,
    /// Fluent when its probability is at least one half (equivalently, at
    /// least the total disfluent mass); otherwise the best disfluent class.
    FluentGate,
}

fn best_of(scored: &Scored, classes: &[ClassLabel]) -> ClassLabel {
    let mut best = classes[0];
    for &c in &classes[1..] {
        let (i, b) = (c.code(), best.code());
        let better = scored.proba[i] > scored.proba[b]
            || (scored.proba[i] == scored.proba[b] && scored.tiebreak[i] > scored.tiebreak[b]);
        if better {
            best = c;
        }
    }
    best
}

pub fn decide(scored: &Scored, rule: DecisionRule) -> ClassLabel {
    match rule {
        DecisionRule::Argmax => best_of(scored, &ClassLabel::ALL),
        DecisionRule::FluentGate => {
            if scored.proba[ClassLabel::Fluent.code()] >= 0.5 {
                ClassLabel::Fluent
            } else {
                best_of(scored, &ClassLabel::DISFLUENT)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_rules() {
        let s = Scored::new([0.4, 0.4, 0.2, 0.0, 0.0]);
        assert_eq!(decide(&s, DecisionRule::Argmax), ClassLabel::Repetition);
        let s = Scored {
            proba: [0.4, 0.4, 0.2, 0.0, 0.0],
            tiebreak: [-3.0, -2.0, -1.0, 0.0, 0.0],
        };
        assert_eq!(decide(&s, DecisionRule::Argmax), ClassLabel::Prolongation);
    }

    #[test]
    fn gate() {
        let s = Scored::new([0.0, 0.0, 0.0, 0.4, 0.6]);
        assert_eq!(decide(&s, DecisionRule::FluentGate), ClassLabel::Fluent);
        let s = Scored::new([0.2, 0.1, 0.2, 0.1, 0.4]);
        assert_eq!(decide(&s, DecisionRule::FluentGate), ClassLabel::Repetition);
        let s = Scored::new([0.125; 4].iter().copied().chain([0.5]).collect::<Vec<_>>().try_into().unwrap());
        assert_eq!(decide(&s, DecisionRule::FluentGate), ClassLabel::Fluent);
    }
}
