//! The five-way stuttering label set.

use std::fmt;
use std::str::FromStr;

/// Number of classes in the label set.
pub const NUM_CLASSES: usize = 5;

/// Number of disfluent (non-fluent) classes.
pub const NUM_DISFLUENT: usize = 4;

/// Clip-level annotation. Integer codes follow declaration order and are the
/// column order used in every probability vector and report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Repetition = 0,
    Prolongation = 1,
    Block = 2,
    Interjection = 3,
    Fluent = 4,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Repetition,
        ClassLabel::Prolongation,
        ClassLabel::Block,
        ClassLabel::Interjection,
        ClassLabel::Fluent,
    ];

    /// The disfluent classes, in code order. Index into this array is the
    /// DisfluentNet output index.
    pub const DISFLUENT: [ClassLabel; NUM_DISFLUENT] = [
        ClassLabel::Repetition,
        ClassLabel::Prolongation,
        ClassLabel::Block,
        ClassLabel::Interjection,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn is_fluent(self) -> bool {
        self == ClassLabel::Fluent
    }

    /// Lowercase name used in manifests.
    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Repetition => "repetition",
            ClassLabel::Prolongation => "prolongation",
            ClassLabel::Block => "block",
            ClassLabel::Interjection => "interjection",
            ClassLabel::Fluent => "fluent",
        }
    }

    /// Single-letter column header used in reports (R, P, B, I, F).
    pub fn abbrev(self) -> &'static str {
        match self {
            ClassLabel::Repetition => "R",
            ClassLabel::Prolongation => "P",
            ClassLabel::Block => "B",
            ClassLabel::Interjection => "I",
            ClassLabel::Fluent => "F",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl fmt::Display for UnknownLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown label {:?}", self.0)
    }
}

impl std::error::Error for UnknownLabel {}

impl FromStr for ClassLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn string_code_bijection() {
        for (i, l) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(l.code(), i);
            assert_eq!(ClassLabel::from_code(i), Some(*l));
            assert_eq!(l.name().parse::<ClassLabel>().unwrap(), *l);
        }
        assert_eq!(ClassLabel::from_code(5), None);
        assert!("sound_rep".parse::<ClassLabel>().is_err());
        assert!("Fluent".parse::<ClassLabel>().is_err());
    }
}
