use super::HarnessError;
use crate::label::{ClassLabel, NUM_CLASSES};

/// Column order of every metrics row: R, P, B, I, F, TA.
pub const COLUMNS: [&str; 6] = ["R", "P", "B", "I", "F", "TA"];

/// Percentages per class (class-wise recall) plus total accuracy. A class
/// absent from the truths is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub cells: [Option<f64>; 6],
}

impl MetricsRow {
    pub fn class(&self, c: ClassLabel) -> Option<f64> {
        self.cells[c.code()]
    }

    pub fn ta(&self) -> Option<f64> {
        self.cells[5]
    }

    /// Formats cells with fixed decimals, `NA` for missing values.
    pub fn csv_cells(&self) -> Vec<String> {
        self.cells
            .iter()
            .map(|c| c.map_or("NA".to_string(), |v| format!("{v:.4}")))
            .collect()
    }

    /// Mean of each cell over the rows where it is present.
    pub fn mean(rows: &[MetricsRow]) -> MetricsRow {
        MetricsRow {
            cells: std::array::from_fn(|i| {
                let present: Vec<f64> = rows.iter().filter_map(|r| r.cells[i]).collect();
                (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
            }),
        }
    }

    /// Sample standard deviation of each cell; `None` with fewer than two
    /// values.
    pub fn std(rows: &[MetricsRow]) -> MetricsRow {
        MetricsRow {
            cells: std::array::from_fn(|i| {
                let v: Vec<f64> = rows.iter().filter_map(|r| r.cells[i]).collect();
                (v.len() >= 2).then(|| {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
                })
            }),
        }
    }
}

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl Confusion {
    pub fn from_labels(predictions: &[ClassLabel], truths: &[ClassLabel]) -> Result<Self, HarnessError> {
        if predictions.len() != truths.len() {
            return Err(HarnessError::LengthMismatch {
                predictions: predictions.len(),
                truths: truths.len(),
            });
        }
        let mut c = Confusion::default();
        for (p, t) in predictions.iter().zip(truths) {
            c.counts[t.code()][p.code()] += 1;
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &Confusion) {
        for t in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row(&self) -> Result<MetricsRow, HarnessError> {
        let total = self.total();
        if total == 0 {
            return Err(HarnessError::EmptyEvaluation);
        }
        let mut cells = [None; 6];
        let mut correct = 0;
        for c in 0..NUM_CLASSES {
            let n: usize = self.counts[c].iter().sum();
            correct += self.counts[c][c];
            if n > 0 {
                cells[c] = Some(100.0 * self.counts[c][c] as f64 / n as f64);
            }
        }
        cells[5] = Some(100.0 * correct as f64 / total as f64);
        Ok(MetricsRow { cells })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\pred,R,P,B,I,F\n");
        for c in ClassLabel::ALL {
            let counts: Vec<String> = self.counts[c.code()].iter().map(ToString::to_string).collect();
            out.push_str(&format!("{},{}\n", c.abbrev(), counts.join(",")));
        }
        out
    }
}

/// Class-wise recall and total accuracy, in percent.
pub fn per_class_accuracy(predictions: &[ClassLabel], truths: &[ClassLabel]) -> Result<MetricsRow, HarnessError> {
    Confusion::from_labels(predictions, truths)?.row()
}
