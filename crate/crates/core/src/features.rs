//! Fixed-length feature vectors: temporal pooling, magnitude normalization and
//! column-wise concatenation of aligned feature matrices.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dataio::Tensor;
use crate::label::ClassLabel;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot pool an empty tensor")]
    EmptyTensor,
    #[error("vector norm {0:e} is below 1e-12")]
    ZeroVector(f64),
    #[error("row misalignment: {0}")]
    RowMisalignment(String),
    #[error("feature matrix has {rows} rows but {labels} labels, {podcasts} podcast ids and {clips} clip ids")]
    LengthMismatch {
        rows: usize,
        labels: usize,
        podcasts: usize,
        clips: usize,
    },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("nothing to concatenate")]
    NoParts,
}

/// `N x K` features with row-aligned metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    labels: Vec<ClassLabel>,
    podcast_ids: Vec<String>,
    clip_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        values: DMatrix<f64>,
        labels: Vec<ClassLabel>,
        podcast_ids: Vec<String>,
        clip_ids: Vec<String>,
    ) -> Result<Self, FeatureError> {
        let n = values.nrows();
        if labels.len() != n || podcast_ids.len() != n || clip_ids.len() != n {
            return Err(FeatureError::LengthMismatch {
                rows: n,
                labels: labels.len(),
                podcasts: podcast_ids.len(),
                clips: clip_ids.len(),
            });
        }
        for col in 0..values.ncols() {
            for row in 0..n {
                if !values[(row, col)].is_finite() {
                    return Err(FeatureError::NonFinite { row, col });
                }
            }
        }
        Ok(Self {
            values,
            labels,
            podcast_ids,
            clip_ids,
        })
    }

    /// Builds a matrix whose clip ids are `row<i>`; handy when clip identity
    /// does not matter.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<ClassLabel>) -> Result<Self, FeatureError> {
        let k = rows.first().map_or(0, Vec::len);
        let values = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        let n = rows.len();
        Self::new(
            values,
            labels,
            vec![String::new(); n],
            (0..n).map(|i| format!("row{i}")).collect(),
        )
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn podcast_ids(&self) -> &[String] {
        &self.podcast_ids
    }

    pub fn clip_ids(&self) -> &[String] {
        &self.clip_ids
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// Same metadata, new values. Used by stages that map rows to rows.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self, FeatureError> {
        Self::new(
            values,
            self.labels.clone(),
            self.podcast_ids.clone(),
            self.clip_ids.clone(),
        )
    }

    /// Rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            podcast_ids: indices.iter().map(|&i| self.podcast_ids[i].clone()).collect(),
            clip_ids: indices.iter().map(|&i| self.clip_ids[i].clone()).collect(),
        }
    }

    /// Applies `f` to every row.
    pub fn map_rows<F>(&self, f: F) -> Result<Self, FeatureError>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>, FeatureError>,
    {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.nrows());
        for i in 0..self.nrows() {
            out.push(f(&self.row(i))?);
        }
        let k = out.first().map_or(0, Vec::len);
        self.with_values(DMatrix::from_fn(self.nrows(), k, |i, j| out[i][j]))
    }

    /// Per-class row counts in code order.
    pub fn class_counts(&self) -> [usize; crate::label::NUM_CLASSES] {
        let mut counts = [0; crate::label::NUM_CLASSES];
        for l in &self.labels {
            counts[l.code()] += 1;
        }
        counts
    }
}

/// Mean over frames followed by population standard deviation over frames.
pub fn statistical_pool(tensor: &Tensor) -> Result<Vec<f64>, FeatureError> {
    let (t, d) = (tensor.rows(), tensor.cols());
    if t == 0 || d == 0 {
        return Err(FeatureError::EmptyTensor);
    }
    // Welford, one pass over frames.
    let mut mean = vec![0.0f64; d];
    let mut m2 = vec![0.0f64; d];
    for (i, frame) in tensor.data().chunks_exact(d).enumerate() {
        let n = (i + 1) as f64;
        for ((mu, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(frame) {
            let x = f64::from(x);
            let delta = x - *mu;
            *mu += delta / n;
            *s += delta * (x - *mu);
        }
    }
    let mut out = mean;
    out.extend(m2.into_iter().map(|s| (s / t as f64).max(0.0).sqrt()));
    Ok(out)
}

/// Scales `v` to unit Euclidean norm.
pub fn magnitude_normalize(v: &[f64]) -> Result<Vec<f64>, FeatureError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= 1e-12) {
        return Err(FeatureError::ZeroVector(norm));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Column-wise concatenation of row-aligned matrices, blocks in argument order.
pub fn concat_features(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix, FeatureError> {
    let first = *parts.first().ok_or(FeatureError::NoParts)?;
    for (i, p) in parts.iter().enumerate().skip(1) {
        if p.nrows() != first.nrows() {
            return Err(FeatureError::RowMisalignment(format!(
                "part {i} has {} rows, part 0 has {}",
                p.nrows(),
                first.nrows()
            )));
        }
        if p.clip_ids != first.clip_ids {
            return Err(FeatureError::RowMisalignment(format!("part {i} clip order differs")));
        }
        if p.labels != first.labels {
            return Err(FeatureError::RowMisalignment(format!("part {i} labels differ")));
        }
        if p.podcast_ids != first.podcast_ids {
            return Err(FeatureError::RowMisalignment(format!("part {i} podcast ids differ")));
        }
    }
    let k: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut values = DMatrix::zeros(first.nrows(), k);
    let mut offset = 0;
    for p in parts {
        values
            .columns_mut(offset, p.ncols())
            .copy_from(&p.values);
        offset += p.ncols();
    }
    first.with_values(values)
}
