//! Multiclass linear discriminant analysis.
//!
//! The within-class scatter is regularized toward a scaled identity,
//! `Sw' = (1 - s) Sw + s (tr(Sw) / K) I`, and the generalized problem
//! `Sb a = lambda Sw' a` is solved by whitening with the Cholesky factor
//! `Sw' = L L^T`. Because `Sb = B B^T` with `B` holding one column
//! `sqrt(n_c) (mu_c - mu)` per class, the whitened problem reduces to the
//! symmetric eigenproblem of the small Gram matrix `(L^-1 B)^T (L^-1 B)`,
//! which has the same nonzero spectrum as `L^-1 Sb L^-T`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::dataio::{read_embedding, write_embedding, DataError, Tensor};
use crate::features::{FeatureError, FeatureMatrix};
use crate::label::{ClassLabel, NUM_CLASSES};

pub const MAX_COMPONENTS: usize = NUM_CLASSES - 1;
pub const DEFAULT_SHRINKAGE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("requested {requested} components, at most {max} allowed")]
    TooManyComponents { requested: usize, max: usize },
    #[error("shrinkage {0} outside [0, 1]")]
    InvalidShrinkage(f64),
    #[error("class {class} has {count} training sample(s), need at least 2")]
    MissingClass { class: ClassLabel, count: usize },
    #[error("{present} classes present, cannot extract {requested} discriminant components")]
    InsufficientClasses { present: usize, requested: usize },
    #[error("regularized within-class scatter is numerically singular")]
    DegenerateScatter,
    #[error("data has {actual} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("malformed model file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    /// `K x m`, columns unit-norm, in descending eigenvalue order.
    projection: DMatrix<f64>,
    /// Discriminant eigenvalues matching the projection columns.
    eigenvalues: Vec<f64>,
    /// Per-class means (`None` for classes absent from training).
    class_means: Vec<Option<DVector<f64>>>,
    global_mean: DVector<f64>,
    shrinkage: f64,
}

impl LdaModel {
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn global_mean(&self) -> &DVector<f64> {
        &self.global_mean
    }

    pub fn class_mean(&self, class: ClassLabel) -> Option<&DVector<f64>> {
        self.class_means[class.code()].as_ref()
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn components(&self) -> usize {
        self.projection.ncols()
    }

    /// Negates projection column `j`.
    pub fn flip_component(&mut self, j: usize) {
        self.projection.column_mut(j).neg_mut();
    }

    /// Writes `projection.emb`, `means.emb` (row 0 global mean, rows 1..=5
    /// class means, zeros for absent classes) and `scalars.csv`.
    pub fn save(&self, dir: &Path) -> Result<(), LdaError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        write_embedding(&to_tensor(&self.projection)?, &dir.join("projection.emb"))?;
        let k = self.input_dim();
        let means = DMatrix::from_fn(NUM_CLASSES + 1, k, |i, j| {
            if i == 0 {
                self.global_mean[j]
            } else {
                self.class_means[i - 1].as_ref().map_or(0.0, |m| m[j])
            }
        });
        write_embedding(&to_tensor(&means)?, &dir.join("means.emb"))?;
        let present: Vec<String> = self
            .class_means
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_some())
            .map(|(c, _)| c.to_string())
            .collect();
        let eig: Vec<String> = self.eigenvalues.iter().map(|v| format!("{v:e}")).collect();
        let scalars = format!(
            "key,value\ninput_dim,{k}\ncomponents,{}\nshrinkage,{:e}\npresent_classes,{}\neigenvalues,{}\n",
            self.components(),
            self.shrinkage,
            present.join(" "),
            eig.join(" ")
        );
        let path = dir.join("scalars.csv");
        fs::write(&path, scalars).map_err(|e| DataError::io(&path, e))?;
        Ok(())
    }

    /// Reads a model written by [`LdaModel::save`]. Values pass through
    /// float32, so the result matches the original to single precision.
    pub fn load(dir: &Path) -> Result<Self, LdaError> {
        let projection = from_tensor(&read_embedding(&dir.join("projection.emb"))?);
        let means = from_tensor(&read_embedding(&dir.join("means.emb"))?);
        let path = dir.join("scalars.csv");
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let field = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(',')))
                .ok_or_else(|| LdaError::Malformed(format!("missing {key}")))
        };
        let shrinkage: f64 = field("shrinkage")?
            .parse()
            .map_err(|_| LdaError::Malformed("shrinkage".into()))?;
        let present: Vec<usize> = field("present_classes")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| LdaError::Malformed("present_classes".into())))
            .collect::<Result<_, _>>()?;
        let eigenvalues: Vec<f64> = field("eigenvalues")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| LdaError::Malformed("eigenvalues".into())))
            .collect::<Result<_, _>>()?;
        if means.nrows() != NUM_CLASSES + 1 || means.ncols() != projection.nrows() {
            return Err(LdaError::Malformed("means shape".into()));
        }
        let row = |i: usize| DVector::from_iterator(means.ncols(), means.row(i).iter().copied());
        Ok(Self {
            projection,
            eigenvalues,
            class_means: (0..NUM_CLASSES)
                .map(|c| present.contains(&c).then(|| row(c + 1)))
                .collect(),
            global_mean: row(0),
            shrinkage,
        })
    }
}

fn to_tensor(m: &DMatrix<f64>) -> Result<Tensor, DataError> {
    let data = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)] as f32))
        .collect();
    Tensor::new(m.nrows(), m.ncols(), data)
}

fn from_tensor(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_fn(t.rows(), t.cols(), |i, j| f64::from(t.row(i)[j]))
}

/// Fits an `m`-component discriminant projection on `train`.
pub fn lda_fit(train: &FeatureMatrix, m: usize, shrinkage: f64) -> Result<LdaModel, LdaError> {
    if m > MAX_COMPONENTS {
        return Err(LdaError::TooManyComponents {
            requested: m,
            max: MAX_COMPONENTS,
        });
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(LdaError::InvalidShrinkage(shrinkage));
    }
    let x = train.values();
    let k = x.ncols();
    if m > k {
        return Err(LdaError::TooManyComponents { requested: m, max: k });
    }
    let counts = train.class_counts();
    for class in ClassLabel::ALL {
        if counts[class.code()] == 1 {
            return Err(LdaError::MissingClass { class, count: 1 });
        }
    }
    let present: Vec<ClassLabel> = ClassLabel::ALL
        .into_iter()
        .filter(|c| counts[c.code()] > 0)
        .collect();
    if present.len() < m + 1 {
        return Err(LdaError::InsufficientClasses {
            present: present.len(),
            requested: m,
        });
    }

    let global_mean: DVector<f64> = x.row_mean().transpose();
    let mut sums = vec![DVector::<f64>::zeros(k); NUM_CLASSES];
    for (i, label) in train.labels().iter().enumerate() {
        sums[label.code()] += x.row(i).transpose();
    }
    let class_means: Vec<Option<DVector<f64>>> = (0..NUM_CLASSES)
        .map(|c| (counts[c] > 0).then(|| &sums[c] / counts[c] as f64))
        .collect();

    // Within-class scatter from class-centred rows.
    let mut centred = x.clone();
    for (i, label) in train.labels().iter().enumerate() {
        let mu = class_means[label.code()].as_ref().unwrap();
        for j in 0..k {
            centred[(i, j)] -= mu[j];
        }
    }
    let sw = centred.tr_mul(&centred);
    let trace = sw.trace();
    if !(trace > 0.0) {
        return Err(LdaError::DegenerateScatter);
    }
    let mut sw_reg = sw * (1.0 - shrinkage);
    let ridge = shrinkage * trace / k as f64;
    for j in 0..k {
        sw_reg[(j, j)] += ridge;
    }
    let chol = sw_reg.cholesky().ok_or(LdaError::DegenerateScatter)?;
    let l = chol.l();
    let diag_min = l.diagonal().min();
    let diag_max = l.diagonal().max();
    if !(diag_min > 1e-10 * diag_max) {
        return Err(LdaError::DegenerateScatter);
    }

    let b = DMatrix::from_fn(k, present.len(), |j, c| {
        let class = present[c];
        let mu = class_means[class.code()].as_ref().unwrap();
        (counts[class.code()] as f64).sqrt() * (mu[j] - global_mean[j])
    });
    let w = l
        .solve_lower_triangular(&b)
        .ok_or(LdaError::DegenerateScatter)?;
    let gram = w.tr_mul(&w);
    let eig = SymmetricEigen::new(gram);

    // Descending eigenvalue, ties by solver index.
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let lt = l.transpose();
    let mut projection = DMatrix::zeros(k, m);
    let mut eigenvalues = Vec::with_capacity(m);
    for (col, &idx) in order.iter().take(m).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > 1e-12 * lambda_max) {
            return Err(LdaError::InsufficientClasses {
                present: present.len(),
                requested: m,
            });
        }
        let u = &w * eig.eigenvectors.column(idx) / lambda.sqrt();
        let mut a = lt
            .solve_upper_triangular(&u)
            .ok_or(LdaError::DegenerateScatter)?;
        let norm = a.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(LdaError::DegenerateScatter);
        }
        a /= norm;
        // Sign convention: largest-magnitude entry positive.
        let pivot = a.iamax();
        if a[pivot] < 0.0 {
            a.neg_mut();
        }
        projection.set_column(col, &a);
        eigenvalues.push(lambda);
    }

    Ok(LdaModel {
        projection,
        eigenvalues,
        class_means,
        global_mean,
        shrinkage,
    })
}

/// Projects centred rows: `(X - mu) P`.
pub fn lda_transform(model: &LdaModel, data: &FeatureMatrix) -> Result<FeatureMatrix, LdaError> {
    if data.ncols() != model.input_dim() {
        return Err(LdaError::DimensionMismatch {
            expected: model.input_dim(),
            actual: data.ncols(),
        });
    }
    let mut centred = data.values().clone();
    for mut row in centred.row_iter_mut() {
        row -= model.global_mean.transpose();
    }
    Ok(data.with_values(centred * &model.projection)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_classes(
        means: &[Vec<f64>],
        per_class: usize,
        noise: f64,
        seed: u64,
    ) -> FeatureMatrix {
        let mut rng = crate::seed::rng(seed, &[]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, mu) in means.iter().enumerate() {
            for _ in 0..per_class {
                rows.push(
                    mu.iter()
                        .map(|m| m + noise * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                );
                labels.push(ClassLabel::from_code(c).unwrap());
            }
        }
        FeatureMatrix::from_rows(&rows, labels).unwrap()
    }

    fn five_class(k: usize, seed: u64) -> FeatureMatrix {
        let mut rng = crate::seed::rng(seed ^ 0xabc, &[]);
        let means: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..k).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        gaussian_classes(&means, 30, 1.0, seed)
    }

    #[test]
    fn five_classes_give_four_components() {
        let data = five_class(10, 1);
        let model = lda_fit(&data, 4, DEFAULT_SHRINKAGE).unwrap();
        assert_eq!(model.components(), 4);
        let out = lda_transform(&model, &data).unwrap();
        assert_eq!((out.nrows(), out.ncols()), (150, 4));
        assert_eq!(out.labels(), data.labels());
        for j in 0..4 {
            assert!((model.projection().column(j).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn five_components_rejected() {
        let data = five_class(10, 2);
        assert!(matches!(
            lda_fit(&data, 5, DEFAULT_SHRINKAGE),
            Err(LdaError::TooManyComponents { requested: 5, max: 4 })
        ));
        assert!(matches!(lda_fit(&data, 2, 1.5), Err(LdaError::InvalidShrinkage(_))));
    }

    #[test]
    fn two_class_direction_is_the_x_axis() {
        let data = gaussian_classes(&[vec![0.0, 0.0], vec![10.0, 0.0]], 200, 1.0, 3);
        let model = lda_fit(&data, 1, 0.0).unwrap();
        let a = model.projection().column(0);
        let cos = a[0].abs() / a.norm();
        assert!(cos >= 0.99, "cos = {cos}");
    }

    #[test]
    fn singleton_class_is_rejected() {
        let mut rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]];
        rows.push(vec![5.0, 5.0]);
        let labels = vec![
            ClassLabel::Fluent,
            ClassLabel::Fluent,
            ClassLabel::Fluent,
            ClassLabel::Block,
        ];
        let data = FeatureMatrix::from_rows(&rows, labels).unwrap();
        assert!(matches!(
            lda_fit(&data, 1, 0.0),
            Err(LdaError::MissingClass { class: ClassLabel::Block, count: 1 })
        ));
    }

    #[test]
    fn singular_scatter_without_shrinkage() {
        // Third feature is constant, so Sw is singular when shrinkage = 0.
        let mut data = five_class(2, 4);
        let v = data.values().clone().insert_column(2, 1.0);
        data = data.with_values(v).unwrap();
        assert!(matches!(lda_fit(&data, 2, 0.0), Err(LdaError::DegenerateScatter)));
        assert!(lda_fit(&data, 2, 1e-4).is_ok());
    }

    #[test]
    fn global_mean_maps_to_origin() {
        let data = five_class(6, 5);
        let model = lda_fit(&data, 4, DEFAULT_SHRINKAGE).unwrap();
        let mu: Vec<f64> = model.global_mean().iter().copied().collect();
        let one = FeatureMatrix::from_rows(&[mu], vec![ClassLabel::Fluent]).unwrap();
        let out = lda_transform(&model, &one).unwrap();
        assert!(out.values().iter().all(|v| v.abs() < 1e-12));

        let wrong = FeatureMatrix::from_rows(&[vec![0.0; 5]], vec![ClassLabel::Fluent]).unwrap();
        assert!(matches!(
            lda_transform(&model, &wrong),
            Err(LdaError::DimensionMismatch { expected: 6, actual: 5 })
        ));
    }

    #[test]
    fn transform_of_disjoint_rows_keeps_width() {
        let data = five_class(6, 6);
        let model = lda_fit(&data, 4, DEFAULT_SHRINKAGE).unwrap();
        // Only fluent rows in the "test" set.
        let idx: Vec<usize> = (120..125).collect();
        let out = lda_transform(&model, &data.select_rows(&idx)).unwrap();
        assert_eq!(out.ncols(), 4);
    }

    /// Independent route: build Sw^{-1/2} from a symmetric eigendecomposition
    /// of Sw and diagonalize Sw^{-1/2} Sb Sw^{-1/2} directly.
    fn reference_eigenvalues(data: &FeatureMatrix) -> Vec<f64> {
        let x = data.values();
        let (n, k) = (x.nrows(), x.ncols());
        let mu = x.row_mean();
        let mut sb = DMatrix::<f64>::zeros(k, k);
        let mut sw = DMatrix::<f64>::zeros(k, k);
        for class in ClassLabel::ALL {
            let idx: Vec<usize> = (0..n).filter(|&i| data.labels()[i] == class).collect();
            if idx.is_empty() {
                continue;
            }
            let xc = x.select_rows(&idx);
            let mc = xc.row_mean();
            let d = (&mc - &mu).transpose();
            sb += &d * d.transpose() * idx.len() as f64;
            for i in 0..idx.len() {
                let r = (xc.row(i) - &mc).transpose();
                sw += &r * r.transpose();
            }
        }
        let e = SymmetricEigen::new(sw);
        let inv_sqrt = DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt()));
        let s = &e.eigenvectors * inv_sqrt * e.eigenvectors.transpose();
        let m = &s * sb * &s;
        let mut vals: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        vals
    }

    #[test]
    fn eigenvalues_match_reference_route() {
        let data = five_class(7, 8);
        let model = lda_fit(&data, 4, 0.0).unwrap();
        let want = reference_eigenvalues(&data);
        for (got, want) in model.eigenvalues().iter().zip(&want) {
            assert!((got - want).abs() <= 1e-8 * want.abs(), "{got} vs {want}");
        }
        // Generalized eigen relation holds column by column.
        let x = data.values();
        let centred_sb = {
            let mu = x.row_mean();
            let mut sb = DMatrix::<f64>::zeros(7, 7);
            for class in ClassLabel::ALL {
                let mc = model.class_mean(class).unwrap().transpose();
                let d = (&mc - &mu).transpose();
                sb += &d * d.transpose() * data.class_counts()[class.code()] as f64;
            }
            sb
        };
        for j in 0..4 {
            let a = model.projection().column(j).into_owned();
            let between = (a.transpose() * &centred_sb * &a)[0];
            let proj = lda_transform(&model, &data).unwrap();
            let mut within = 0.0;
            for class in ClassLabel::ALL {
                let idx: Vec<usize> =
                    (0..data.nrows()).filter(|&i| data.labels()[i] == class).collect();
                let col: Vec<f64> = idx.iter().map(|&i| proj.values()[(i, j)]).collect();
                let m = col.iter().sum::<f64>() / col.len() as f64;
                within += col.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            }
            let ratio = between / within;
            assert!((ratio - model.eigenvalues()[j]).abs() <= 1e-8 * ratio, "{ratio}");
        }
    }

    #[test]
    fn discriminant_ratio_is_ordered() {
        let data = five_class(8, 9);
        let model = lda_fit(&data, 4, 0.0).unwrap();
        for pair in model.eigenvalues().windows(2) {
            assert!(pair[0] >= pair[1]);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let data = five_class(5, 10);
        let model = lda_fit(&data, 3, DEFAULT_SHRINKAGE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = LdaModel::load(dir.path()).unwrap();
        assert_eq!(back.components(), 3);
        assert_eq!(back.shrinkage(), model.shrinkage());
        for (a, b) in back.projection().iter().zip(model.projection().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(back.eigenvalues().len(), 3);
    }
}
