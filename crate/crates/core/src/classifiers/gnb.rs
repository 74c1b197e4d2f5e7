//! Gaussian back-end: per-class diagonal Gaussians combined with class
//! priors through Bayes' rule, evaluated in log space.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{decide, ClassifierError, DecisionRule, Scored};
use crate::dataio::{read_embedding, write_embedding, DataError, Tensor};
use crate::features::FeatureMatrix;
use crate::label::{ClassLabel, NUM_CLASSES};

/// Relative variance floor: fraction of the mean per-feature variance.
pub const DEFAULT_RELATIVE_VAR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarFloor {
    /// Absolute floor.
    Absolute(f64),
    /// Multiple of the mean of all per-feature variances of the training set.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    /// Class frequencies in the training set.
    Empirical,
    /// Equal mass over the classes present in training.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnbConfig {
    pub var_floor: VarFloor,
    pub priors: PriorMode,
}

impl Default for GnbConfig {
    fn default() -> Self {
        Self {
            var_floor: VarFloor::Relative(DEFAULT_RELATIVE_VAR_FLOOR),
            priors: PriorMode::Empirical,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnbModel {
    priors: [f64; NUM_CLASSES],
    /// `5 x K`; rows of absent classes are zero.
    means: DMatrix<f64>,
    /// `5 x K`; every entry of a present class is `>= var_floor`.
    variances: DMatrix<f64>,
    var_floor: f64,
}

impl GnbModel {
    /// Builds a model from explicit parameters. Classes with zero prior are
    /// treated as absent. Priors are renormalized to sum to one.
    pub fn from_parameters(
        priors: [f64; NUM_CLASSES],
        means: DMatrix<f64>,
        variances: DMatrix<f64>,
        var_floor: f64,
    ) -> Result<Self, ClassifierError> {
        if !(var_floor > 0.0) {
            return Err(ClassifierError::InvalidVarFloor(var_floor));
        }
        if means.nrows() != NUM_CLASSES || means.shape() != variances.shape() {
            return Err(ClassifierError::Malformed(format!(
                "means {:?} / variances {:?}, expected 5 rows each",
                means.shape(),
                variances.shape()
            )));
        }
        let total: f64 = priors.iter().sum();
        if !(total > 0.0) || priors.iter().any(|p| !(*p >= 0.0)) {
            return Err(ClassifierError::NoClasses);
        }
        let priors = priors.map(|p| p / total);
        let variances = variances.map(|v| v.max(var_floor));
        Ok(Self {
            priors,
            means,
            variances,
            var_floor,
        })
    }

    pub fn priors(&self) -> &[f64; NUM_CLASSES] {
        &self.priors
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn variances(&self) -> &DMatrix<f64> {
        &self.variances
    }

    pub fn var_floor(&self) -> f64 {
        self.var_floor
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Log prior plus diagonal-Gaussian log likelihood per class; `None`
    /// for absent classes.
    pub fn log_joint(&self, query: &[f64]) -> Result<[Option<f64>; NUM_CLASSES], ClassifierError> {
        if query.len() != self.dim() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim(),
                actual: query.len(),
            });
        }
        let mut out = [None; NUM_CLASSES];
        for (c, slot) in out.iter_mut().enumerate() {
            if self.priors[c] == 0.0 {
                continue;
            }
            let mut ll = self.priors[c].ln();
            for (j, &x) in query.iter().enumerate() {
                let var = self.variances[(c, j)];
                let d = x - self.means[(c, j)];
                ll -= 0.5 * ((2.0 * PI * var).ln() + d * d / var);
            }
            *slot = Some(ll);
        }
        Ok(out)
    }

    pub fn score(&self, query: &[f64]) -> Result<Scored, ClassifierError> {
        let joint = self.log_joint(query)?;
        let max = joint
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + joint
                .iter()
                .flatten()
                .map(|v| (v - max).exp())
                .sum::<f64>()
                .ln();
        let proba = joint.map(|v| v.map_or(0.0, |v| (v - lse).exp()));
        Ok(Scored::new(proba))
    }

    pub fn predict(&self, query: &[f64]) -> Result<(ClassLabel, Scored), ClassifierError> {
        let scored = self.score(query)?;
        Ok((decide(&scored, DecisionRule::Argmax), scored))
    }

    /// Writes `means.emb`, `variances.emb` and `scalars.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ClassifierError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let tensor = |m: &DMatrix<f64>| {
            let data = (0..m.nrows())
                .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)] as f32))
                .collect();
            Tensor::new(m.nrows(), m.ncols(), data)
        };
        write_embedding(&tensor(&self.means)?, &dir.join("means.emb"))?;
        write_embedding(&tensor(&self.variances)?, &dir.join("variances.emb"))?;
        let priors: Vec<String> = self.priors.iter().map(|p| format!("{p:e}")).collect();
        let body = format!(
            "key,value\npriors,{}\nvar_floor,{:e}\n",
            priors.join(" "),
            self.var_floor
        );
        let path = dir.join("scalars.csv");
        fs::write(&path, body).map_err(|e| DataError::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ClassifierError> {
        let matrix = |name: &str| -> Result<DMatrix<f64>, ClassifierError> {
            let t = read_embedding(&dir.join(name))?;
            Ok(DMatrix::from_fn(t.rows(), t.cols(), |i, j| f64::from(t.row(i)[j])))
        };
        let path = dir.join("scalars.csv");
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let field = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key)?.strip_prefix(','))
                .ok_or_else(|| ClassifierError::Malformed(key.to_string()))
        };
        let priors: Vec<f64> = field("priors")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| ClassifierError::Malformed("priors".into())))
            .collect::<Result<_, _>>()?;
        let priors: [f64; NUM_CLASSES] = priors
            .try_into()
            .map_err(|_| ClassifierError::Malformed("priors".into()))?;
        let var_floor = field("var_floor")?
            .parse()
            .map_err(|_| ClassifierError::Malformed("var_floor".into()))?;
        Self::from_parameters(priors, matrix("means.emb")?, matrix("variances.emb")?, var_floor)
    }
}

/// Fits per-class means, floored population variances and priors.
///
/// Classes absent from `train` get zero prior; a class with exactly one
/// sample is an error since its variance is undefined.
pub fn gnb_fit(train: &FeatureMatrix, config: &GnbConfig) -> Result<GnbModel, ClassifierError> {
    let x = train.values();
    let (n, k) = (x.nrows(), x.ncols());
    let counts = train.class_counts();
    for class in ClassLabel::ALL {
        let count = counts[class.code()];
        if count == 1 {
            return Err(ClassifierError::MissingClass { class, count });
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(ClassifierError::NoClasses);
    }

    let var_floor = match config.var_floor {
        VarFloor::Absolute(v) => v,
        VarFloor::Relative(scale) => {
            let mean = x.row_mean();
            let total: f64 = (0..k)
                .map(|j| {
                    (0..n).map(|i| (x[(i, j)] - mean[j]).powi(2)).sum::<f64>() / n as f64
                })
                .sum();
            scale * total / k as f64
        }
    };
    if !(var_floor > 0.0) {
        // Degenerate training data (every feature constant).
        return Err(ClassifierError::InvalidVarFloor(var_floor));
    }

    let mut means = DMatrix::zeros(NUM_CLASSES, k);
    for (i, label) in train.labels().iter().enumerate() {
        let mut row = means.row_mut(label.code());
        row += x.row(i);
    }
    for c in 0..NUM_CLASSES {
        if counts[c] > 0 {
            let mut row = means.row_mut(c);
            row /= counts[c] as f64;
        }
    }
    let mut variances = DMatrix::zeros(NUM_CLASSES, k);
    for (i, label) in train.labels().iter().enumerate() {
        let c = label.code();
        for j in 0..k {
            variances[(c, j)] += (x[(i, j)] - means[(c, j)]).powi(2);
        }
    }
    for c in 0..NUM_CLASSES {
        if counts[c] > 0 {
            let mut row = variances.row_mut(c);
            row /= counts[c] as f64;
        }
    }

    let priors = match config.priors {
        PriorMode::Empirical => counts.map(|c| c as f64 / n as f64),
        PriorMode::Uniform => {
            let present = counts.iter().filter(|&&c| c > 0).count() as f64;
            counts.map(|c| if c > 0 { 1.0 / present } else { 0.0 })
        }
    };
    GnbModel::from_parameters(priors, means, variances, var_floor)
}

/// Posterior class probabilities for one query.
pub fn gnb_predict_proba(model: &GnbModel, query: &[f64]) -> Result<[f64; NUM_CLASSES], ClassifierError> {
    Ok(model.score(query)?.proba)
}
