use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::net::{cross_entropy, softmax_rows, Adam, BranchNet, NetSpec};
use super::{pseudo_label, NnError};
use crate::classifiers::{decide, DecisionRule, Scored};
use crate::dataio::DataError;
use crate::features::FeatureMatrix;
use crate::label::{ClassLabel, NUM_CLASSES, NUM_DISFLUENT};
use crate::seed;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const FLUENT_BRANCH: u64 = 0;
const DISFLUENT_BRANCH: u64 = 1;

/// Which validation loss drives early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCriterion {
    /// FluentNet plus DisfluentNet validation loss.
    Combined,
    FluentOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: (usize, usize),
    pub dropout: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub stop_on: StopCriterion,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: (256, 64),
            dropout: 0.2,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 128,
            max_epochs: 200,
            patience: 7,
            stop_on: StopCriterion::Combined,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.hidden.0 == 0 || self.hidden.1 == 0 {
            return bad("hidden widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max epochs and patience must be positive");
        }
        Ok(())
    }
}

/// Losses of one epoch. Train losses are sample-weighted means over the
/// batches; `monitored` is the quantity early stopping watches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub fluent_train: f64,
    pub fluent_valid: f64,
    pub disfluent_train: f64,
    pub disfluent_valid: f64,
    pub monitored: f64,
}

/// Patience counter over a loss sequence. Epochs are numbered from 1.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Wait,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Only a strictly lower loss counts as improvement.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            Verdict::Improved
        } else if epoch - self.best_epoch >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Wait
        }
    }
}

/// Trained FluentNet/DisfluentNet pair.
#[derive(Debug, Clone)]
pub struct TwoBranchModel {
    pub fluent_net: BranchNet,
    pub disfluent_net: BranchNet,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

fn gather(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

/// Rows of a batch that carry DisfluentNet signal, with their 4-way targets.
pub(crate) fn disfluent_rows(labels: &[ClassLabel], rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
    rows.iter()
        .filter(|&&r| !labels[r].is_fluent())
        .map(|&r| (r, labels[r].code()))
        .unzip()
}

/// One optimizer step on `x`. Returns the batch loss; batches of fewer than
/// two rows are skipped since batch statistics are undefined.
pub(crate) fn branch_step(
    net: &mut BranchNet,
    adam: &mut Adam,
    x: &DMatrix<f64>,
    targets: &[usize],
    rng: &mut impl rand::Rng,
) -> Option<f64> {
    if x.nrows() < 2 {
        return None;
    }
    let masks = net.sample_masks(x.nrows(), rng);
    let (out, cache) = net.forward_train(x, &masks);
    let (loss, d_out) = cross_entropy(&out, targets, None);
    let grads = net.backward(&cache, &d_out);
    adam.step(net, &grads);
    net.update_running_stats(&cache);
    Some(loss)
}

fn eval_loss(net: &BranchNet, x: &DMatrix<f64>, targets: &[usize]) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    cross_entropy(&net.forward_eval(x), targets, None).0
}

struct Split {
    x: DMatrix<f64>,
    binary: Vec<usize>,
    disfluent_x: DMatrix<f64>,
    disfluent_y: Vec<usize>,
}

impl Split {
    fn new(m: &FeatureMatrix) -> Self {
        let all: Vec<usize> = (0..m.nrows()).collect();
        let (rows, targets) = disfluent_rows(m.labels(), &all);
        Self {
            x: m.values().clone(),
            binary: pseudo_label(m.labels()).into_iter().map(usize::from).collect(),
            disfluent_x: gather(m.values(), &rows),
            disfluent_y: targets,
        }
    }
}

/// Trains both branches on the same shuffled batches. FluentNet sees every
/// row with its binary pseudo-label; DisfluentNet is stepped on the
/// disfluent rows of each batch only, so fluent rows carry zero loss and
/// leave its batch statistics untouched. Stops when the monitored
/// validation loss has not strictly improved for `patience` epochs and
/// restores the best epoch's weights.
pub fn train_two_branch(
    train: &FeatureMatrix,
    valid: &FeatureMatrix,
    config: &TrainConfig,
) -> Result<TwoBranchModel, NnError> {
    config.validate()?;
    if train.nrows() == 0 {
        return Err(NnError::EmptySplit("train"));
    }
    if valid.nrows() == 0 {
        return Err(NnError::EmptySplit("valid"));
    }
    if valid.ncols() != train.ncols() {
        return Err(NnError::DimensionMismatch {
            expected: train.ncols(),
            actual: valid.ncols(),
        });
    }
    let disfluent_count = train.labels().iter().filter(|l| !l.is_fluent()).count();
    if disfluent_count < 2 {
        return Err(NnError::NoDisfluentSamples(disfluent_count));
    }

    let k = train.ncols();
    let spec = |out| {
        let mut s = NetSpec::branch(k, config.hidden, out);
        s.dropout = config.dropout;
        s
    };
    let mut fluent = BranchNet::new(spec(2), &mut seed::rng(config.seed, &[STREAM_INIT, FLUENT_BRANCH]));
    let mut disfluent = BranchNet::new(
        spec(NUM_DISFLUENT),
        &mut seed::rng(config.seed, &[STREAM_INIT, DISFLUENT_BRANCH]),
    );
    let adam = |net: &BranchNet| Adam::new(net, config.learning_rate, config.beta1, config.beta2, config.adam_eps);
    let (mut fluent_opt, mut disfluent_opt) = (adam(&fluent), adam(&disfluent));

    let tr = Split::new(train);
    let va = Split::new(valid);
    let labels = train.labels();
    let mut order: Vec<usize> = (0..train.nrows()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = (fluent.clone(), disfluent.clone());
    let mut curve = Vec::new();
    let mut stopped_epoch = config.max_epochs;

    for epoch in 1..=config.max_epochs {
        let e = epoch as u64;
        order.shuffle(&mut seed::rng(config.seed, &[STREAM_SHUFFLE, e]));
        let mut fluent_rng = seed::rng(config.seed, &[STREAM_DROPOUT, FLUENT_BRANCH, e]);
        let mut disfluent_rng = seed::rng(config.seed, &[STREAM_DROPOUT, DISFLUENT_BRANCH, e]);
        let (mut f_sum, mut f_n, mut d_sum, mut d_n) = (0.0, 0usize, 0.0, 0usize);

        for rows in order.chunks(config.batch_size) {
            let xb = gather(&tr.x, rows);
            let yb: Vec<usize> = rows.iter().map(|&r| tr.binary[r]).collect();
            if let Some(l) = branch_step(&mut fluent, &mut fluent_opt, &xb, &yb, &mut fluent_rng) {
                f_sum += l * rows.len() as f64;
                f_n += rows.len();
            }
            let (drows, dy) = disfluent_rows(labels, rows);
            let dx = gather(&tr.x, &drows);
            if let Some(l) = branch_step(&mut disfluent, &mut disfluent_opt, &dx, &dy, &mut disfluent_rng) {
                d_sum += l * drows.len() as f64;
                d_n += drows.len();
            }
        }

        let fluent_valid = eval_loss(&fluent, &va.x, &va.binary);
        let disfluent_valid = eval_loss(&disfluent, &va.disfluent_x, &va.disfluent_y);
        let monitored = match config.stop_on {
            StopCriterion::Combined => fluent_valid + disfluent_valid,
            StopCriterion::FluentOnly => fluent_valid,
        };
        let record = EpochRecord {
            epoch,
            fluent_train: if f_n > 0 { f_sum / f_n as f64 } else { 0.0 },
            fluent_valid,
            disfluent_train: if d_n > 0 { d_sum / d_n as f64 } else { 0.0 },
            disfluent_valid,
            monitored,
        };
        if ![record.fluent_train, record.disfluent_train, fluent_valid, disfluent_valid]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(NnError::DivergedLoss { epoch });
        }
        curve.push(record);
        match stopper.observe(epoch, monitored) {
            Verdict::Improved => best = (fluent.clone(), disfluent.clone()),
            Verdict::Wait => {}
            Verdict::Stop => {
                stopped_epoch = epoch;
                break;
            }
        }
    }

    let (fluent_net, disfluent_net) = best;
    Ok(TwoBranchModel {
        fluent_net,
        disfluent_net,
        config: config.clone(),
        best_epoch: stopper.best_epoch(),
        stopped_epoch,
        curve,
    })
}

/// Assembles the 5-class vector from the two branch outputs and applies the
/// fluent gate. `fluent` is FluentNet's softmax (fluent, disfluent);
/// `disfluent` is DisfluentNet's softmax over the four disfluent classes.
pub fn compose(fluent: [f64; 2], disfluent: [f64; NUM_DISFLUENT]) -> (ClassLabel, Scored) {
    let p_fluent = fluent[0];
    let p_disfluent = 1.0 - p_fluent;
    let mut proba = [0.0; NUM_CLASSES];
    for (c, &d) in ClassLabel::DISFLUENT.iter().zip(&disfluent) {
        proba[c.code()] = p_disfluent * d;
    }
    proba[ClassLabel::Fluent.code()] = p_fluent;
    let scored = Scored::new(proba);
    (decide(&scored, DecisionRule::FluentGate), scored)
}

impl TwoBranchModel {
    pub fn input_dim(&self) -> usize {
        self.fluent_net.input_dim()
    }

    /// Batch prediction; identical to predicting row by row.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<(ClassLabel, Scored)>, NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let f = softmax_rows(&self.fluent_net.forward_eval(x));
        let d = softmax_rows(&self.disfluent_net.forward_eval(x));
        Ok((0..x.nrows())
            .map(|r| {
                compose(
                    [f[(r, 0)], f[(r, 1)]],
                    [d[(r, 0)], d[(r, 1)], d[(r, 2)], d[(r, 3)]],
                )
            })
            .collect())
    }

    /// Writes `fluent/`, `disfluent/` checkpoints and `curves.csv`.
    pub fn save(&self, dir: &Path) -> Result<(), NnError> {
        self.fluent_net.save(&dir.join("fluent"))?;
        self.disfluent_net.save(&dir.join("disfluent"))?;
        write_curves(&self.curve, &dir.join("curves.csv"))
    }

    /// Loads the two branch checkpoints; configuration and curves are not
    /// restored.
    pub fn load(dir: &Path) -> Result<Self, NnError> {
        let fluent_net = BranchNet::load(&dir.join("fluent"))?;
        let disfluent_net = BranchNet::load(&dir.join("disfluent"))?;
        if fluent_net.input_dim() != disfluent_net.input_dim() {
            return Err(NnError::Malformed("branch input widths differ".into()));
        }
        Ok(Self {
            fluent_net,
            disfluent_net,
            config: TrainConfig::default(),
            best_epoch: 0,
            stopped_epoch: 0,
            curve: Vec::new(),
        })
    }
}

pub fn two_branch_predict(model: &TwoBranchModel, query: &[f64]) -> Result<(ClassLabel, Scored), NnError> {
    let x = DMatrix::from_row_slice(1, query.len(), query);
    Ok(model.predict(&x)?[0])
}

pub fn write_curves(curve: &[EpochRecord], path: &Path) -> Result<(), NnError> {
    let mut out = String::from(
        "epoch,fluent_train_loss,fluent_valid_loss,disfluent_train_loss,disfluent_valid_loss,monitored_valid_loss\n",
    );
    for r in curve {
        out.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.8}\n",
            r.epoch, r.fluent_train, r.fluent_valid, r.disfluent_train, r.disfluent_valid, r.monitored
        ));
    }
    fs::write(path, out).map_err(|e| NnError::Data(DataError::io(path, e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use ClassLabel::*;

    fn toy(n: usize, sep: f64, s: u64) -> FeatureMatrix {
        let mut rng = seed::rng(s, &[]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = ClassLabel::ALL[i % 5];
            let mut v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            v[label.code()] += sep;
            rows.push(v);
            labels.push(label);
        }
        FeatureMatrix::from_rows(&rows, labels).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            hidden: (16, 8),
            batch_size: 32,
            max_epochs: 40,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn patience_arithmetic() {
        let mut s = EarlyStopping::new(7);
        let mut stop = None;
        for epoch in 1..=200 {
            let loss = if epoch <= 20 { 1.0 / epoch as f64 } else { 0.05 };
            if s.observe(epoch, loss) == Verdict::Stop {
                stop = Some(epoch);
                break;
            }
        }
        assert_eq!(stop, Some(27));
        assert_eq!(s.best_epoch(), 20);
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 1.0), Verdict::Improved);
        assert_eq!(s.observe(2, 1.0), Verdict::Wait);
        assert_eq!(s.observe(3, 1.0), Verdict::Stop);
    }

    #[test]
    fn gate_and_composite() {
        let (label, s) = compose([0.9, 0.1], [0.7, 0.1, 0.1, 0.1]);
        assert_eq!(label, Fluent);
        assert!((s.proba.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let (_, s) = compose([0.2, 0.8], [0.25; 4]);
        for p in s.proba {
            assert!((p - 0.2).abs() < 1e-15);
        }

        let (label, _) = compose([0.5, 0.5], [0.1, 0.6, 0.2, 0.1]);
        assert_eq!(label, Fluent);
        let (label, _) = compose([0.49, 0.51], [0.1, 0.6, 0.2, 0.1]);
        assert_eq!(label, Prolongation);
    }

    #[test]
    fn all_fluent_training_is_rejected() {
        let rows = vec![vec![0.0, 1.0]; 6];
        let train = FeatureMatrix::from_rows(&rows, vec![Fluent; 6]).unwrap();
        assert!(matches!(
            train_two_branch(&train, &train, &quick()),
            Err(NnError::NoDisfluentSamples(0))
        ));
    }

    #[test]
    fn fluent_rows_do_not_touch_disfluent_update() {
        let data = toy(40, 2.0, 3);
        let rows: Vec<usize> = (0..40).collect();
        let mut perturbed = data.values().clone();
        let disfluent_only: Vec<usize> = rows.iter().copied().filter(|&r| !data.labels()[r].is_fluent()).collect();
        for r in 0..40 {
            if data.labels()[r].is_fluent() {
                perturbed.row_mut(r).fill(1e3);
            }
        }
        let step = |x: &DMatrix<f64>, batch: &[usize]| {
            let mut net = BranchNet::new(NetSpec::branch(6, (8, 5), 4), &mut seed::rng(9, &[]));
            let mut opt = Adam::new(&net, 1e-2, 0.9, 0.999, 1e-8);
            let (drows, dy) = disfluent_rows(data.labels(), batch);
            branch_step(&mut net, &mut opt, &gather(x, &drows), &dy, &mut seed::rng(10, &[])).unwrap();
            net
        };
        let full = step(data.values(), &rows);
        let perturbed = step(&perturbed, &rows);
        let stripped = step(data.values(), &disfluent_only);
        for ((a, b), c) in full.params().iter().zip(perturbed.params()).zip(stripped.params()) {
            for i in 0..a.len() {
                assert!((a[i] - b[i]).abs() <= 1e-12 && (a[i] - c[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn learns_separable_toy_data_deterministically() {
        let train = toy(300, 4.0, 1);
        let valid = toy(100, 4.0, 2);
        let test = toy(100, 4.0, 3);
        let cfg = TrainConfig { seed: 5, ..quick() };
        let a = train_two_branch(&train, &valid, &cfg).unwrap();
        let b = train_two_branch(&train, &valid, &cfg).unwrap();
        for (x, y) in a.fluent_net.params().iter().zip(b.fluent_net.params()) {
            assert_eq!(*x, y);
        }
        let preds = a.predict(test.values()).unwrap();
        let correct = preds.iter().zip(test.labels()).filter(|((p, _), t)| p == *t).count();
        assert!(correct >= 97, "{correct}/100");
        for (_, s) in &preds {
            assert!((s.proba.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(a.best_epoch >= 1 && a.best_epoch <= a.stopped_epoch);
        assert_eq!(a.curve.len(), a.stopped_epoch);
    }

    #[test]
    fn batch_and_single_predictions_agree() {
        let train = toy(100, 3.0, 4);
        let model = train_two_branch(&train, &train, &TrainConfig { max_epochs: 3, ..quick() }).unwrap();
        let batch = model.predict(train.values()).unwrap();
        for r in 0..train.nrows() {
            let (label, single) = two_branch_predict(&model, &train.row(r)).unwrap();
            assert_eq!(label, batch[r].0);
            for c in 0..5 {
                assert!((single.proba[c] - batch[r].1.proba[c]).abs() <= 1e-12);
            }
        }
        assert!(matches!(
            two_branch_predict(&model, &[0.0; 3]),
            Err(NnError::DimensionMismatch { expected: 6, actual: 3 })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let train = toy(60, 3.0, 6);
        let model = train_two_branch(&train, &train, &TrainConfig { max_epochs: 2, ..quick() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        assert!(dir.path().join("curves.csv").exists());
        let back = TwoBranchModel::load(dir.path()).unwrap();
        let (a, b) = (model.predict(train.values()).unwrap(), back.predict(train.values()).unwrap());
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            for c in 0..5 {
                assert!((x.proba[c] - y.proba[c]).abs() < 1e-4);
            }
        }
    }
}
