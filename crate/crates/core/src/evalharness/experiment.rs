use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use super::folds::{make_folds, FoldPlan, NUM_FOLDS};
use super::metrics::{Confusion, MetricsRow, COLUMNS};
use super::HarnessError;
use crate::classifiers::Scored;
use crate::dataio::{load_stream, DataError, DatasetManifest};
use crate::features::FeatureMatrix;
use crate::fusion::{FusionError, Pipeline, Projection};
use crate::label::ClassLabel;
use crate::neuralnet::{write_curves, EpochRecord};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    /// Draw a new fold plan for every repeat instead of reusing one.
    pub reshuffle_folds: bool,
    /// Worker threads; 1 runs everything on the calling thread.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 1,
            reshuffle_folds: false,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    fn plan_seed(&self, repeat: usize) -> u64 {
        if self.reshuffle_folds {
            seed::derive(self.seed, &[repeat as u64])
        } else {
            self.seed
        }
    }

    /// Training seed of one (repeat, fold) unit. It does not depend on the
    /// stream, so fused and single-stream runs train identical models.
    pub fn unit_seed(&self, repeat: usize, fold: usize) -> u64 {
        seed::derive(self.seed, &[0x7EA1, repeat as u64, fold as u64])
    }
}

/// Outcome of one fold of one repeat.
#[derive(Debug, Clone)]
pub struct FoldReport {
    pub repeat: usize,
    pub fold: usize,
    pub clip_ids: Vec<String>,
    pub podcast_ids: Vec<String>,
    pub truths: Vec<ClassLabel>,
    pub predictions: Vec<ClassLabel>,
    pub scores: Vec<Scored>,
    pub confusion: Confusion,
    pub metrics: MetricsRow,
    pub input_dims: Vec<usize>,
    pub curves: Vec<Vec<EpochRecord>>,
}

/// Aggregate over all folds and repeats: mean of fold values within a
/// repeat, then mean over repeats; sample std over every fold value; and
/// the pooled confusion's accuracies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsTable {
    pub mean: MetricsRow,
    pub std: MetricsRow,
    pub pooled: MetricsRow,
}

impl MetricsTable {
    pub fn from_reports(reports: &[FoldReport]) -> Result<Self, HarnessError> {
        if reports.is_empty() {
            return Err(HarnessError::EmptyEvaluation);
        }
        let repeats = reports.iter().map(|r| r.repeat).max().unwrap() + 1;
        let per_repeat: Vec<MetricsRow> = (0..repeats)
            .map(|rep| {
                let rows: Vec<MetricsRow> = reports.iter().filter(|r| r.repeat == rep).map(|r| r.metrics).collect();
                MetricsRow::mean(&rows)
            })
            .collect();
        let all: Vec<MetricsRow> = reports.iter().map(|r| r.metrics).collect();
        let mut pooled = Confusion::default();
        for r in reports {
            pooled.add(&r.confusion);
        }
        Ok(Self {
            mean: MetricsRow::mean(&per_repeat),
            std: MetricsRow::std(&all),
            pooled: pooled.row()?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("stat,{}\n", COLUMNS.join(","));
        for (name, row) in [("mean", &self.mean), ("std", &self.std), ("pooled", &self.pooled)] {
            out.push_str(&format!("{name},{}\n", row.csv_cells().join(",")));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Fold plan used by each repeat.
    pub plans: Vec<FoldPlan>,
    pub podcasts: Vec<String>,
    /// Ordered by repeat, then fold.
    pub reports: Vec<FoldReport>,
    pub table: MetricsTable,
}

/// Loads and prepares every stream the pipeline needs.
pub fn load_streams(manifest: &DatasetManifest, pipeline: &Pipeline) -> Result<Vec<FeatureMatrix>, HarnessError> {
    let raw = pipeline
        .spec()
        .streams
        .iter()
        .map(|&s| load_stream(manifest, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pipeline.prepare(raw)?)
}

pub fn run_experiment(
    manifest: &DatasetManifest,
    pipeline: &Pipeline,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, HarnessError> {
    run_on_streams(&load_streams(manifest, pipeline)?, pipeline, config)
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    if jobs <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    Ok(pool.install(f))
}

fn map_units<T: Send, U: Sync>(
    jobs: usize,
    units: &[U],
    f: impl Fn(&U) -> Result<T, HarnessError> + Sync + Send,
) -> Result<Vec<T>, HarnessError> {
    if jobs <= 1 {
        return units.iter().map(f).collect();
    }
    in_pool(jobs, || units.par_iter().map(f).collect())?
}

/// Cross-validates `pipeline` on already prepared stream matrices that share
/// one clip order. Every fitted stage sees only the fold's train (and, for
/// early stopping, valid) rows.
pub fn run_on_streams(
    streams: &[FeatureMatrix],
    pipeline: &Pipeline,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, HarnessError> {
    if config.repeats == 0 {
        return Err(HarnessError::InvalidConfig("repeats must be at least 1".into()));
    }
    let first = streams
        .first()
        .ok_or_else(|| HarnessError::InvalidConfig("no streams loaded".into()))?;
    let row_podcasts = first.podcast_ids();
    let mut podcasts: Vec<String> = row_podcasts.to_vec();
    podcasts.sort();
    podcasts.dedup();

    let distinct_plans = if config.reshuffle_folds { config.repeats } else { 1 };
    let plans = (0..distinct_plans)
        .map(|r| {
            let plan = make_folds(&podcasts, config.plan_seed(r))?;
            plan.verify(&podcasts)?;
            Ok(plan)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let plan_of = |repeat: usize| if config.reshuffle_folds { repeat } else { 0 };

    let splits = plans
        .iter()
        .map(|p| (0..NUM_FOLDS).map(|f| p.split_rows(f, row_podcasts)).collect())
        .collect::<Result<Vec<Vec<_>>, _>>()?;
    let select = |rows: &[usize]| streams.iter().map(|m| m.select_rows(rows)).collect::<Vec<_>>();
    let context = |repeat: usize, fold: usize| move |source: FusionError| HarnessError::Fold { repeat, fold, source };

    // Projections depend only on the training rows, so they are shared
    // by every repeat that uses the same plan.
    let proj_units: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|p| (0..NUM_FOLDS).map(move |f| (p, f)))
        .collect();
    let projections: Vec<Projection> = map_units(config.jobs, &proj_units, |&(p, f)| {
        pipeline
            .fit_projection(&select(&splits[p][f].train))
            .map_err(context(p, f))
    })?;

    let units: Vec<(usize, usize)> = (0..config.repeats)
        .flat_map(|r| (0..NUM_FOLDS).map(move |f| (r, f)))
        .collect();
    let reports = map_units(config.jobs, &units, |&(repeat, fold)| {
        let p = plan_of(repeat);
        let rows = &splits[p][fold];
        let eval = select(&rows.eval);
        let out = pipeline
            .fit_predict(
                &projections[p * NUM_FOLDS + fold],
                &select(&rows.train),
                &select(&rows.valid),
                &eval,
                config.unit_seed(repeat, fold),
            )
            .map_err(context(repeat, fold))?;
        let truths = eval[0].labels().to_vec();
        let confusion = Confusion::from_labels(&out.labels, &truths)?;
        Ok(FoldReport {
            repeat,
            fold,
            clip_ids: eval[0].clip_ids().to_vec(),
            podcast_ids: eval[0].podcast_ids().to_vec(),
            truths,
            predictions: out.labels,
            scores: out.scores,
            metrics: confusion.row()?,
            confusion,
            input_dims: out.input_dims,
            curves: out.curves,
        })
    })?;

    let table = MetricsTable::from_reports(&reports)?;
    Ok(ExperimentResult {
        plans: (0..config.repeats).map(|r| plans[plan_of(r)].clone()).collect(),
        podcasts,
        reports,
        table,
    })
}

/// Writes `contents` through a temporary sibling and a rename.
pub(crate) fn write_atomic(path: &Path, contents: &str) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| DataError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

fn predictions_csv(r: &FoldReport) -> String {
    let mut out = String::from("clip_id,podcast_id,truth,prediction,p_R,p_P,p_B,p_I,p_F\n");
    for i in 0..r.truths.len() {
        let p: Vec<String> = r.scores[i].proba.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.clip_ids[i],
            r.podcast_ids[i],
            r.truths[i],
            r.predictions[i],
            p.join(",")
        ));
    }
    out
}

const LAYOUT: &str = "\
metrics.csv                      aggregate: mean over folds then repeats, sample std over folds, pooled counts
folds.csv                        one metrics row per (repeat, fold)
folds/fold_<i>_repeat_<j>.csv    per-clip predictions and class probabilities for fold i of repeat j
confusion_<i>.csv                confusion counts of fold i summed over repeats (rows truth, columns prediction)
fold_plan.csv                    podcast roles per repeat and fold
curves/                          neural-network training curves, when the classifier is nn
run_meta.txt                     every setting needed to re-run this experiment
";

/// Writes the full artifact set of a run into `dir`. Only `run_meta.txt`
/// carries a timestamp; all other files are byte-identical across reruns.
pub fn write_outputs(
    dir: &Path,
    result: &ExperimentResult,
    pipeline: &Pipeline,
    config: &ExperimentConfig,
    extra_meta: &[(String, String)],
) -> Result<(), HarnessError> {
    write_atomic(&dir.join("metrics.csv"), &result.table.to_csv())?;

    let mut folds = format!("repeat,fold,n_eval,{}\n", COLUMNS.join(","));
    for r in &result.reports {
        folds.push_str(&format!(
            "{},{},{},{}\n",
            r.repeat,
            r.fold,
            r.truths.len(),
            r.metrics.csv_cells().join(",")
        ));
        write_atomic(
            &dir.join("folds").join(format!("fold_{}_repeat_{}.csv", r.fold, r.repeat)),
            &predictions_csv(r),
        )?;
        for (k, curve) in r.curves.iter().enumerate() {
            let name = if r.curves.len() == 1 {
                format!("fold_{}_repeat_{}.csv", r.fold, r.repeat)
            } else {
                format!("fold_{}_repeat_{}_model_{k}.csv", r.fold, r.repeat)
            };
            let path = dir.join("curves").join(name);
            fs::create_dir_all(dir.join("curves")).map_err(|e| DataError::io(dir, e))?;
            write_curves(curve, &path).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        }
    }
    write_atomic(&dir.join("folds.csv"), &folds)?;

    for fold in 0..NUM_FOLDS {
        let mut total = Confusion::default();
        for r in result.reports.iter().filter(|r| r.fold == fold) {
            total.add(&r.confusion);
        }
        write_atomic(&dir.join(format!("confusion_{fold}.csv")), &total.to_csv())?;
    }

    let mut plan = String::from("repeat,fold,role,podcast_id\n");
    for (rep, p) in result.plans.iter().enumerate() {
        for (i, f) in p.folds().iter().enumerate() {
            for (role, ids) in [("train", &f.train), ("valid", &f.valid), ("eval", &f.eval)] {
                for id in ids {
                    plan.push_str(&format!("{rep},{i},{role},{id}\n"));
                }
            }
        }
    }
    write_atomic(&dir.join("fold_plan.csv"), &plan)?;

    let mut meta: Vec<(String, String)> = vec![
        ("tool_version".into(), env!("CARGO_PKG_VERSION").into()),
        ("seed".into(), config.seed.to_string()),
        ("repeats".into(), config.repeats.to_string()),
        ("folds".into(), NUM_FOLDS.to_string()),
        ("fold_scheme".into(), "seeded shuffle, 10 contiguous blocks; eval=i valid=i+1 train=rest".into()),
        ("reshuffle_folds".into(), config.reshuffle_folds.to_string()),
        ("jobs".into(), config.jobs.to_string()),
        ("podcasts".into(), result.podcasts.len().to_string()),
        ("per_class_metric".into(), "class-wise recall (percent)".into()),
        ("aggregate".into(), "mean over folds, then mean over repeats".into()),
    ];
    meta.extend(pipeline.spec().describe());
    if let Some(r) = result.reports.first() {
        let dims: Vec<String> = r.input_dims.iter().map(ToString::to_string).collect();
        meta.push(("classifier_input_dims".into(), dims.join("+")));
    }
    meta.extend(extra_meta.iter().cloned());
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    meta.push(("timestamp_unix".into(), secs.to_string()));
    let body: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_atomic(&dir.join("run_meta.txt"), &body)?;
    write_atomic(&dir.join("README.txt"), LAYOUT)?;
    Ok(())
}
