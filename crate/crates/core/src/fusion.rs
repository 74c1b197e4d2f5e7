//! Score-level fusion and the configurable per-fold pipeline: stream
//! selection, normalization, per-stream LDA, concatenation and classifier.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::classifiers::{decide, gnb_fit, knn_fit, ClassifierError, DecisionRule, GnbConfig, Scored};
use crate::dataio::Stream;
use crate::features::{concat_features, magnitude_normalize, FeatureError, FeatureMatrix};
use crate::label::{ClassLabel, NUM_CLASSES};
use crate::lda::{lda_fit, lda_transform, LdaError, LdaModel, DEFAULT_SHRINKAGE};
use crate::neuralnet::{train_two_branch, EpochRecord, NnError, TrainConfig};

pub const DEFAULT_ALPHA: f64 = 0.9;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("{which} scores sum to {sum}, not 1")]
    NotAProbability { which: &'static str, sum: f64 },
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("invalid pipeline: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Lda(#[from] LdaError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn check_simplex(p: &[f64; NUM_CLASSES], which: &'static str) -> Result<(), FusionError> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(FusionError::NotAProbability { which, sum });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<(), FusionError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FusionError::InvalidAlpha(alpha));
    }
    Ok(())
}

/// `alpha * p_w2v2 + (1 - alpha) * p_ecapa`, elementwise.
pub fn score_fuse(
    p_w2v2: &[f64; NUM_CLASSES],
    p_ecapa: &[f64; NUM_CLASSES],
    alpha: f64,
) -> Result<[f64; NUM_CLASSES], FusionError> {
    check_alpha(alpha)?;
    check_simplex(p_w2v2, "w2v2")?;
    check_simplex(p_ecapa, "ecapa")?;
    Ok(std::array::from_fn(|c| alpha * p_w2v2[c] + (1.0 - alpha) * p_ecapa[c]))
}

/// [`score_fuse`] on full classifier outputs; tiebreak scores are mixed with
/// the same weights so that either endpoint reproduces its source exactly.
pub fn fuse_scored(w2v2: &Scored, ecapa: &Scored, alpha: f64) -> Result<Scored, FusionError> {
    let proba = score_fuse(&w2v2.proba, &ecapa.proba, alpha)?;
    let tiebreak = std::array::from_fn(|c| alpha * w2v2.tiebreak[c] + (1.0 - alpha) * ecapa.tiebreak[c]);
    Ok(Scored { proba, tiebreak })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Knn,
    Gnb,
    Nn,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "knn",
            ClassifierKind::Gnb => "gnb",
            ClassifierKind::Nn => "nn",
        }
    }

    pub fn decision_rule(self) -> DecisionRule {
        match self {
            ClassifierKind::Nn => DecisionRule::FluentGate,
            _ => DecisionRule::Argmax,
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "knn" => Ok(ClassifierKind::Knn),
            "gnb" | "nbc" => Ok(ClassifierKind::Gnb),
            "nn" => Ok(ClassifierKind::Nn),
            _ => Err(format!("unknown classifier {s:?} (expected knn, gnb or nn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMode {
    None,
    Score { alpha: f64 },
    Concat,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::None => f.write_str("none"),
            FusionMode::Score { alpha } => write!(f, "score(alpha={alpha})"),
            FusionMode::Concat => f.write_str("concat"),
        }
    }
}

/// Everything that defines one experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub streams: Vec<Stream>,
    /// Unit-normalize ECAPA vectors; w2v2 streams are never normalized.
    pub normalize: bool,
    /// LDA components per stream, if any.
    pub lda: Option<usize>,
    pub lda_shrinkage: f64,
    pub classifier: ClassifierKind,
    pub fusion: FusionMode,
    pub knn_k: usize,
    pub knn_p: f64,
    pub gnb: GnbConfig,
    /// The seed field is ignored; each fold derives its own.
    pub nn: TrainConfig,
}

impl PipelineSpec {
    pub fn new(streams: Vec<Stream>, classifier: ClassifierKind) -> Self {
        Self {
            streams,
            normalize: false,
            lda: None,
            lda_shrinkage: DEFAULT_SHRINKAGE,
            classifier,
            fusion: FusionMode::None,
            knn_k: crate::classifiers::knn::DEFAULT_K,
            knn_p: crate::classifiers::knn::DEFAULT_P,
            gnb: GnbConfig::default(),
            nn: TrainConfig::default(),
        }
    }

    pub fn with_lda(mut self, components: usize) -> Self {
        self.lda = Some(components);
        self
    }

    pub fn with_fusion(mut self, fusion: FusionMode) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::InvalidSpec(m));
        if self.streams.is_empty() {
            return bad("no embedding stream selected".into());
        }
        let mut seen = self.streams.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.streams.len() {
            return bad("a stream is listed twice".into());
        }
        for s in &self.streams {
            if let Stream::W2v2(l) = s {
                if !(1..=13).contains(l) {
                    return bad(format!("w2v2 layer {l} outside 1..=13"));
                }
            }
        }
        match self.fusion {
            FusionMode::None if self.streams.len() != 1 => {
                return bad(format!(
                    "{} streams given without a fusion mode; use concat or score",
                    self.streams.len()
                ))
            }
            FusionMode::Score { alpha } => {
                check_alpha(alpha)?;
                let ecapa = self.streams.iter().filter(|s| **s == Stream::Ecapa).count();
                if self.streams.len() != 2 || ecapa != 1 {
                    return bad("score fusion needs exactly one ecapa and one w2v2 stream".into());
                }
            }
            FusionMode::Concat if self.streams.len() < 2 => {
                return bad("concat fusion needs at least two streams".into())
            }
            _ => {}
        }
        if let Some(m) = self.lda {
            if m == 0 || m > crate::lda::MAX_COMPONENTS {
                return bad(format!("LDA components must be in 1..=4, got {m}"));
            }
        }
        if self.knn_k == 0 {
            return bad("k must be >= 1".into());
        }
        Ok(())
    }

    /// `key=value` pairs recorded in run metadata.
    pub fn describe(&self) -> Vec<(String, String)> {
        let streams: Vec<String> = self.streams.iter().map(ToString::to_string).collect();
        let lda = self.lda.map_or("none".to_string(), |m| m.to_string());
        let mut out = vec![
            ("streams", streams.join("+")),
            ("normalize_ecapa", self.normalize.to_string()),
            ("lda_components", lda),
            ("lda_shrinkage", self.lda_shrinkage.to_string()),
            ("lda_placement", "per-stream, before concatenation".to_string()),
            ("classifier", self.classifier.to_string()),
            ("decision_rule", format!("{:?}", self.classifier.decision_rule())),
            ("fusion", self.fusion.to_string()),
        ];
        match self.classifier {
            ClassifierKind::Knn => {
                out.push(("knn_k", self.knn_k.to_string()));
                out.push(("knn_p", self.knn_p.to_string()));
                out.push(("knn_ties", "distance->lower row; vote->smaller summed distance->lower code".into()));
            }
            ClassifierKind::Gnb => {
                out.push(("gnb_var_floor", format!("{:?}", self.gnb.var_floor)));
                out.push(("gnb_priors", format!("{:?}", self.gnb.priors)));
            }
            ClassifierKind::Nn => {
                let c = &self.nn;
                out.push(("nn_hidden", format!("{}x{}", c.hidden.0, c.hidden.1)));
                out.push(("nn_dropout", c.dropout.to_string()));
                out.push(("nn_lr", c.learning_rate.to_string()));
                out.push(("nn_adam", format!("{}/{}/{}", c.beta1, c.beta2, c.adam_eps)));
                out.push(("nn_batch", c.batch_size.to_string()));
                out.push(("nn_max_epochs", c.max_epochs.to_string()));
                out.push(("nn_patience", c.patience.to_string()));
                out.push(("nn_stop_on", format!("{:?}", c.stop_on)));
                out.push(("nn_bn", format!("eps={} momentum={}", crate::neuralnet::net::BN_EPS, crate::neuralnet::net::BN_MOMENTUM)));
                out.push(("nn_branches", "separate (no shared layers)".into()));
                out.push(("nn_disfluent_head", "4 logits, fluent rows excluded".into()));
            }
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// A validated [`PipelineSpec`] ready to run on folds.
#[derive(Debug, Clone)]
pub struct Pipeline {
    spec: PipelineSpec,
}

pub fn build_pipeline(spec: PipelineSpec) -> Result<Pipeline, FusionError> {
    spec.validate()?;
    Ok(Pipeline { spec })
}

/// Per-stream preprocessing fitted on one fold's training rows.
#[derive(Debug, Clone)]
pub struct Projection {
    pub lda: Vec<Option<LdaModel>>,
}

/// Classifier outputs for the eval rows of one fold.
#[derive(Debug, Clone)]
pub struct FoldPrediction {
    pub labels: Vec<ClassLabel>,
    pub scores: Vec<Scored>,
    /// Width of the matrix each classifier was trained on.
    pub input_dims: Vec<usize>,
    /// NN training curves, one per trained model.
    pub curves: Vec<Vec<EpochRecord>>,
}

impl Pipeline {
    pub fn spec(&self) -> &PipelineSpec {
        &self.spec
    }

    /// Applies stateless per-row transforms to freshly loaded streams, in
    /// `spec.streams` order.
    pub fn prepare(&self, mut streams: Vec<FeatureMatrix>) -> Result<Vec<FeatureMatrix>, FusionError> {
        self.check_arity(&streams)?;
        if self.spec.normalize {
            for (s, m) in self.spec.streams.iter().zip(streams.iter_mut()) {
                if *s == Stream::Ecapa {
                    *m = m.map_rows(magnitude_normalize)?;
                }
            }
        }
        if let Some(first) = streams.first() {
            for (s, m) in self.spec.streams.iter().zip(&streams).skip(1) {
                if m.clip_ids() != first.clip_ids() {
                    return Err(FusionError::InvalidSpec(format!(
                        "stream {s} is not aligned with {}",
                        self.spec.streams[0]
                    )));
                }
            }
        }
        Ok(streams)
    }

    fn check_arity(&self, streams: &[FeatureMatrix]) -> Result<(), FusionError> {
        if streams.len() != self.spec.streams.len() {
            return Err(FusionError::InvalidSpec(format!(
                "expected {} stream matrices, got {}",
                self.spec.streams.len(),
                streams.len()
            )));
        }
        Ok(())
    }

    /// Fits one LDA per stream on training rows only.
    pub fn fit_projection(&self, train: &[FeatureMatrix]) -> Result<Projection, FusionError> {
        self.check_arity(train)?;
        let lda = train
            .iter()
            .map(|m| {
                self.spec
                    .lda
                    .map(|k| lda_fit(m, k, self.spec.lda_shrinkage))
                    .transpose()
            })
            .collect::<Result<_, _>>()?;
        Ok(Projection { lda })
    }

    fn project(&self, projection: &Projection, data: &[FeatureMatrix]) -> Result<Vec<FeatureMatrix>, FusionError> {
        data.iter()
            .zip(&projection.lda)
            .map(|(m, lda)| match lda {
                Some(model) => Ok(lda_transform(model, m)?),
                None => Ok(m.clone()),
            })
            .collect()
    }

    /// Fits the classifier(s) on `train` (NN also early-stops on `valid`)
    /// and scores `eval`. Only `eval` labels are never read.
    pub fn fit_predict(
        &self,
        projection: &Projection,
        train: &[FeatureMatrix],
        valid: &[FeatureMatrix],
        eval: &[FeatureMatrix],
        seed: u64,
    ) -> Result<FoldPrediction, FusionError> {
        for part in [train, valid, eval] {
            self.check_arity(part)?;
        }
        let train = self.project(projection, train)?;
        let valid = self.project(projection, valid)?;
        let eval = self.project(projection, eval)?;
        let rule = self.spec.classifier.decision_rule();

        let mut curves = Vec::new();
        let (scores, input_dims) = match self.spec.fusion {
            FusionMode::Score { alpha } => {
                let w = self.spec.streams.iter().position(|s| *s != Stream::Ecapa).unwrap();
                let e = 1 - w;
                let sw = self.classify(&train[w], &valid[w], &eval[w], seed, &mut curves)?;
                let se = self.classify(&train[e], &valid[e], &eval[e], seed, &mut curves)?;
                let fused = sw
                    .iter()
                    .zip(&se)
                    .map(|(a, b)| fuse_scored(a, b, alpha))
                    .collect::<Result<Vec<_>, _>>()?;
                (fused, vec![train[w].ncols(), train[e].ncols()])
            }
            _ => {
                let join = |parts: &[FeatureMatrix]| -> Result<FeatureMatrix, FusionError> {
                    if parts.len() == 1 {
                        return Ok(parts[0].clone());
                    }
                    let refs: Vec<&FeatureMatrix> = parts.iter().collect();
                    Ok(concat_features(&refs)?)
                };
                let (tr, va, ev) = (join(&train)?, join(&valid)?, join(&eval)?);
                (self.classify(&tr, &va, &ev, seed, &mut curves)?, vec![tr.ncols()])
            }
        };
        let labels = scores.iter().map(|s| decide(s, rule)).collect();
        Ok(FoldPrediction {
            labels,
            scores,
            input_dims,
            curves,
        })
    }

    fn classify(
        &self,
        train: &FeatureMatrix,
        valid: &FeatureMatrix,
        eval: &FeatureMatrix,
        seed: u64,
        curves: &mut Vec<Vec<EpochRecord>>,
    ) -> Result<Vec<Scored>, FusionError> {
        let rows = |m: &FeatureMatrix| (0..m.nrows()).map(|i| m.row(i)).collect::<Vec<_>>();
        Ok(match self.spec.classifier {
            ClassifierKind::Knn => {
                let model = knn_fit(train, self.spec.knn_k, self.spec.knn_p)?;
                rows(eval).iter().map(|q| model.score(q)).collect::<Result<_, _>>()?
            }
            ClassifierKind::Gnb => {
                let model = gnb_fit(train, &self.spec.gnb)?;
                rows(eval).iter().map(|q| model.score(q)).collect::<Result<_, _>>()?
            }
            ClassifierKind::Nn => {
                let config = TrainConfig {
                    seed,
                    ..self.spec.nn.clone()
                };
                let model = train_two_branch(train, valid, &config)?;
                curves.push(model.curve.clone());
                model.predict(eval.values())?.into_iter().map(|(_, s)| s).collect()
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_hand_value() {
        let w = [0.8, 0.05, 0.05, 0.05, 0.05];
        let e = [0.2; 5];
        assert_eq!(score_fuse(&w, &e, 1.0).unwrap(), w);
        assert_eq!(score_fuse(&w, &e, 0.0).unwrap(), e);
        let f = score_fuse(&w, &e, 0.9).unwrap();
        let expected = [0.74, 0.065, 0.065, 0.065, 0.065];
        for c in 0..5 {
            assert!((f[c] - expected[c]).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = [0.2; 5];
        assert!(matches!(score_fuse(&p, &p, 1.5), Err(FusionError::InvalidAlpha(_))));
        assert!(matches!(score_fuse(&p, &p, f64::NAN), Err(FusionError::InvalidAlpha(_))));
        let q = [0.3; 5];
        assert!(matches!(
            score_fuse(&q, &p, 0.5),
            Err(FusionError::NotAProbability { which: "w2v2", .. })
        ));
    }

    #[test]
    fn spec_arity() {
        let score = FusionMode::Score { alpha: 0.9 };
        let only_ecapa = PipelineSpec::new(vec![Stream::Ecapa], ClassifierKind::Gnb).with_fusion(score);
        assert!(matches!(build_pipeline(only_ecapa), Err(FusionError::InvalidSpec(_))));
        let two_layers =
            PipelineSpec::new(vec![Stream::W2v2(1), Stream::W2v2(7)], ClassifierKind::Gnb).with_fusion(score);
        assert!(build_pipeline(two_layers).is_err());
        let ok = PipelineSpec::new(vec![Stream::W2v2(11), Stream::Ecapa], ClassifierKind::Knn).with_fusion(score);
        assert!(build_pipeline(ok).is_ok());
        let no_mode = PipelineSpec::new(vec![Stream::W2v2(1), Stream::W2v2(7)], ClassifierKind::Knn);
        assert!(build_pipeline(no_mode).is_err());
        let concat_one = PipelineSpec::new(vec![Stream::Ecapa], ClassifierKind::Knn).with_fusion(FusionMode::Concat);
        assert!(build_pipeline(concat_one).is_err());
        let bad_lda = PipelineSpec::new(vec![Stream::Ecapa], ClassifierKind::Knn).with_lda(5);
        assert!(build_pipeline(bad_lda).is_err());
    }

    fn simplex() -> impl Strategy<Value = [f64; 5]> {
        proptest::array::uniform5(0.0f64..1.0).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.map(|x| x / s))
        })
    }

    proptest! {
        #[test]
        fn stays_on_simplex(a in simplex(), b in simplex(), alpha in 0.0f64..=1.0) {
            let f = score_fuse(&a, &b, alpha).unwrap();
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(f.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn shared_argmax_survives(a in simplex(), b in simplex(), alpha in 0.0f64..=1.0) {
            let argmax = |p: &[f64; 5]| (0..5).fold(0, |best, c| if p[c] > p[best] { c } else { best });
            let margin = |p: &[f64; 5]| {
                let m = argmax(p);
                (0..5).filter(|&c| c != m).map(|c| p[m] - p[c]).fold(f64::INFINITY, f64::min)
            };
            // Move b's winner onto a's winning class.
            let mut b = b;
            let (wa, wb) = (argmax(&a), argmax(&b));
            b.swap(wa, wb);
            prop_assume!(margin(&a) > 1e-9 && margin(&b) > 1e-9);
            let f = score_fuse(&a, &b, alpha).unwrap();
            prop_assert_eq!(argmax(&f), argmax(&a));
        }
    }
}
