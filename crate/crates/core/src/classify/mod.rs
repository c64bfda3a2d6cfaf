//! Difficulty and adversarial-prompt classifiers built on the forest.
//!
//! A pipeline turns prompts into TF-IDF rows plus one column holding the
//! NofT predicted by a frozen regressor, oversamples minority classes with
//! SMOTE, tunes a forest by random search and calibrates its probabilities
//! with isotonic regression on a held-back fold.

mod isotonic;
mod report;
mod roc;
mod smote;

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split, CorpusError, Dataset, LabelKind, SplitSpec};
use crate::forest::{
    self, index_labels, random_search, Extension, ForestError, ForestModel, ModelKind, SearchSpace, Target,
    TrainReport, ValidationSpec,
};
use crate::vectorize::{self, SparseVector, TokenizerConfig, Vocabulary};

pub use isotonic::{fit_isotonic, IsotonicMap};
pub use report::{ClassMetrics, ClassificationReport};
pub use roc::{auc, roc_curve, select_threshold, RocPoint, ThresholdPolicy};
pub use smote::{interpolate, smote_oversample, SmoteConfig, SmoteOutput};

/// Name of the appended predicted-NofT column.
pub const NOFT_FEATURE: &str = "predicted_noft";
/// Default decision threshold for the adversarial task.
pub const ADVERSARIAL_THRESHOLD: f64 = 0.90;
const CALIBRATION_TAG: [u8; 4] = *b"CALB";

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("class {class} has {size} samples but SMOTE needs more than k={k}; use a smaller k")]
    MinorityTooSmall { class: usize, size: usize, k: usize },
    #[error("need at least two classes")]
    SingleClass,
    #[error("record {id} has no {label} label")]
    MissingLabel { id: String, label: &'static str },
    #[error("label {0:?} is not one of the model's classes")]
    UnknownClass(String),
    #[error("feature mode {0} needs a NofT regressor")]
    MissingNoft(FeatureMode),
    #[error("model file has no calibration section")]
    MissingCalibration,
    #[error("bad calibration section: {0}")]
    BadCalibration(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Which inputs the classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Tfidf,
    Noft,
    Both,
}

impl FeatureMode {
    pub fn uses_tfidf(self) -> bool {
        matches!(self, FeatureMode::Tfidf | FeatureMode::Both)
    }

    pub fn uses_noft(self) -> bool {
        matches!(self, FeatureMode::Noft | FeatureMode::Both)
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Tfidf => "tfidf",
            FeatureMode::Noft => "noft",
            FeatureMode::Both => "both",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tfidf" => Ok(FeatureMode::Tfidf),
            "noft" => Ok(FeatureMode::Noft),
            "both" => Ok(FeatureMode::Both),
            other => Err(format!("unknown feature mode {other:?} (tfidf|noft|both)")),
        }
    }
}

/// NofT predicted by a frozen regressor for one prompt.
pub fn predict_noft(noft_model: &ForestModel, prompt: &str) -> Result<f64, ClassifyError> {
    Ok(noft_model.predict_text(prompt)?)
}

fn build_row(mode: FeatureMode, voc: Option<&Vocabulary>, prompt: &str, noft: Option<f64>) -> Result<SparseVector, ClassifyError> {
    let noft = if mode.uses_noft() {
        Some(noft.ok_or(ClassifyError::MissingNoft(mode))?)
    } else {
        None
    };
    Ok(match (voc, noft) {
        (Some(v), Some(n)) => vectorize::transform(v, prompt).extend_dense(&[n]),
        (Some(v), None) => vectorize::transform(v, prompt),
        (None, Some(n)) => SparseVector::from_dense(&[n]),
        (None, None) => return Err(ClassifyError::Config("classifier has no features".into())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CalibrationSection {
    task: LabelKind,
    features: FeatureMode,
    positive_class: Option<usize>,
    decision_threshold: f64,
    /// Per class for multiclass models; one map for the positive class otherwise.
    calibration: Vec<IsotonicMap>,
}

/// A forest classifier with isotonic-calibrated probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedClassifier {
    pub task: LabelKind,
    pub features: FeatureMode,
    pub base: ForestModel,
    pub calibration: Vec<IsotonicMap>,
    /// Set for two-class models; the class the threshold applies to.
    pub positive_class: Option<usize>,
    pub decision_threshold: f64,
}

/// One classified prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub class_index: usize,
    /// Calibrated, in `classes` order.
    pub probabilities: Vec<f64>,
    /// Calibrated probability of the positive class for two-class models.
    pub positive_score: Option<f64>,
}

impl CalibratedClassifier {
    pub fn classes(&self) -> &[String] {
        &self.base.classes
    }

    pub fn needs_noft(&self) -> bool {
        self.features.uses_noft()
    }

    pub fn featurize(&self, prompt: &str, noft: Option<f64>) -> Result<SparseVector, ClassifyError> {
        build_row(self.features, self.base.vocabulary.as_ref(), prompt, noft)
    }

    fn calibrate(&self, raw: &[f64]) -> Vec<f64> {
        match self.positive_class {
            Some(pos) => {
                let p = self.calibration[0].apply(raw[pos]);
                let mut out = vec![0.0; raw.len()];
                out[pos] = p;
                out[1 - pos] = 1.0 - p;
                out
            }
            None => {
                let cal: Vec<f64> = raw.iter().zip(&self.calibration).map(|(&r, m)| m.apply(r)).collect();
                let total: f64 = cal.iter().sum();
                if total > 0.0 {
                    cal.iter().map(|c| c / total).collect()
                } else {
                    raw.to_vec()
                }
            }
        }
    }

    /// Classifies a feature row. Two-class models predict the positive class
    /// when its calibrated probability reaches the threshold; others take the
    /// most probable class.
    pub fn predict_row(&self, x: &SparseVector) -> Result<Prediction, ClassifyError> {
        let probabilities = self.calibrate(&self.base.predict_proba(x)?);
        let (class_index, positive_score) = match self.positive_class {
            Some(pos) => {
                let p = probabilities[pos];
                (if p >= self.decision_threshold { pos } else { 1 - pos }, Some(p))
            }
            None => (forest::argmax(&probabilities), None),
        };
        Ok(Prediction {
            label: self.base.classes[class_index].clone(),
            class_index,
            probabilities,
            positive_score,
        })
    }

    /// `noft` is required when the model was trained with the NofT column.
    pub fn predict(&self, prompt: &str, noft: Option<f64>) -> Result<Prediction, ClassifyError> {
        self.predict_row(&self.featurize(prompt, noft)?)
    }

    fn section(&self) -> CalibrationSection {
        CalibrationSection {
            task: self.task,
            features: self.features,
            positive_class: self.positive_class,
            decision_threshold: self.decision_threshold,
            calibration: self.calibration.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let data = serde_json::to_vec(&self.section()).expect("calibration section serializes");
        forest::to_bytes(&self.base, &[Extension { tag: CALIBRATION_TAG, data }])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifyError> {
        let (base, ext) = forest::from_bytes(bytes)?;
        Self::assemble(base, &ext)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifyError> {
        let data = serde_json::to_vec(&self.section()).expect("calibration section serializes");
        Ok(forest::save_with_extensions(&self.base, &[Extension { tag: CALIBRATION_TAG, data }], path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifyError> {
        let (base, ext) = forest::load_with_extensions(path)?;
        Self::assemble(base, &ext)
    }

    fn assemble(base: ForestModel, ext: &[Extension]) -> Result<Self, ClassifyError> {
        let section = ext
            .iter()
            .find(|e| e.tag == CALIBRATION_TAG)
            .ok_or(ClassifyError::MissingCalibration)?;
        let s: CalibrationSection =
            serde_json::from_slice(&section.data).map_err(|e| ClassifyError::BadCalibration(e.to_string()))?;
        if base.kind != ModelKind::Classifier {
            return Err(ClassifyError::BadCalibration("base model is not a classifier".into()));
        }
        let expected = if s.positive_class.is_some() { 1 } else { base.classes.len() };
        if s.calibration.len() != expected
            || s.positive_class.is_some_and(|p| p > 1 || base.classes.len() != 2)
            || s.calibration.iter().any(|m| m.breakpoints.is_empty() || m.breakpoints.len() != m.values.len())
        {
            return Err(ClassifyError::BadCalibration("calibration does not fit the model's classes".into()));
        }
        if s.features.uses_tfidf() != base.vocabulary.is_some() {
            return Err(ClassifyError::BadCalibration("feature mode disagrees with the stored vocabulary".into()));
        }
        Ok(Self {
            task: s.task,
            features: s.features,
            base,
            calibration: s.calibration,
            positive_class: s.positive_class,
            decision_threshold: s.decision_threshold,
        })
    }
}

/// Settings for [`train_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub task: LabelKind,
    pub features: FeatureMode,
    pub tokenizer: TokenizerConfig,
    pub smote: SmoteConfig,
    /// Stratified share of the input held back for calibration.
    pub calibration_fraction: f64,
    pub search_space: SearchSpace,
    pub trials: usize,
    /// Share of the fitting fold used to score search trials.
    pub search_holdout: f64,
    pub threshold_policy: ThresholdPolicy,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(task: LabelKind) -> Self {
        let threshold = match task {
            LabelKind::Adversarial => ADVERSARIAL_THRESHOLD,
            LabelKind::Difficulty => 0.5,
        };
        Self {
            task,
            features: FeatureMode::Both,
            tokenizer: TokenizerConfig::default(),
            smote: SmoteConfig::default(),
            calibration_fraction: 0.2,
            search_space: SearchSpace::default(),
            trials: 8,
            search_holdout: 0.2,
            threshold_policy: ThresholdPolicy::Fixed { threshold },
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), ClassifyError> {
        for (name, f) in [("calibration_fraction", self.calibration_fraction), ("search_holdout", self.search_holdout)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(ClassifyError::Config(format!("{name} {f} outside (0, 1)")));
            }
        }
        if self.trials == 0 {
            return Err(ClassifyError::Config("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// What happened during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub classes: Vec<String>,
    pub n_fit: usize,
    pub n_calibration: usize,
    pub n_synthetic: usize,
    /// Neighbour count actually used by SMOTE.
    pub smote_k: usize,
    pub search: TrainReport,
    pub decision_threshold: f64,
    /// AUC of the positive class on the calibration fold, two-class only.
    pub calibration_auc_raw: Option<f64>,
    pub calibration_auc_calibrated: Option<f64>,
}

fn labels_of(ds: &Dataset, task: LabelKind) -> Result<Vec<String>, ClassifyError> {
    ds.iter()
        .map(|r| {
            r.label(task).ok_or_else(|| ClassifyError::MissingLabel {
                id: r.id.clone(),
                label: task.as_str(),
            })
        })
        .collect()
}

fn class_indices(labels: &[String], classes: &[String]) -> Result<Vec<usize>, ClassifyError> {
    labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| ClassifyError::UnknownClass(l.clone()))
        })
        .collect()
}

/// Stratified (train, validation) indices; classes with a single member stay in train.
fn stratified_holdout(labels: &[usize], n_classes: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let take = if members.len() < 2 {
            0
        } else {
            ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1)
        };
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn smote_k(labels: &[usize], n_classes: usize, k: usize) -> Result<usize, ClassifyError> {
    let counts: Vec<usize> = (0..n_classes).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    let majority = counts.iter().copied().max().unwrap_or(0);
    let smallest = counts.iter().copied().filter(|&n| n > 0 && n < majority).min();
    match smallest {
        None => Ok(k),
        Some(n) if n < 2 => Err(ClassifyError::MinorityTooSmall { class: counts.iter().position(|&c| c == n).unwrap(), size: n, k }),
        Some(n) => Ok(k.min(n - 1)),
    }
}

fn oversample(rows: &[SparseVector], labels: &[usize], k: usize, seed: u64) -> Result<(Vec<SparseVector>, Vec<usize>), ClassifyError> {
    let dense: Vec<Vec<f64>> = rows.iter().map(SparseVector::to_dense).collect();
    let out = smote_oversample(&dense, labels, &SmoteConfig { k_neighbors: k, seed })?;
    let mut x = rows.to_vec();
    x.extend(out.rows[out.n_original..].iter().map(|r| SparseVector::from_dense(r)));
    Ok((x, out.labels))
}

/// Trains a calibrated classifier for `cfg.task`.
///
/// The calibration fold is split off first and never sees SMOTE. Within the
/// remaining fold, search trials train on an oversampled part and are scored
/// on an untouched holdout; the chosen hyperparameters are then refit on the
/// oversampled fold.
pub fn train_pipeline(
    ds: &Dataset,
    cfg: &PipelineConfig,
    noft_model: Option<&ForestModel>,
) -> Result<(CalibratedClassifier, PipelineReport), ClassifyError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(ClassifyError::Empty("training set"));
    }
    if cfg.features.uses_noft() && noft_model.is_none() {
        return Err(ClassifyError::MissingNoft(cfg.features));
    }
    let (classes, _) = index_labels(&labels_of(ds, cfg.task)?);
    if classes.len() < 2 {
        return Err(ClassifyError::SingleClass);
    }
    let (fit_ds, cal_ds) = split(ds, &SplitSpec::new(1.0 - cfg.calibration_fraction, cfg.seed).stratified(cfg.task))?;
    if fit_ds.is_empty() || cal_ds.is_empty() {
        return Err(ClassifyError::Empty("fitting or calibration fold"));
    }

    let voc = if cfg.features.uses_tfidf() {
        Some(vectorize::fit(&fit_ds.prompts(), &cfg.tokenizer).map_err(|e| ClassifyError::Config(e.to_string()))?)
    } else {
        None
    };
    let rows = |d: &Dataset| -> Result<Vec<SparseVector>, ClassifyError> {
        d.iter()
            .map(|r| {
                let noft = noft_model.map(|m| predict_noft(m, &r.prompt)).transpose()?;
                build_row(cfg.features, voc.as_ref(), &r.prompt, noft)
            })
            .collect()
    };
    let x_fit = rows(&fit_ds)?;
    let y_fit = class_indices(&labels_of(&fit_ds, cfg.task)?, &classes)?;
    let x_cal = rows(&cal_ds)?;
    let y_cal = class_indices(&labels_of(&cal_ds, cfg.task)?, &classes)?;
    if y_fit.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
        return Err(ClassifyError::SingleClass);
    }

    let (tr, va) = stratified_holdout(&y_fit, classes.len(), cfg.search_holdout, cfg.seed ^ 0x5EA2C4);
    if va.is_empty() {
        return Err(ClassifyError::Empty("search holdout"));
    }
    let pick = |idx: &[usize]| -> (Vec<SparseVector>, Vec<usize>) {
        (idx.iter().map(|&i| x_fit[i].clone()).collect(), idx.iter().map(|&i| y_fit[i]).collect())
    };
    let (x_tr, y_tr) = pick(&tr);
    let (x_va, y_va) = pick(&va);
    let k_search = smote_k(&y_tr, classes.len(), cfg.smote.k_neighbors)?;
    let (x_tr, y_tr) = oversample(&x_tr, &y_tr, k_search, cfg.smote.seed)?;
    let validation = ValidationSpec::Explicit {
        x: &x_va,
        target: Target::Classification {
            labels: &y_va,
            classes: &classes,
        },
    };
    let (best, search) = random_search(
        &x_tr,
        Target::Classification {
            labels: &y_tr,
            classes: &classes,
        },
        &cfg.search_space,
        cfg.trials,
        cfg.seed,
        &validation,
    )?;

    let k = smote_k(&y_fit, classes.len(), cfg.smote.k_neighbors)?;
    let (x_all, y_all) = oversample(&x_fit, &y_fit, k, cfg.smote.seed)?;
    let n_synthetic = x_all.len() - x_fit.len();
    let mut base = forest::fit(
        &x_all,
        Target::Classification {
            labels: &y_all,
            classes: &classes,
        },
        &best,
        cfg.seed,
    )?;
    if let Some(v) = voc {
        base = base.with_vocabulary(v);
    }
    if cfg.features.uses_noft() {
        base = base.with_extra_features(vec![NOFT_FEATURE.to_string()]);
    }

    let raw: Vec<Vec<f64>> = x_cal.iter().map(|x| base.predict_proba(x)).collect::<Result<_, _>>()?;
    let positive_class = (classes.len() == 2).then(|| {
        let named = match cfg.task {
            LabelKind::Adversarial => classes.iter().position(|c| c == "adversarial"),
            LabelKind::Difficulty => None,
        };
        named.unwrap_or(1)
    });
    let fit_map = |c: usize| -> Result<IsotonicMap, ClassifyError> {
        let s: Vec<f64> = raw.iter().map(|p| p[c]).collect();
        let o: Vec<f64> = y_cal.iter().map(|&y| f64::from(u8::from(y == c))).collect();
        if s.len() < 2 {
            // A one-row calibration fold cannot be fit; keep the raw scores.
            return Ok(IsotonicMap {
                breakpoints: vec![0.0, 1.0],
                values: vec![0.0, 1.0],
            });
        }
        fit_isotonic(&s, &o)
    };
    let calibration = match positive_class {
        Some(pos) => vec![fit_map(pos)?],
        None => (0..classes.len()).map(fit_map).collect::<Result<_, _>>()?,
    };
    let mut clf = CalibratedClassifier {
        task: cfg.task,
        features: cfg.features,
        base,
        calibration,
        positive_class,
        decision_threshold: match cfg.threshold_policy {
            ThresholdPolicy::Fixed { threshold } => threshold,
            _ => 0.5,
        },
    };

    let (mut auc_raw, mut auc_cal) = (None, None);
    if let Some(pos) = positive_class {
        let outcomes: Vec<bool> = y_cal.iter().map(|&y| y == pos).collect();
        let raw_pos: Vec<f64> = raw.iter().map(|p| p[pos]).collect();
        let cal_pos: Vec<f64> = raw_pos.iter().map(|&r| clf.calibration[0].apply(r)).collect();
        match roc_curve(&cal_pos, &outcomes) {
            Ok(curve) => {
                clf.decision_threshold = select_threshold(&curve, cfg.threshold_policy)?;
                auc_cal = Some(auc(&curve));
                auc_raw = Some(auc(&roc_curve(&raw_pos, &outcomes)?));
            }
            Err(ClassifyError::SingleClass) if matches!(cfg.threshold_policy, ThresholdPolicy::Fixed { .. }) => {}
            Err(e) => return Err(e),
        }
    } else if !matches!(cfg.threshold_policy, ThresholdPolicy::Fixed { .. }) {
        return Err(ClassifyError::Config("ROC threshold policies need a two-class task".into()));
    }

    let report = PipelineReport {
        classes,
        n_fit: x_fit.len(),
        n_calibration: x_cal.len(),
        n_synthetic,
        smote_k: k,
        search,
        decision_threshold: clf.decision_threshold,
        calibration_auc_raw: auc_raw,
        calibration_auc_calibrated: auc_cal,
    };
    Ok((clf, report))
}

/// Scores `clf` on a labelled dataset.
pub fn evaluate(
    clf: &CalibratedClassifier,
    ds: &Dataset,
    noft_model: Option<&ForestModel>,
) -> Result<ClassificationReport, ClassifyError> {
    if ds.is_empty() {
        return Err(ClassifyError::Empty("evaluation set"));
    }
    if clf.needs_noft() && noft_model.is_none() {
        return Err(ClassifyError::MissingNoft(clf.features));
    }
    let truth = class_indices(&labels_of(ds, clf.task)?, clf.classes())?;
    let pred: Vec<usize> = ds
        .iter()
        .map(|r| {
            let noft = noft_model.map(|m| predict_noft(m, &r.prompt)).transpose()?;
            Ok(clf.predict(&r.prompt, noft)?.class_index)
        })
        .collect::<Result<_, ClassifyError>>()?;
    ClassificationReport::from_predictions(&truth, &pred, clf.classes())
}
