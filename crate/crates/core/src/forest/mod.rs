//! Random forests grown from scratch on sparse rows.
//!
//! Regression forests minimise squared error and predict the plain mean of
//! their trees. Classification forests split on Gini impurity and average the
//! leaf class frequencies. Trees are grown in parallel from per-tree seeds
//! (`seed + tree_index`), so results do not depend on scheduling.

mod io;
mod search;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::vectorize::{SparseVector, Vocabulary};

pub use io::{from_bytes, load, load_with_extensions, save, save_with_extensions, to_bytes, Extension, FORMAT_VERSION};
pub use search::{
    macro_f1, random_search, MetricKind, SearchSpace, TrainReport, TrialResult, ValidationSpec,
};
pub use tree::{Node, Tree};

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyInput,
    #[error("{rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("classifier needs at least two classes, found {0}")]
    SingleClass(usize),
    #[error("label index {0} has no class name")]
    UnknownLabel(usize),
    #[error("operation needs a {expected} but the model is a {actual}")]
    KindMismatch { expected: ModelKind, actual: ModelKind },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("search space has no values for {0}")]
    EmptySpace(&'static str),
    #[error("validation split left no rows for {0}")]
    EmptyValidation(&'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u16),
    #[error("model file is truncated")]
    Truncated,
    #[error("model file checksum mismatch")]
    Checksum,
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model has no vocabulary, so it cannot featurize text")]
    MissingVocabulary,
    #[error("model expects {expected} extra feature columns, got {got}")]
    ExtraFeatures { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Regressor,
    Classifier,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Regressor => "regressor",
            ModelKind::Classifier => "classifier",
        })
    }
}

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureRule {
    /// `sqrt(dim)` for classifiers, `dim / 3` for regressors.
    Auto,
    Sqrt,
    All,
    Fraction(f64),
}

impl FeatureRule {
    pub fn resolve(self, dim: usize, kind: ModelKind) -> usize {
        let d = dim as f64;
        let m = match self {
            FeatureRule::Auto => match kind {
                ModelKind::Classifier => d.sqrt().round(),
                ModelKind::Regressor => (d / 3.0).floor(),
            },
            FeatureRule::Sqrt => d.sqrt().round(),
            FeatureRule::All => d,
            FeatureRule::Fraction(f) => (d * f).round(),
        };
        (m as usize).clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_trees: usize,
    /// `Some(0)` grows single-leaf trees.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub features_per_split: FeatureRule,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            features_per_split: FeatureRule::Auto,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidHyperParams("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidHyperParams(
                "min_samples_split must be at least 2".into(),
            ));
        }
        if let FeatureRule::Fraction(f) = self.features_per_split {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ForestError::InvalidHyperParams(format!(
                    "feature fraction {f} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Training targets.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Regression(&'a [f64]),
    /// Class indices into `classes`.
    Classification { labels: &'a [usize], classes: &'a [String] },
}

impl Target<'_> {
    fn len(&self) -> usize {
        match self {
            Target::Regression(y) => y.len(),
            Target::Classification { labels, .. } => labels.len(),
        }
    }

    fn kind(&self) -> ModelKind {
        match self {
            Target::Regression(_) => ModelKind::Regressor,
            Target::Classification { .. } => ModelKind::Classifier,
        }
    }
}

/// A trained ensemble plus the metadata needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub kind: ModelKind,
    pub trees: Vec<Tree>,
    /// Class names in index order; empty for regressors.
    pub classes: Vec<String>,
    pub hyperparams: HyperParams,
    pub train_seed: u64,
    pub n_features: usize,
    /// Vocabulary producing the first `vocabulary.len()` columns.
    pub vocabulary: Option<Vocabulary>,
    /// Names of dense columns appended after the vocabulary columns.
    pub extra_features: Vec<String>,
}

impl ForestModel {
    pub fn with_vocabulary(mut self, voc: Vocabulary) -> Self {
        self.vocabulary = Some(voc);
        self
    }

    pub fn with_extra_features(mut self, names: Vec<String>) -> Self {
        self.extra_features = names;
        self
    }

    /// Builds an input row from raw text plus the dense extra columns, using
    /// the stored vocabulary.
    pub fn featurize(&self, text: &str, extras: &[f64]) -> Result<SparseVector, ForestError> {
        let voc = self.vocabulary.as_ref().ok_or(ForestError::MissingVocabulary)?;
        if extras.len() != self.extra_features.len() {
            return Err(ForestError::ExtraFeatures {
                expected: self.extra_features.len(),
                got: extras.len(),
            });
        }
        let row = crate::vectorize::transform(voc, text);
        Ok(if extras.is_empty() { row } else { row.extend_dense(extras) })
    }

    /// Regression prediction for a text-only model.
    pub fn predict_text(&self, text: &str) -> Result<f64, ForestError> {
        self.predict_regression(&self.featurize(text, &[])?)
    }

    fn check(&self, kind: ModelKind, x: &SparseVector) -> Result<(), ForestError> {
        if self.kind != kind {
            return Err(ForestError::KindMismatch {
                expected: kind,
                actual: self.kind,
            });
        }
        if x.dim() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Mean of the per-tree predictions.
    pub fn predict_regression(&self, x: &SparseVector) -> Result<f64, ForestError> {
        self.check(ModelKind::Regressor, x)?;
        let total: f64 = self.trees.iter().map(|t| t.predict(x)[0]).sum();
        Ok(total / self.trees.len() as f64)
    }

    /// Mean of the per-tree leaf class frequencies, in `classes` order.
    pub fn predict_proba(&self, x: &SparseVector) -> Result<Vec<f64>, ForestError> {
        self.check(ModelKind::Classifier, x)?;
        let mut acc = vec![0.0; self.classes.len()];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.predict(x)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Index of the most probable class (lowest index on ties).
    pub fn predict_class(&self, x: &SparseVector) -> Result<usize, ForestError> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

fn check_rows(x: &[SparseVector], n_targets: usize) -> Result<usize, ForestError> {
    if x.is_empty() {
        return Err(ForestError::EmptyInput);
    }
    if x.len() != n_targets {
        return Err(ForestError::LengthMismatch {
            rows: x.len(),
            targets: n_targets,
        });
    }
    let dim = x[0].dim();
    if let Some(bad) = x.iter().find(|r| r.dim() != dim) {
        return Err(ForestError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    Ok(dim)
}

/// Fits a forest for either target kind.
pub fn fit(
    x: &[SparseVector],
    target: Target<'_>,
    hp: &HyperParams,
    seed: u64,
) -> Result<ForestModel, ForestError> {
    hp.validate()?;
    let dim = check_rows(x, target.len())?;
    let classes = match target {
        Target::Regression(_) => Vec::new(),
        Target::Classification { labels, classes } => {
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
                return Err(ForestError::UnknownLabel(bad));
            }
            let mut present: Vec<usize> = labels.to_vec();
            present.sort_unstable();
            present.dedup();
            if present.len() < 2 {
                return Err(ForestError::SingleClass(present.len()));
            }
            classes.to_vec()
        }
    };
    let kind = target.kind();
    let columns = tree::Columns::build(x, dim);
    let mtry = hp.features_per_split.resolve(dim, kind);
    let n = x.len();
    let trees: Vec<Tree> = (0..hp.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let weights = if hp.bootstrap {
                tree::bootstrap_weights(n, &mut rng)
            } else {
                vec![1.0; n]
            };
            tree::grow(x, &columns, target, &weights, hp, mtry, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        kind,
        trees,
        classes,
        hyperparams: hp.clone(),
        train_seed: seed,
        n_features: dim,
        vocabulary: None,
        extra_features: Vec::new(),
    })
}

pub fn fit_regressor(
    x: &[SparseVector],
    y: &[f64],
    hp: &HyperParams,
    seed: u64,
) -> Result<ForestModel, ForestError> {
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(ForestError::InvalidHyperParams(format!("non-finite target {bad}")));
    }
    fit(x, Target::Regression(y), hp, seed)
}

/// Fits a classifier on string labels; classes are sorted lexicographically.
pub fn fit_classifier<S: AsRef<str>>(
    x: &[SparseVector],
    labels: &[S],
    hp: &HyperParams,
    seed: u64,
) -> Result<ForestModel, ForestError> {
    let (classes, idx) = index_labels(labels);
    fit(
        x,
        Target::Classification {
            labels: &idx,
            classes: &classes,
        },
        hp,
        seed,
    )
}

/// Sorted distinct class names and each label's index among them.
pub fn index_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<String>, Vec<usize>) {
    let mut classes: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
    classes.sort();
    classes.dedup();
    let idx = labels
        .iter()
        .map(|l| classes.binary_search_by(|c| c.as_str().cmp(l.as_ref())).unwrap())
        .collect();
    (classes, idx)
}

/// Mean squared error of a regressor over `(x, y)`.
pub fn mse(model: &ForestModel, x: &[SparseVector], y: &[f64]) -> Result<f64, ForestError> {
    check_rows(x, y.len())?;
    let mut total = 0.0;
    for (row, &target) in x.iter().zip(y) {
        let e = target - model.predict_regression(row)?;
        total += e * e;
    }
    Ok(total / y.len() as f64)
}
