//! Random hyperparameter search over discrete choice lists.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit, mse, FeatureRule, ForestError, HyperParams, ModelKind, Target};
use crate::vectorize::SparseVector;

/// Candidate values for each hyperparameter. Trials pick one value per list
/// uniformly at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub bootstrap: Vec<bool>,
    pub features_per_split: Vec<FeatureRule>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_trees: vec![50, 100, 200],
            max_depth: vec![None, Some(8), Some(16), Some(32)],
            min_samples_split: vec![2, 5, 10],
            bootstrap: vec![true, false],
            features_per_split: vec![FeatureRule::Auto, FeatureRule::Sqrt, FeatureRule::Fraction(0.5)],
        }
    }
}

impl SearchSpace {
    fn check(&self) -> Result<(), ForestError> {
        let empty = [
            ("n_trees", self.n_trees.is_empty()),
            ("max_depth", self.max_depth.is_empty()),
            ("min_samples_split", self.min_samples_split.is_empty()),
            ("bootstrap", self.bootstrap.is_empty()),
            ("features_per_split", self.features_per_split.is_empty()),
        ];
        match empty.iter().find(|(_, e)| *e) {
            Some((name, _)) => Err(ForestError::EmptySpace(name)),
            None => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> HyperParams {
        HyperParams {
            n_trees: *self.n_trees.choose(rng).unwrap(),
            max_depth: *self.max_depth.choose(rng).unwrap(),
            min_samples_split: *self.min_samples_split.choose(rng).unwrap(),
            bootstrap: *self.bootstrap.choose(rng).unwrap(),
            features_per_split: *self.features_per_split.choose(rng).unwrap(),
        }
    }
}

/// Where trial models are scored.
#[derive(Debug, Clone)]
pub enum ValidationSpec<'a> {
    /// Hold out `fraction` of the rows (stratified by class for classifiers).
    Holdout { fraction: f64, seed: u64 },
    Explicit {
        x: &'a [SparseVector],
        target: Target<'a>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Lower is better.
    Mse,
    /// Higher is better.
    MacroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub params: HyperParams,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metric: MetricKind,
    pub best_trial: usize,
    pub best_metric: f64,
    /// Validation MSE of the best regressor.
    pub mse: Option<f64>,
    pub trials: Vec<TrialResult>,
}

/// Macro-averaged F1 over `n_classes`; classes with no support and no
/// predictions contribute 0.
pub fn macro_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let f1: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    f1 / n_classes as f64
}

fn holdout_indices(target: &Target<'_>, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = target.len();
    let groups: Vec<Vec<usize>> = match target {
        Target::Regression(_) => vec![(0..n).collect()],
        Target::Classification { labels, classes } => (0..classes.len())
            .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut g in groups {
        g.shuffle(&mut rng);
        let k = ((g.len() as f64) * fraction).round() as usize;
        let k = k.min(g.len().saturating_sub(1));
        val.extend_from_slice(&g[..k]);
        train.extend_from_slice(&g[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn subset_target<'a>(
    target: &Target<'a>,
    idx: &[usize],
    y_buf: &'a mut Vec<f64>,
    l_buf: &'a mut Vec<usize>,
) -> Target<'a> {
    match *target {
        Target::Regression(y) => {
            *y_buf = idx.iter().map(|&i| y[i]).collect();
            Target::Regression(y_buf)
        }
        Target::Classification { labels, classes } => {
            *l_buf = idx.iter().map(|&i| labels[i]).collect();
            Target::Classification {
                labels: l_buf,
                classes,
            }
        }
    }
}

/// Evaluates `trials` random configurations and returns the best one.
/// Ties keep the earlier trial.
pub fn random_search(
    x: &[SparseVector],
    target: Target<'_>,
    space: &SearchSpace,
    trials: usize,
    seed: u64,
    validation: &ValidationSpec<'_>,
) -> Result<(HyperParams, TrainReport), ForestError> {
    space.check()?;
    if trials == 0 {
        return Err(ForestError::InvalidHyperParams("trials must be at least 1".into()));
    }
    if x.len() != target.len() {
        return Err(ForestError::LengthMismatch {
            rows: x.len(),
            targets: target.len(),
        });
    }

    let (mut y_tr, mut l_tr, mut y_va, mut l_va) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (x_train, t_train, x_val, t_val): (Vec<SparseVector>, Target<'_>, Vec<SparseVector>, Target<'_>) =
        match validation {
            ValidationSpec::Holdout { fraction, seed } => {
                let (tr, va) = holdout_indices(&target, *fraction, *seed);
                if va.is_empty() {
                    return Err(ForestError::EmptyValidation("holdout"));
                }
                (
                    tr.iter().map(|&i| x[i].clone()).collect(),
                    subset_target(&target, &tr, &mut y_tr, &mut l_tr),
                    va.iter().map(|&i| x[i].clone()).collect(),
                    subset_target(&target, &va, &mut y_va, &mut l_va),
                )
            }
            ValidationSpec::Explicit { x: xv, target: tv } => {
                if xv.is_empty() {
                    return Err(ForestError::EmptyValidation("explicit"));
                }
                (x.to_vec(), target, xv.to_vec(), *tv)
            }
        };

    let metric = match target.kind() {
        ModelKind::Regressor => MetricKind::Mse,
        ModelKind::Classifier => MetricKind::MacroF1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results: Vec<TrialResult> = Vec::with_capacity(trials);
    let mut best: Option<usize> = None;
    for index in 0..trials {
        let params = space.sample(&mut rng);
        let model = fit(&x_train, t_train, &params, seed.wrapping_add(index as u64 * 7919))?;
        let value = match t_val {
            Target::Regression(y) => mse(&model, &x_val, y)?,
            Target::Classification { labels, classes } => {
                let pred = x_val
                    .iter()
                    .map(|r| model.predict_class(r))
                    .collect::<Result<Vec<_>, _>>()?;
                macro_f1(labels, &pred, classes.len())
            }
        };
        log::debug!("trial {index}: {params:?} -> {value}");
        let improves = best.is_none_or(|b| match metric {
            MetricKind::Mse => value < results[b].metric,
            MetricKind::MacroF1 => value > results[b].metric,
        });
        if improves {
            best = Some(index);
        }
        results.push(TrialResult {
            index,
            params,
            metric: value,
        });
    }
    let b = best.expect("at least one trial");
    let report = TrainReport {
        metric,
        best_trial: b,
        best_metric: results[b].metric,
        mse: (metric == MetricKind::Mse).then_some(results[b].metric),
        trials: results,
    };
    Ok((report.trials[b].params.clone(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn data(seed: u64) -> (Vec<SparseVector>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<SparseVector> = (0..80)
            .map(|_| SparseVector::from_dense(&[rng.random_range(0.0..4.0), rng.random_range(0.0..1.0)]))
            .collect();
        let y = x.iter().map(|r| r.get(0).floor() * 3.0 + rng.random_range(0.0..0.5)).collect();
        (x, y)
    }

    #[test]
    fn single_point_space_returns_it() {
        let (x, y) = data(1);
        let space = SearchSpace {
            n_trees: vec![7],
            max_depth: vec![Some(3)],
            min_samples_split: vec![4],
            bootstrap: vec![false],
            features_per_split: vec![FeatureRule::All],
        };
        let v = ValidationSpec::Holdout { fraction: 0.25, seed: 3 };
        let (hp, report) = random_search(&x, Target::Regression(&y), &space, 3, 5, &v).unwrap();
        assert_eq!(hp, HyperParams {
            n_trees: 7,
            max_depth: Some(3),
            min_samples_split: 4,
            bootstrap: false,
            features_per_split: FeatureRule::All
        });
        assert_eq!(report.trials.len(), 3);
        // Identical configs differ only in seed; bootstrap is off and all
        // features are tried, so every trial scores the same and trial 0 wins.
        assert_eq!(report.best_trial, 0);
    }

    #[test]
    fn best_beats_median_and_is_replayable() {
        let (x, y) = data(2);
        let v = ValidationSpec::Holdout { fraction: 0.25, seed: 4 };
        let space = SearchSpace {
            n_trees: vec![5, 10],
            ..Default::default()
        };
        let (_, a) = random_search(&x, Target::Regression(&y), &space, 20, 9, &v).unwrap();
        let (_, b) = random_search(&x, Target::Regression(&y), &space, 20, 9, &v).unwrap();
        assert_eq!(a, b);
        let mut m: Vec<f64> = a.trials.iter().map(|t| t.metric).collect();
        m.sort_by(f64::total_cmp);
        assert!(a.best_metric <= m[m.len() / 2]);
        assert_eq!(a.mse, Some(a.best_metric));
    }

    #[test]
    fn empty_space_is_rejected() {
        let (x, y) = data(3);
        let space = SearchSpace {
            bootstrap: vec![],
            ..Default::default()
        };
        let v = ValidationSpec::Holdout { fraction: 0.2, seed: 0 };
        assert!(matches!(
            random_search(&x, Target::Regression(&y), &space, 2, 0, &v),
            Err(ForestError::EmptySpace("bootstrap"))
        ));
    }

    #[test]
    fn macro_f1_matches_hand_values() {
        // class 0: tp 1, fp 1, fn 1 -> 0.5; class 1: tp 1, fp 1, fn 1 -> 0.5
        assert_eq!(macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2), 0.5);
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
    }

    #[test]
    fn space_parses_from_json() {
        let s: SearchSpace = serde_json::from_str(
            r#"{"n_trees":[10],"max_depth":[null,4],"min_samples_split":[2],
                "bootstrap":[true],"features_per_split":["auto",{"fraction":0.3}]}"#,
        )
        .unwrap();
        assert_eq!(s.features_per_split, [FeatureRule::Auto, FeatureRule::Fraction(0.3)]);
    }
}
