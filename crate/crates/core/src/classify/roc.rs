use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ClassifyError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. The first point uses `+inf`.
    pub threshold: f64,
}

/// ROC sweep over the distinct scores, from the strictest threshold down.
pub fn roc_curve(scores: &[f64], outcomes: &[bool]) -> Result<Vec<RocPoint>, ClassifyError> {
    if scores.len() != outcomes.len() {
        return Err(ClassifyError::LengthMismatch(scores.len(), outcomes.len()));
    }
    let pos = outcomes.iter().filter(|&&o| o).count();
    let neg = outcomes.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(ClassifyError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if outcomes[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_score {
            curve.push(RocPoint {
                fpr: fp as f64 / neg as f64,
                tpr: tp as f64 / pos as f64,
                threshold: scores[i],
            });
        }
    }
    Ok(curve)
}

/// Trapezoidal area under a curve from [`roc_curve`].
pub fn auc(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// How the decision threshold on the positive-class probability is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed { threshold: f64 },
    /// Lowest false-positive rate among points with `tpr >= min_tpr`.
    MinFprAtTpr { min_tpr: f64 },
    /// Maximises `tpr - fpr`.
    Youden,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Fixed { threshold: 0.5 }
    }
}

impl FromStr for ThresholdPolicy {
    type Err = String;

    /// Accepts `fixed:<t>`, `min-fpr-at-tpr:<tpr>` and `youden`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        let num = |what: &str| -> Result<f64, String> {
            let v: f64 = arg
                .ok_or_else(|| format!("{name} needs a value, e.g. {name}:{what}"))?
                .parse()
                .map_err(|e| format!("bad {name} value: {e}"))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(format!("{name} value {v} outside [0, 1]"))
            }
        };
        match name {
            "fixed" => Ok(ThresholdPolicy::Fixed { threshold: num("0.9")? }),
            "min-fpr-at-tpr" => Ok(ThresholdPolicy::MinFprAtTpr { min_tpr: num("0.95")? }),
            "youden" if arg.is_none() => Ok(ThresholdPolicy::Youden),
            _ => Err(format!("unknown threshold policy {s:?}")),
        }
    }
}

/// Picks a threshold; data-driven ties go to the higher threshold.
pub fn select_threshold(curve: &[RocPoint], policy: ThresholdPolicy) -> Result<f64, ClassifyError> {
    let finite = || curve.iter().filter(|p| p.threshold.is_finite());
    let best = match policy {
        ThresholdPolicy::Fixed { threshold } => return Ok(threshold),
        ThresholdPolicy::Youden => finite().fold(None::<&RocPoint>, |best, p| match best {
            Some(b) if b.tpr - b.fpr >= p.tpr - p.fpr => Some(b),
            _ => Some(p),
        }),
        ThresholdPolicy::MinFprAtTpr { min_tpr } => {
            finite().filter(|p| p.tpr >= min_tpr).fold(None::<&RocPoint>, |best, p| match best {
                Some(b) if b.fpr <= p.fpr => Some(b),
                _ => Some(p),
            })
        }
    };
    best.map(|p| p.threshold)
        .ok_or_else(|| ClassifyError::Config(format!("no ROC point satisfies {policy:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_separation() {
        let c = roc_curve(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(auc(&c), 1.0);
        assert_eq!(select_threshold(&c, ThresholdPolicy::Youden).unwrap(), 0.8);
        assert_eq!(select_threshold(&c, ThresholdPolicy::MinFprAtTpr { min_tpr: 1.0 }).unwrap(), 0.8);
    }

    #[test]
    fn ties_form_one_step() {
        let c = roc_curve(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(auc(&c), 0.5);
    }

    #[test]
    fn random_scores_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut outcomes: Vec<bool> = (0..20_000).map(|i| i % 2 == 0).collect();
        outcomes.shuffle(&mut rng);
        let scores: Vec<f64> = (0..outcomes.len()).map(|_| rng.random()).collect();
        let a = auc(&roc_curve(&scores, &outcomes).unwrap());
        assert!((a - 0.5).abs() < 0.05, "{a}");
    }

    #[test]
    fn fixed_policy_and_parsing() {
        let p: ThresholdPolicy = "fixed:0.90".parse().unwrap();
        assert_eq!(select_threshold(&[], p).unwrap(), 0.9);
        assert_eq!("youden".parse::<ThresholdPolicy>().unwrap(), ThresholdPolicy::Youden);
        assert!("fixed".parse::<ThresholdPolicy>().is_err());
        assert!("fixed:2".parse::<ThresholdPolicy>().is_err());
    }

    #[test]
    fn one_class_is_an_error() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &[true, true]), Err(ClassifyError::SingleClass)));
    }
}
