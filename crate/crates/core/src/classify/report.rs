use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ClassifyError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n: usize,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ClassificationReport {
    /// Metrics from class indices into `classes`. Undefined ratios are 0.
    pub fn from_predictions(truth: &[usize], pred: &[usize], classes: &[String]) -> Result<Self, ClassifyError> {
        if truth.len() != pred.len() {
            return Err(ClassifyError::LengthMismatch(truth.len(), pred.len()));
        }
        if truth.is_empty() {
            return Err(ClassifyError::Empty("evaluation set"));
        }
        let k = classes.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k || p >= k {
                return Err(ClassifyError::Config(format!("class index {} out of range", t.max(p))));
            }
            confusion[t][p] += 1;
        }
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
                let support: usize = confusion[c].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    class: classes[c].clone(),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        Ok(Self {
            macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64,
            accuracy: ratio(correct, truth.len()),
            n: truth.len(),
            per_class,
            confusion,
        })
    }

    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == name)
    }

    /// Precision / Recall / F1-Score / Support table with accuracy and
    /// macro and weighted averages underneath.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14}{:>10}{:>10}{:>10}{:>10}", "", "Precision", "Recall", "F1-Score", "Support");
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}",
                m.class, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(s, "{:<14}{:>10}{:>10}{:>10.2}{:>10}", "accuracy", "", "", self.accuracy, self.n);
        let k = self.per_class.len() as f64;
        let n = self.n as f64;
        let avg = |f: fn(&ClassMetrics) -> f64| self.per_class.iter().map(f).sum::<f64>() / k;
        let wavg = |f: fn(&ClassMetrics) -> f64| self.per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}",
            "macro avg",
            avg(|m| m.precision),
            avg(|m| m.recall),
            avg(|m| m.f1),
            self.n
        );
        let _ = writeln!(
            s,
            "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}",
            "weighted avg",
            wavg(|m| m.precision),
            wavg(|m| m.recall),
            wavg(|m| m.f1),
            self.n
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::macro_f1;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 1, 0];
        let r = ClassificationReport::from_predictions(&t, &t, &names(3)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
    }

    #[test]
    fn confusion_counts_example() {
        // Class 1: TP=3, FP=1, FN=2.
        let truth = [1, 1, 1, 1, 1, 0, 0];
        let pred = [1, 1, 1, 0, 0, 1, 0];
        let r = ClassificationReport::from_predictions(&truth, &pred, &names(2)).unwrap();
        let m = &r.per_class[1];
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-12);
        assert_eq!(r.per_class.iter().map(|m| m.support).sum::<usize>(), 7);
        let table = r.render();
        for col in ["Precision", "Recall", "F1-Score", "Support"] {
            assert!(table.contains(col));
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(ClassificationReport::from_predictions(&[], &[], &names(2)).is_err());
    }

    proptest! {
        #[test]
        fn macro_f1_matches_forest_helper(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..80)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let r = ClassificationReport::from_predictions(&t, &p, &names(4)).unwrap();
            prop_assert!((r.macro_f1 - macro_f1(&t, &p, 4)).abs() < 1e-12);
            for m in &r.per_class {
                prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
            }
        }
    }
}
