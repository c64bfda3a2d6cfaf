use serde::{Deserialize, Serialize};

use super::ClassifyError;

/// Monotone piecewise-linear map from raw scores to probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    /// Distinct scores in increasing order.
    pub breakpoints: Vec<f64>,
    /// Fitted value at each breakpoint; nondecreasing.
    pub values: Vec<f64>,
}

impl IsotonicMap {
    /// Linear interpolation between breakpoints, clamped outside them.
    pub fn apply(&self, x: f64) -> f64 {
        let (b, v) = (&self.breakpoints, &self.values);
        if x <= b[0] {
            return v[0];
        }
        if x >= b[b.len() - 1] {
            return v[v.len() - 1];
        }
        let i = b.partition_point(|&p| p <= x);
        let (x0, x1, y0, y1) = (b[i - 1], b[i], v[i - 1], v[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Least-squares nondecreasing fit by pool-adjacent-violators.
///
/// Equal scores are merged first, so the map is a function of the score.
pub fn fit_isotonic(scores: &[f64], outcomes: &[f64]) -> Result<IsotonicMap, ClassifyError> {
    if scores.len() != outcomes.len() {
        return Err(ClassifyError::LengthMismatch(scores.len(), outcomes.len()));
    }
    if scores.len() < 2 {
        return Err(ClassifyError::Empty("isotonic fit needs at least two points"));
    }
    if scores.iter().chain(outcomes).any(|v| !v.is_finite()) {
        return Err(ClassifyError::Config("non-finite calibration input".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // (score, weighted sum, weight) per distinct score.
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for i in order {
        match points.last_mut() {
            Some(last) if last.0 == scores[i] => {
                last.1 += outcomes[i];
                last.2 += 1.0;
            }
            _ => points.push((scores[i], outcomes[i], 1.0)),
        }
    }

    // Blocks of (sum, weight, count of points).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(points.len());
    for &(_, s, w) in &points {
        blocks.push((s, w, 1));
        while blocks.len() > 1 {
            let (s2, w2, c2) = blocks[blocks.len() - 1];
            let (s1, w1, c1) = blocks[blocks.len() - 2];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s1 + s2, w1 + w2, c1 + c2);
        }
    }
    let mut values = Vec::with_capacity(points.len());
    for (s, w, c) in blocks {
        values.extend(std::iter::repeat_n(s / w, c));
    }
    Ok(IsotonicMap {
        breakpoints: points.iter().map(|p| p.0).collect(),
        values,
    })
}
