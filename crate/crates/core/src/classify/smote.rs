use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClassifyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k_neighbors: 5, seed: 0 }
    }
}

/// Original rows followed by the synthetic ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Rows before this index are the untouched inputs.
    pub n_original: usize,
}

impl SmoteOutput {
    pub fn synthetic(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.rows[self.n_original..]
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels[self.n_original..].iter().copied())
    }
}

/// `p + lambda * (q - p)`.
pub fn interpolate(p: &[f64], q: &[f64], lambda: f64) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| a + lambda * (b - a)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices (into `members`) of the `k` nearest other members of each member.
/// Distance ties go to the lower index.
fn neighbours(rows: &[Vec<f64>], members: &[usize], k: usize) -> Vec<Vec<usize>> {
    members
        .par_iter()
        .enumerate()
        .map(|(a, &ra)| {
            let mut d: Vec<(f64, usize)> = members
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(b, &rb)| (sq_dist(&rows[ra], &rows[rb]), b))
                .collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            d.into_iter().take(k).map(|(_, b)| b).collect()
        })
        .collect()
}

/// Oversamples every class up to the majority count.
///
/// Each synthetic row interpolates a random member of its class towards one
/// of that member's `k` nearest same-class neighbours. Classes are processed
/// in index order so the output is a pure function of the inputs and seed.
pub fn smote_oversample(rows: &[Vec<f64>], labels: &[usize], cfg: &SmoteConfig) -> Result<SmoteOutput, ClassifyError> {
    if rows.len() != labels.len() {
        return Err(ClassifyError::LengthMismatch(rows.len(), labels.len()));
    }
    if rows.is_empty() {
        return Err(ClassifyError::Empty("SMOTE input"));
    }
    if cfg.k_neighbors == 0 {
        return Err(ClassifyError::Config("k_neighbors must be at least 1".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let majority = members.iter().map(Vec::len).max().unwrap_or(0);
    for (c, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < majority && m.len() <= cfg.k_neighbors {
            return Err(ClassifyError::MinorityTooSmall {
                class: c,
                size: m.len(),
                k: cfg.k_neighbors,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out_rows = rows.to_vec();
    let mut out_labels = labels.to_vec();
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() || m.len() == majority {
            continue;
        }
        let nn = neighbours(rows, m, cfg.k_neighbors);
        for _ in 0..majority - m.len() {
            let a = rng.random_range(0..m.len());
            let b = nn[a][rng.random_range(0..nn[a].len())];
            let lambda: f64 = rng.random();
            out_rows.push(interpolate(&rows[m[a]], &rows[m[b]], lambda));
            out_labels.push(c);
        }
    }
    Ok(SmoteOutput {
        rows: out_rows,
        labels: out_labels,
        n_original: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint() {
        assert_eq!(interpolate(&[0.0, 0.0], &[1.0, 1.0], 0.5), vec![0.5, 0.5]);
    }

    #[test]
    fn two_point_minority_lies_on_the_diagonal() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 5.0], vec![6.0, 5.0], vec![5.0, 6.0], vec![6.0, 6.0]];
        let labels = [1, 1, 0, 0, 0, 0];
        let out = smote_oversample(&rows, &labels, &SmoteConfig { k_neighbors: 1, seed: 4 }).unwrap();
        assert_eq!(out.rows.len(), 8);
        assert_eq!(&out.rows[..6], &rows[..]);
        for (r, l) in out.synthetic() {
            assert_eq!(l, 1);
            assert!((r[0] - r[1]).abs() < 1e-12 && (0.0..=1.0).contains(&r[0]));
        }
    }

    #[test]
    fn too_small_minority_is_an_error() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let err = smote_oversample(&rows, &[0, 1, 1, 1], &SmoteConfig::default()).unwrap_err();
        assert!(err.to_string().contains("smaller k"), "{err}");
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let rows = vec![vec![0.0], vec![1.0]];
        let out = smote_oversample(&rows, &[0, 1], &SmoteConfig::default()).unwrap();
        assert_eq!(out.rows, rows);
    }
}
