//! Single decision tree: arena storage and greedy growth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{HyperParams, Target};
use crate::vectorize::SparseVector;

/// Arena node. Children are indices into [`Tree::nodes`].
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// One value for regression, class frequencies for classification.
    Leaf { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Root is node 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &SparseVector) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x.get(*feature) <= *threshold { *left } else { *right },
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

/// Column-major copy of the nonzero entries.
pub(crate) struct Columns {
    cols: Vec<Vec<(usize, f64)>>,
}

impl Columns {
    pub(crate) fn build(x: &[SparseVector], dim: usize) -> Self {
        let mut cols = vec![Vec::new(); dim];
        for (r, row) in x.iter().enumerate() {
            for &(c, v) in row.entries() {
                cols[c].push((r, v));
            }
        }
        Self { cols }
    }
}

pub(crate) fn bootstrap_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1.0;
    }
    w
}

/// Weighted sufficient statistics for a set of rows.
#[derive(Clone)]
struct Stats {
    w: f64,
    sum: f64,
    sumsq: f64,
    counts: Vec<f64>,
}

impl Stats {
    fn new(n_classes: usize) -> Self {
        Self {
            w: 0.0,
            sum: 0.0,
            sumsq: 0.0,
            counts: vec![0.0; n_classes],
        }
    }

    fn add(&mut self, target: &Target<'_>, row: usize, w: f64) {
        self.w += w;
        match target {
            Target::Regression(y) => {
                self.sum += w * y[row];
                self.sumsq += w * y[row] * y[row];
            }
            Target::Classification { labels, .. } => self.counts[labels[row]] += w,
        }
    }

    fn merge(&mut self, other: &Stats) {
        self.w += other.w;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Weighted impurity: SSE for regression, `w * gini` for classification.
    fn impurity(&self, regression: bool) -> f64 {
        if self.w <= 0.0 {
            return 0.0;
        }
        let v = if regression {
            self.sumsq - self.sum * self.sum / self.w
        } else {
            self.w - self.counts.iter().map(|c| c * c).sum::<f64>() / self.w
        };
        v.max(0.0)
    }

    fn leaf_value(&self, regression: bool) -> Vec<f64> {
        if regression {
            vec![self.sum / self.w]
        } else {
            self.counts.iter().map(|c| c / self.w).collect()
        }
    }
}

struct Grower<'a> {
    x: &'a [SparseVector],
    columns: &'a Columns,
    target: Target<'a>,
    regression: bool,
    n_classes: usize,
    weights: &'a [f64],
    hp: &'a HyperParams,
    mtry: usize,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    /// `stamp[row] == current` marks rows of the node being split.
    stamp: Vec<usize>,
    stamp_counter: usize,
    order: Vec<usize>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    /// Higher gain wins; equal gains go to the lower feature, then threshold.
    fn beats(&self, other: &Option<Candidate>, tol: f64) -> bool {
        match other {
            None => true,
            Some(o) => {
                if self.gain > o.gain + tol {
                    true
                } else if self.gain < o.gain - tol {
                    false
                } else {
                    (self.feature, self.threshold) < (o.feature, o.threshold)
                }
            }
        }
    }
}

pub(crate) fn grow(
    x: &[SparseVector],
    columns: &Columns,
    target: Target<'_>,
    weights: &[f64],
    hp: &HyperParams,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let (regression, n_classes) = match target {
        Target::Regression(_) => (true, 0),
        Target::Classification { classes, .. } => (false, classes.len()),
    };
    let dim = columns.cols.len();
    let mut g = Grower {
        x,
        columns,
        target,
        regression,
        n_classes,
        weights,
        hp,
        mtry,
        rng,
        nodes: Vec::new(),
        stamp: vec![usize::MAX; x.len()],
        stamp_counter: 0,
        order: (0..dim).collect(),
    };
    let rows: Vec<usize> = (0..x.len()).filter(|&r| weights[r] > 0.0).collect();
    g.build(rows, 0);
    Tree { nodes: g.nodes }
}

impl Grower<'_> {
    fn stats_of(&self, rows: &[usize]) -> Stats {
        let mut s = Stats::new(self.n_classes);
        for &r in rows {
            s.add(&self.target, r, self.weights[r]);
        }
        s
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let stats = self.stats_of(&rows);
        self.nodes.push(Node::Leaf {
            value: stats.leaf_value(self.regression),
        });
        let parent = stats.impurity(self.regression);
        let can_split = self.hp.max_depth.is_none_or(|d| depth < d)
            && stats.w >= self.hp.min_samples_split as f64
            && parent > 1e-12 * stats.w.max(1.0);
        if !can_split {
            return id;
        }
        let Some(best) = self.best_split(&rows, &stats, parent) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r].get(best.feature) <= best.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], total: &Stats, parent: f64) -> Option<Candidate> {
        self.stamp_counter += 1;
        let stamp = self.stamp_counter;
        for &r in rows {
            self.stamp[r] = stamp;
        }
        let tol = 1e-12 * parent.max(1e-300);
        let mut best: Option<Candidate> = None;
        let mut informative = 0;
        let dim = self.order.len();
        // Lazy Fisher-Yates: visit features in random order until `mtry`
        // non-constant ones have been evaluated.
        for k in 0..dim {
            if informative >= self.mtry {
                break;
            }
            let j = self.rng.random_range(k..dim);
            self.order.swap(k, j);
            let f = self.order[k];
            if let Some(c) = self.scan_feature(f, stamp, total, parent) {
                informative += 1;
                if let Some(c) = c {
                    if c.beats(&best, tol) {
                        best = Some(c);
                    }
                }
            }
        }
        best.filter(|b| b.gain > tol)
    }

    /// `None` if the feature is constant in this node, otherwise the best
    /// split on it (if any has positive gain).
    fn scan_feature(
        &self,
        f: usize,
        stamp: usize,
        total: &Stats,
        parent: f64,
    ) -> Option<Option<Candidate>> {
        let mut nz: Vec<(f64, usize)> = self.columns.cols[f]
            .iter()
            .filter(|(r, _)| self.stamp[*r] == stamp)
            .map(|&(r, v)| (v, r))
            .collect();
        nz.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nz_stats = Stats::new(self.n_classes);
        for &(_, r) in &nz {
            nz_stats.add(&self.target, r, self.weights[r]);
        }
        let zero_w = total.w - nz_stats.w;
        let has_zero = zero_w > 1e-9;
        let distinct = {
            let mut d = usize::from(has_zero);
            for (i, (v, _)) in nz.iter().enumerate() {
                if i == 0 || *v != nz[i - 1].0 {
                    d += 1;
                }
            }
            d
        };
        if distinct < 2 {
            return None;
        }

        // Zero rows as one block at value 0, placed in sorted position.
        let zero_stats = if has_zero {
            let mut z = Stats::new(self.n_classes);
            z.w = zero_w;
            z.sum = total.sum - nz_stats.sum;
            z.sumsq = total.sumsq - nz_stats.sumsq;
            for (c, (t, n)) in z.counts.iter_mut().zip(total.counts.iter().zip(&nz_stats.counts)) {
                *c = t - n;
            }
            Some(z)
        } else {
            None
        };
        let split_at = nz.partition_point(|(v, _)| *v < 0.0);

        let mut left = Stats::new(self.n_classes);
        let mut best: Option<Candidate> = None;
        let mut prev: Option<f64> = None;
        let consider = |left: &Stats, prev: Option<f64>, next: f64, best: &mut Option<Candidate>| {
            let Some(p) = prev else { return };
            if p == next {
                return;
            }
            let mut thr = p + (next - p) / 2.0;
            if thr >= next {
                thr = p;
            }
            let mut right = total.clone();
            right.w -= left.w;
            right.sum -= left.sum;
            right.sumsq -= left.sumsq;
            for (r, l) in right.counts.iter_mut().zip(&left.counts) {
                *r -= l;
            }
            let gain = parent - left.impurity(self.regression) - right.impurity(self.regression);
            let cand = Candidate {
                gain,
                feature: f,
                threshold: thr,
            };
            if cand.beats(best, 1e-12 * parent.max(1e-300)) {
                *best = Some(cand);
            }
        };

        for (i, &(v, r)) in nz.iter().enumerate() {
            if i == split_at {
                if let Some(z) = &zero_stats {
                    consider(&left, prev, 0.0, &mut best);
                    left.merge(z);
                    prev = Some(0.0);
                }
            }
            consider(&left, prev, v, &mut best);
            left.add(&self.target, r, self.weights[r]);
            prev = Some(v);
        }
        if split_at == nz.len() && zero_stats.is_some() {
            consider(&left, prev, 0.0, &mut best);
        }
        Some(best)
    }
}
