//! Tree-structured Parzen Estimator over `(t1, t2)` with `t1 < t2`.
//!
//! After `n_startup_random` uniform trials, each step splits the history at
//! `split_quantile` into good and bad trials, fits a one-dimensional Parzen
//! density per threshold to each set, draws candidates from the good density
//! and evaluates the one maximising `l(x) / g(x)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{evaluate::ThresholdEvaluator, ObjectiveWeights, RouteError, RoutingPolicy, TrialRecord};
use crate::stats::normal_cdf;

const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub n_trials: usize,
    pub n_startup_random: usize,
    /// Fraction of trials treated as good.
    pub split_quantile: f64,
    pub candidates_per_step: usize,
    /// Kernel bandwidth never drops below this fraction of the bound width.
    pub bandwidth_floor: f64,
    pub bounds_t1: (f64, f64),
    pub bounds_t2: (f64, f64),
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            n_trials: 100,
            n_startup_random: 10,
            split_quantile: 0.25,
            candidates_per_step: 24,
            bandwidth_floor: 1e-3,
            bounds_t1: (0.0, 40.0),
            bounds_t2: (0.0, 40.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum TpeError {
    #[error("invalid TPE config: {0}")]
    Config(String),
    #[error("no candidate with t1 < t2 after {0} resamples")]
    Infeasible(usize),
}

impl TpeConfig {
    pub fn validate(&self) -> Result<(), TpeError> {
        let bad = |m: &str| Err(TpeError::Config(m.into()));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1");
        }
        if self.n_startup_random == 0 || self.n_startup_random > self.n_trials {
            return bad("n_startup_random must lie in 1..=n_trials");
        }
        if !(self.split_quantile > 0.0 && self.split_quantile < 1.0) {
            return bad("split_quantile must lie in (0, 1)");
        }
        if self.candidates_per_step == 0 {
            return bad("candidates_per_step must be at least 1");
        }
        if !(self.bandwidth_floor > 0.0) {
            return bad("bandwidth_floor must be positive");
        }
        for (lo, hi) in [self.bounds_t1, self.bounds_t2] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad("bounds must be finite with lo < hi");
            }
        }
        if self.bounds_t1.0 >= self.bounds_t2.1 {
            return bad("bounds leave no room for t1 < t2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub t1: f64,
    pub t2: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeResult {
    pub best: Trial,
    pub history: Vec<Trial>,
}

/// Truncated-Gaussian mixture on `[lo, hi]` plus one uniform prior component.
struct Parzen {
    centres: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn fit(points: &[f64], lo: f64, hi: f64, floor: f64) -> Self {
        let n = points.len() as f64;
        let scott = if points.len() > 1 {
            let mean = points.iter().sum::<f64>() / n;
            let sd = (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            1.06 * sd * n.powf(-0.2)
        } else {
            0.0
        };
        // Scott's rule collapses once the good set clusters, so the bandwidth
        // is also held above range / min(100, n + 1).
        let adaptive = (hi - lo) / (n + 1.0).min(100.0);
        Self {
            centres: points.to_vec(),
            bandwidth: scott.max(adaptive).max(floor * (hi - lo)),
            lo,
            hi,
        }
    }

    fn weight(&self) -> f64 {
        1.0 / (self.centres.len() as f64 + 1.0)
    }

    fn pdf(&self, x: f64) -> f64 {
        let width = self.hi - self.lo;
        let h = self.bandwidth;
        let kernels: f64 = self
            .centres
            .iter()
            .map(|&c| {
                let z = (x - c) / h;
                let mass = normal_cdf((self.hi - c) / h) - normal_cdf((self.lo - c) / h);
                (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()) / mass.max(1e-300)
            })
            .sum();
        self.weight() * (kernels + 1.0 / width)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let k = rng.random_range(0..=self.centres.len());
        if k == self.centres.len() {
            return rng.random_range(self.lo..self.hi);
        }
        let dist = Normal::new(self.centres[k], self.bandwidth).expect("positive bandwidth");
        for _ in 0..MAX_RESAMPLES {
            let v = dist.sample(rng);
            if v >= self.lo && v <= self.hi {
                return v;
            }
        }
        self.centres[k].clamp(self.lo, self.hi)
    }
}

fn uniform_pair(cfg: &TpeConfig, rng: &mut ChaCha8Rng) -> Result<(f64, f64), TpeError> {
    for _ in 0..MAX_RESAMPLES {
        let t1 = rng.random_range(cfg.bounds_t1.0..cfg.bounds_t1.1);
        let t2 = rng.random_range(cfg.bounds_t2.0..cfg.bounds_t2.1);
        if t1 < t2 {
            return Ok((t1, t2));
        }
    }
    Err(TpeError::Infeasible(MAX_RESAMPLES))
}

fn propose(cfg: &TpeConfig, history: &[Trial], rng: &mut ChaCha8Rng) -> Result<(f64, f64), TpeError> {
    let mut sorted: Vec<&Trial> = history.iter().collect();
    // Stable sort keeps earlier trials first among equal scores.
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let n = sorted.len();
    let n_good = ((cfg.split_quantile * n as f64).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
    let (good, bad) = sorted.split_at(n_good);
    let dims = |set: &[&Trial], pick: fn(&Trial) -> f64| set.iter().map(|t| pick(t)).collect::<Vec<_>>();
    let (b1, b2) = (cfg.bounds_t1, cfg.bounds_t2);
    let l1 = Parzen::fit(&dims(good, |t| t.t1), b1.0, b1.1, cfg.bandwidth_floor);
    let l2 = Parzen::fit(&dims(good, |t| t.t2), b2.0, b2.1, cfg.bandwidth_floor);
    let g1 = Parzen::fit(&dims(bad, |t| t.t1), b1.0, b1.1, cfg.bandwidth_floor);
    let g2 = Parzen::fit(&dims(bad, |t| t.t2), b2.0, b2.1, cfg.bandwidth_floor);

    let mut best: Option<((f64, f64), f64)> = None;
    for _ in 0..cfg.candidates_per_step {
        let mut found = None;
        for _ in 0..MAX_RESAMPLES {
            let (a, b) = (l1.sample(rng), l2.sample(rng));
            if a < b {
                found = Some((a, b));
                break;
            }
        }
        let (a, b) = found.ok_or(TpeError::Infeasible(MAX_RESAMPLES))?;
        let ratio = (l1.pdf(a).ln() + l2.pdf(b).ln()) - (g1.pdf(a).ln() + g2.pdf(b).ln());
        if best.is_none_or(|(_, r)| ratio > r) {
            best = Some(((a, b), ratio));
        }
    }
    Ok(best.expect("candidates_per_step >= 1").0)
}

fn run<E>(
    cfg: &TpeConfig,
    startup: usize,
    mut objective: impl FnMut(f64, f64) -> Result<f64, E>,
) -> Result<TpeResult, E>
where
    E: From<TpeError>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history: Vec<Trial> = Vec::with_capacity(cfg.n_trials);
    for i in 0..cfg.n_trials {
        let (t1, t2) = if i < startup {
            uniform_pair(cfg, &mut rng)?
        } else {
            propose(cfg, &history, &mut rng)?
        };
        let score = objective(t1, t2)?;
        log::debug!("trial {i}: ({t1:.4}, {t2:.4}) -> {score:.6}");
        history.push(Trial { t1, t2, score });
    }
    let best = *history
        .iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .expect("n_trials >= 1");
    Ok(TpeResult { best, history })
}

/// Maximises `objective` over threshold pairs.
pub fn tpe_search<E: From<TpeError>>(
    cfg: &TpeConfig,
    objective: impl FnMut(f64, f64) -> Result<f64, E>,
) -> Result<TpeResult, E> {
    run(cfg, cfg.n_startup_random, objective)
}

/// Uniform random search with the same budget and seed handling.
pub fn random_search_thresholds<E: From<TpeError>>(
    cfg: &TpeConfig,
    objective: impl FnMut(f64, f64) -> Result<f64, E>,
) -> Result<TpeResult, E> {
    run(cfg, cfg.n_trials, objective)
}

/// Searches thresholds on a dataset and returns `template` with the best pair.
pub fn tpe_optimize(
    evaluator: &ThresholdEvaluator<'_>,
    cfg: &TpeConfig,
    template: &RoutingPolicy,
) -> Result<(RoutingPolicy, Vec<TrialRecord>), RouteError> {
    let weights: ObjectiveWeights = template.weights;
    let mut records = Vec::with_capacity(cfg.n_trials);
    let result = tpe_search(cfg, |t1, t2| {
        let rec = evaluator.evaluate(t1, t2, &weights)?;
        let s = rec.score;
        records.push(rec);
        Ok::<f64, RouteError>(s)
    })?;
    let mut policy = template.clone();
    policy.t1 = result.best.t1;
    policy.t2 = result.best.t2;
    Ok((policy, records))
}
