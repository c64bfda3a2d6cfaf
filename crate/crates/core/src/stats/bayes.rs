//! Posterior of group means under a Normal likelihood on the observed means,
//! sampled with component-wise adaptive random-walk Metropolis.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GroupSummary, StatsError};

/// Prior placed independently on each group mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// Centred on the n-weighted pooled mean with sd `scale` times the pooled sd.
    Pooled { scale: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Pooled { scale: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    pub draws: usize,
    pub target_accept: f64,
    pub tune: usize,
    /// Metropolis sweeps between kept draws.
    pub thin: usize,
    /// Interval mass for the HDI columns.
    pub hdi_mass: f64,
    pub prior: Prior,
    pub seed: u64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            draws: 2000,
            target_accept: 0.9,
            tune: 5000,
            thin: 20,
            hdi_mass: 0.94,
            prior: Prior::default(),
            seed: 0,
        }
    }
}

impl BayesConfig {
    fn validate(&self) -> Result<(), StatsError> {
        if self.draws < 500 {
            return Err(StatsError::InvalidArgument(format!("draws {} below 500", self.draws)));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(StatsError::InvalidArgument(format!("target_accept {}", self.target_accept)));
        }
        if self.thin == 0 {
            return Err(StatsError::InvalidArgument("thin must be at least 1".into()));
        }
        if !(self.hdi_mass > 0.0 && self.hdi_mass < 1.0) {
            return Err(StatsError::InvalidArgument(format!("hdi_mass {}", self.hdi_mass)));
        }
        match self.prior {
            Prior::Pooled { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(StatsError::InvalidArgument(format!("prior scale {scale}")))
            }
            Prior::Normal { mean, sd } if !(mean.is_finite() && sd > 0.0 && sd.is_finite()) => {
                Err(StatsError::InvalidArgument(format!("prior N({mean}, {sd})")))
            }
            _ => Ok(()),
        }
    }
}

/// Summary of one posterior quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    pub mcse_mean: f64,
    pub mcse_sd: f64,
    pub ess: f64,
}

impl PosteriorRow {
    fn from_draws(name: String, draws: &[f64], mass: f64) -> Self {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        let mcse_mean = batch_means_se(draws, mean);
        let ess = if mcse_mean > 0.0 { (var / (mcse_mean * mcse_mean)).min(n) } else { n };
        let (hdi_low, hdi_high) = hdi(draws, mass);
        Self {
            name,
            mean,
            sd,
            hdi_low,
            hdi_high,
            mcse_mean,
            mcse_sd: sd / (2.0 * ess).sqrt(),
            ess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesResult {
    /// One row per group mean, then one per difference against the last group.
    pub rows: Vec<PosteriorRow>,
    /// Post-adaptation acceptance rate per group mean.
    pub acceptance: Vec<f64>,
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub hdi_mass: f64,
}

impl BayesResult {
    pub fn row(&self, name: &str) -> Option<&PosteriorRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn render(&self) -> String {
        let lo = format!("hdi_{}%", fmt_pct((1.0 - self.hdi_mass) / 2.0));
        let hi = format!("hdi_{}%", fmt_pct((1.0 + self.hdi_mass) / 2.0));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<22}{:>9}{:>9}{:>9}{:>9}{:>11}{:>9}{:>9}",
            "", "mean", "sd", lo, hi, "mcse_mean", "mcse_sd", "ess"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<22}{:>9.3}{:>9.3}{:>9.3}{:>9.3}{:>11.3}{:>9.3}{:>9.0}",
                r.name, r.mean, r.sd, r.hdi_low, r.hdi_high, r.mcse_mean, r.mcse_sd, r.ess
            );
        }
        s
    }
}

fn fmt_pct(p: f64) -> String {
    let v = 100.0 * p;
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.1}")
    }
}

/// Shortest interval containing `mass` of the draws.
pub fn hdi(draws: &[f64], mass: f64) -> (f64, f64) {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (v[0], v[k - 1]);
    for i in 1..=n - k {
        if v[i + k - 1] - v[i] < best.1 - best.0 {
            best = (v[i], v[i + k - 1]);
        }
    }
    best
}

fn batch_means_se(draws: &[f64], mean: f64) -> f64 {
    let n = draws.len();
    let size = ((n as f64).sqrt().floor() as usize).max(1);
    let batches = n / size;
    if batches < 2 {
        return 0.0;
    }
    let var_b = draws
        .chunks_exact(size)
        .map(|c| (c.iter().sum::<f64>() / size as f64 - mean).powi(2))
        .sum::<f64>()
        / (batches as f64 - 1.0);
    (var_b / batches as f64).sqrt()
}

/// Analytic Normal–Normal posterior `(mean, sd)` of a mean observed as
/// `observed ~ Normal(mu, se)` under the prior `mu ~ Normal(prior_mean, prior_sd)`.
pub fn conjugate_posterior(observed: f64, se: f64, prior_mean: f64, prior_sd: f64) -> (f64, f64) {
    let (wl, wp) = (1.0 / (se * se), 1.0 / (prior_sd * prior_sd));
    ((wl * observed + wp * prior_mean) / (wl + wp), (1.0 / (wl + wp)).sqrt())
}

fn resolve_prior(groups: &[(String, GroupSummary)], prior: Prior) -> Result<(f64, f64), StatsError> {
    match prior {
        Prior::Normal { mean, sd } => Ok((mean, sd)),
        Prior::Pooled { scale } => {
            let n: f64 = groups.iter().map(|(_, g)| g.n as f64).sum();
            let mean = groups.iter().map(|(_, g)| g.n as f64 * g.mean).sum::<f64>() / n;
            let dof: f64 = groups.iter().map(|(_, g)| g.n as f64 - 1.0).sum();
            let pooled = (groups.iter().map(|(_, g)| (g.n as f64 - 1.0) * g.variance()).sum::<f64>() / dof).sqrt();
            if pooled == 0.0 {
                return Err(StatsError::ZeroPooledSd);
            }
            Ok((mean, scale * pooled))
        }
    }
}

/// Samples the posterior of each group mean and of each group's difference
/// against the last group (`delta_<name>_<last>`).
///
/// Every group mean gets `mu_<name>` as its row name. Fails when the chain's
/// post-adaptation acceptance leaves `[0.5, 0.99]`.
pub fn bayes_group_means(groups: &[(String, GroupSummary)], cfg: &BayesConfig) -> Result<BayesResult, StatsError> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(StatsError::InvalidArgument("no groups".into()));
    }
    let (prior_mean, prior_sd) = resolve_prior(groups, cfg.prior)?;
    let k = groups.len();
    let obs: Vec<(f64, f64)> = groups
        .iter()
        .map(|(name, g)| {
            let se = g.sd / (g.n as f64).sqrt();
            if se > 0.0 {
                Ok((g.mean, se))
            } else {
                Err(StatsError::InvalidArgument(format!("group {name} has zero standard error")))
            }
        })
        .collect::<Result<_, _>>()?;
    let log_post = |g: usize, mu: f64| -> f64 {
        let (m, se) = obs[g];
        -0.5 * ((m - mu) / se).powi(2) - 0.5 * ((mu - prior_mean) / prior_sd).powi(2)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state: Vec<f64> = obs.iter().map(|o| o.0).collect();
    let mut lp: Vec<f64> = (0..k).map(|g| log_post(g, state[g])).collect();
    let mut log_step: Vec<f64> = obs.iter().map(|o| o.1.ln()).collect();

    let step = |g: usize, state: &mut [f64], lp: &mut [f64], scale: f64, rng: &mut ChaCha8Rng| -> bool {
        let z: f64 = rng.sample(StandardNormal);
        let prop = state[g] + scale * z;
        let lp_new = log_post(g, prop);
        let accept = lp_new - lp[g] >= 0.0 || rng.random::<f64>().ln() < lp_new - lp[g];
        if accept {
            state[g] = prop;
            lp[g] = lp_new;
        }
        accept
    };

    for it in 0..cfg.tune {
        let gain = 1.0 / ((it + 10) as f64).powf(0.6);
        for (g, ls) in log_step.iter_mut().enumerate() {
            let acc = step(g, &mut state, &mut lp, ls.exp(), &mut rng);
            *ls += gain * (f64::from(u8::from(acc)) - cfg.target_accept);
        }
    }

    let mut draws = vec![Vec::with_capacity(cfg.draws); k];
    let mut accepted = vec![0usize; k];
    for _ in 0..cfg.draws {
        for _ in 0..cfg.thin {
            for g in 0..k {
                if step(g, &mut state, &mut lp, log_step[g].exp(), &mut rng) {
                    accepted[g] += 1;
                }
            }
        }
        for g in 0..k {
            draws[g].push(state[g]);
        }
    }
    let total = (cfg.draws * cfg.thin) as f64;
    let acceptance: Vec<f64> = accepted.iter().map(|&a| a as f64 / total).collect();
    for (g, &a) in acceptance.iter().enumerate() {
        if !(0.5..=0.99).contains(&a) {
            return Err(StatsError::NonConvergent {
                parameter: format!("mu_{}", groups[g].0),
                acceptance: a,
            });
        }
    }

    let mut rows: Vec<PosteriorRow> = groups
        .iter()
        .zip(&draws)
        .map(|((name, _), d)| PosteriorRow::from_draws(format!("mu_{name}"), d, cfg.hdi_mass))
        .collect();
    let last = k - 1;
    for g in 0..last {
        let delta: Vec<f64> = draws[g].iter().zip(&draws[last]).map(|(a, b)| a - b).collect();
        let name = format!("delta_{}_{}", groups[g].0, groups[last].0);
        rows.push(PosteriorRow::from_draws(name, &delta, cfg.hdi_mass));
    }
    Ok(BayesResult {
        rows,
        acceptance,
        prior_mean,
        prior_sd,
        hdi_mass: cfg.hdi_mass,
    })
}
