use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{normal_cdf, t_quantile, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub effect_size_d: f64,
    pub n_per_group: f64,
    pub alpha: f64,
    pub achieved_power: f64,
    /// Per-group size reaching `target_power`.
    pub required_n_per_group: f64,
    pub target_power: f64,
}

impl PowerResult {
    pub fn compute(d: f64, n_per_group: f64, alpha: f64, target_power: f64) -> Result<Self, StatsError> {
        Ok(Self {
            effect_size_d: d,
            n_per_group,
            alpha,
            achieved_power: power_two_sample_t(d, n_per_group, alpha)?,
            required_n_per_group: required_n(d, target_power, alpha)?,
            target_power,
        })
    }
}

const GRID: usize = 4000;

/// CDF of the noncentral t distribution with `df` degrees of freedom and
/// noncentrality `ncp`.
///
/// Uses `P(T <= t) = E[Phi(t * U - ncp)]` with `U = sqrt(chi2_df / df)`,
/// integrated over the density of `U` by composite Simpson's rule.
pub fn noncentral_t_cdf(t: f64, df: f64, ncp: f64) -> f64 {
    assert!(df > 0.0, "df must be positive");
    let spread = 12.0 / df.sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread.max(1.0);
    let h = (hi - lo) / GRID as f64;
    let half = df / 2.0;
    let log_norm = std::f64::consts::LN_2 + df.ln() - half * std::f64::consts::LN_2 - ln_gamma(half);
    // Density of U: 2 df u f_chi2(df u^2).
    let integrand = |u: f64| -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let x = df * u * u;
        let log_f = log_norm + u.ln() + (half - 1.0) * x.ln() - x / 2.0;
        log_f.exp() * normal_cdf(t * u - ncp)
    };
    let mut sum = integrand(lo) + integrand(hi);
    for i in 1..GRID {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(lo + i as f64 * h);
    }
    (sum * h / 3.0).clamp(0.0, 1.0)
}

fn check(d: f64, alpha: f64) -> Result<(), StatsError> {
    if !d.is_finite() {
        return Err(StatsError::InvalidArgument(format!("effect size {d}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}

fn two_sided_power(df: f64, ncp: f64, alpha: f64) -> f64 {
    let tc = t_quantile(1.0 - alpha / 2.0, df);
    (1.0 - noncentral_t_cdf(tc, df, ncp) + noncentral_t_cdf(-tc, df, ncp)).clamp(0.0, 1.0)
}

/// Power of the two-sided two-sample t-test with `n` per group.
/// `n` may be fractional so the curve can be inverted smoothly.
pub fn power_two_sample_t(d: f64, n: f64, alpha: f64) -> Result<f64, StatsError> {
    check(d, alpha)?;
    if !(n >= 2.0) {
        return Err(StatsError::InvalidArgument(format!("n per group {n} below 2")));
    }
    Ok(two_sided_power(2.0 * n - 2.0, d * (n / 2.0).sqrt(), alpha))
}

/// Power with unequal group sizes.
pub fn power_two_sample_t_unequal(d: f64, n1: usize, n2: usize, alpha: f64) -> Result<f64, StatsError> {
    check(d, alpha)?;
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::TooFewValues(n1.min(n2)));
    }
    let (a, b) = (n1 as f64, n2 as f64);
    Ok(two_sided_power(a + b - 2.0, d * (a * b / (a + b)).sqrt(), alpha))
}

/// Smallest (fractional) per-group size whose power reaches `target`.
pub fn required_n(d: f64, target: f64, alpha: f64) -> Result<f64, StatsError> {
    check(d, alpha)?;
    if d == 0.0 {
        return Err(StatsError::ZeroEffect);
    }
    if !(target > alpha / 2.0 && target < 1.0) {
        return Err(StatsError::InvalidArgument(format!("target power {target}")));
    }
    let power = |n: f64| power_two_sample_t(d, n, alpha).expect("validated inputs");
    let mut lo = 2.0;
    if power(lo) >= target {
        return Ok(lo);
    }
    let mut hi = 4.0;
    while power(hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            return Err(StatsError::InvalidArgument(format!("effect size {d} too small")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = power(mid);
        if (p - target).abs() < 1e-9 || hi - lo < 1e-10 {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
