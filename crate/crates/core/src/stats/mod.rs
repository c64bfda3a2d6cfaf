//! Group comparisons: Welch's t-test, Cohen's d, power analysis and a
//! Bayesian model of group means.

mod bayes;
mod power;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub use bayes::{bayes_group_means, conjugate_posterior, hdi, BayesConfig, BayesResult, PosteriorRow, Prior};
pub use power::{noncentral_t_cdf, power_two_sample_t, power_two_sample_t_unequal, required_n, PowerResult};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("sample needs at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("pooled standard deviation is zero")]
    ZeroPooledSd,
    #[error("effect size 0 needs an infinite sample")]
    ZeroEffect,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sampler did not converge: acceptance {acceptance:.3} for {parameter}")]
    NonConvergent { parameter: String, acceptance: f64 },
}

/// Mean, sample standard deviation and size of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl GroupSummary {
    pub fn new(mean: f64, sd: f64, n: usize) -> Result<Self, StatsError> {
        if n < 2 {
            return Err(StatsError::TooFewValues(n));
        }
        if !(mean.is_finite() && sd.is_finite() && sd >= 0.0) {
            return Err(StatsError::InvalidArgument(format!("mean {mean} / sd {sd}")));
        }
        Ok(Self { mean, sd, n })
    }

    pub fn from_sample(x: &[f64]) -> Result<Self, StatsError> {
        if x.len() < 2 {
            return Err(StatsError::TooFewValues(x.len()));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self::new(mean, var.sqrt(), x.len())
    }

    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Central Student-t CDF.
pub fn t_cdf(x: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive df").cdf(x)
}

fn t_sf(x: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive df").sf(x)
}

/// Central Student-t quantile.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive df").inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    let (sa, sb) = (GroupSummary::from_sample(a)?, GroupSummary::from_sample(b)?);
    welch_from_summaries(&sa, &sb)
}

pub fn welch_from_summaries(a: &GroupSummary, b: &GroupSummary) -> Result<TTestResult, StatsError> {
    let va = a.variance() / a.n as f64;
    let vb = b.variance() / b.n as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = (a.mean - b.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0));
    let p = (2.0 * t_sf(t.abs(), df)).min(1.0);
    Ok(TTestResult { t, df, p })
}

/// `(mean_a - mean_b) / pooled_sd` with pooled variance weighted by `n - 1`.
pub fn cohens_d(a: &GroupSummary, b: &GroupSummary) -> Result<f64, StatsError> {
    let (na, nb) = (a.n as f64, b.n as f64);
    let pooled = (((na - 1.0) * a.variance() + (nb - 1.0) * b.variance()) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(StatsError::ZeroPooledSd);
    }
    Ok((a.mean - b.mean) / pooled)
}
