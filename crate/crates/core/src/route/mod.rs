//! Threshold routing across small, medium and large backends.
//!
//! A prompt whose thought count is below `t1` goes to the small tier, below
//! `t2` to the medium tier and everything else to the large tier. Threshold
//! pairs are scored by `alpha * ROUGE - beta * latency - gamma * power` and
//! searched with a Tree-structured Parzen Estimator.

mod backend;
mod compare;
mod evaluate;
mod tpe;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use backend::{
    build_backend, calibrate_mocks, BackendClient, BackendError, BackendSpec, Completion,
    CompletionRequest, HttpBackend, HttpSpec, MockBackend, MockProfile, TranscriptMode,
    DEFAULT_POWER_W,
};
pub use compare::{run_comparison, ComparisonReport, Improvement, TierMetrics};
pub use evaluate::{
    timed_invoke, EvaluatorConfig, PromptOutcome, ScoreMode, ThresholdEvaluator, TierBackends,
    TierCounts, TrialRecord,
};
pub use tpe::{
    random_search_thresholds, tpe_optimize, tpe_search, TpeConfig, TpeError, TpeResult, Trial,
};

#[derive(Debug, thiserror::Error)]
pub enum RouteError {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("cannot score an empty result set")]
    EmptyResults,
    #[error("record {0} has no thought_count annotation")]
    MissingAnnotation(String),
    #[error("record {0} has no reference answer")]
    MissingReference(String),
    #[error("no backend configured for tier {0}")]
    MissingTier(Tier),
    #[error("trial ({t1}, {t2}) aborted: {} of {total} backend calls failed, first: {}", failures.len(), failures.first().map(|f| f.1.as_str()).unwrap_or(""))]
    TrialAborted {
        t1: f64,
        t2: f64,
        total: usize,
        /// `(record id, error)` pairs.
        failures: Vec<(String, String)>,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tpe(#[from] TpeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Small,
    Medium,
    Large,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Small, Tier::Medium, Tier::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Small => "small",
            Tier::Medium => "medium",
            Tier::Large => "large",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(Tier::Small),
            "medium" => Ok(Tier::Medium),
            "large" => Ok(Tier::Large),
            other => Err(format!("unknown tier {other:?}")),
        }
    }
}

/// Objective weights: quality gain, latency cost, power cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversarialAction {
    #[default]
    Reject,
    /// Route anyway and mark the decision.
    Flag,
}

fn default_adv_threshold() -> f64 {
    0.90
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub t1: f64,
    pub t2: f64,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default = "default_adv_threshold")]
    pub adversarial_threshold: f64,
    #[serde(default)]
    pub adversarial_action: AdversarialAction,
    #[serde(default)]
    pub tiers: BTreeMap<Tier, BackendSpec>,
}

impl RoutingPolicy {
    pub fn new(t1: f64, t2: f64) -> Self {
        Self {
            t1,
            t2,
            weights: ObjectiveWeights::default(),
            adversarial_threshold: default_adv_threshold(),
            adversarial_action: AdversarialAction::Reject,
            tiers: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), RouteError> {
        if !(self.t1.is_finite() && self.t2.is_finite() && self.t1 < self.t2) {
            return Err(RouteError::InvalidPolicy(format!(
                "thresholds must be finite with t1 < t2, got ({}, {})",
                self.t1, self.t2
            )));
        }
        let w = self.weights;
        if [w.alpha, w.beta, w.gamma].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(RouteError::InvalidPolicy("weights must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.adversarial_threshold) {
            return Err(RouteError::InvalidPolicy(format!(
                "adversarial_threshold {} outside [0, 1]",
                self.adversarial_threshold
            )));
        }
        Ok(())
    }

    pub fn tier_for(&self, noft: f64) -> Tier {
        select_tier(noft, self.t1, self.t2)
    }
}

/// `noft < t1` is small, `t1 <= noft < t2` medium, `noft >= t2` large.
pub fn select_tier(noft: f64, t1: f64, t2: f64) -> Tier {
    if noft < t1 {
        Tier::Small
    } else if noft < t2 {
        Tier::Medium
    } else {
        Tier::Large
    }
}

/// Per-prompt quality and cost fed into the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreInput {
    pub rouge: f64,
    pub latency_s: f64,
    pub power_w: f64,
}

/// Mean over prompts of `alpha * R - beta * L - gamma * P`.
pub fn routing_score(results: &[ScoreInput], w: &ObjectiveWeights) -> Result<f64, RouteError> {
    if results.is_empty() {
        return Err(RouteError::EmptyResults);
    }
    let total: f64 = results
        .iter()
        .map(|r| w.alpha * r.rouge - w.beta * r.latency_s - w.gamma * r.power_w)
        .sum();
    Ok(total / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tier_examples() {
        assert_eq!(select_tier(3.0, 4.80, 20.26), Tier::Small);
        assert_eq!(select_tier(12.0, 4.80, 20.26), Tier::Medium);
        assert_eq!(select_tier(25.0, 4.80, 20.26), Tier::Large);
        assert_eq!(select_tier(20.0, 35.417, 35.418), Tier::Small);
        assert_eq!(select_tier(40.0, 35.417, 35.418), Tier::Large);
        assert_eq!(select_tier(4.80, 4.80, 20.26), Tier::Medium);
        assert_eq!(select_tier(20.26, 4.80, 20.26), Tier::Large);
    }

    #[test]
    fn score_examples() {
        let w = ObjectiveWeights::default();
        let one = ScoreInput {
            rouge: 1.0,
            latency_s: 0.0,
            power_w: 0.0,
        };
        assert_eq!(routing_score(&[one], &w).unwrap(), 1.0);
        let table = ScoreInput {
            rouge: 0.2,
            latency_s: 6.5,
            power_w: 63.9,
        };
        assert!((routing_score(&[table], &w).unwrap() - (-22.22)).abs() < 1e-9);
        let heavier = ObjectiveWeights { gamma: 0.6, ..w };
        assert!(routing_score(&[table], &heavier).unwrap() < routing_score(&[table], &w).unwrap());
        assert!(matches!(routing_score(&[], &w), Err(RouteError::EmptyResults)));
    }

    #[test]
    fn policy_validation_and_json() {
        assert!(RoutingPolicy::new(5.0, 5.0).validate().is_err());
        assert!(RoutingPolicy::new(f64::NAN, 5.0).validate().is_err());
        let p: RoutingPolicy = serde_json::from_str(
            r#"{"t1": 4.80697, "t2": 20.26065,
                "weights": {"alpha": 1.0, "beta": 0.5, "gamma": 0.3},
                "adversarial_threshold": 0.90,
                "tiers": {"small": {"kind": "mock", "latency_mean_s": 1.0}}}"#,
        )
        .unwrap();
        p.validate().unwrap();
        assert_eq!(p.adversarial_action, AdversarialAction::Reject);
        assert!(p.tiers.contains_key(&Tier::Small));
        let back: RoutingPolicy = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn tier_is_monotone(a in -10.0f64..60.0, b in -10.0f64..60.0, t1 in 0.0f64..30.0, gap in 0.001f64..30.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(select_tier(lo, t1, t1 + gap) <= select_tier(hi, t1, t1 + gap));
        }

        #[test]
        fn score_moves_with_each_term(r in 0.0f64..1.0, l in 0.0f64..20.0, p in 0.0f64..100.0, d in 0.01f64..5.0) {
            let w = ObjectiveWeights::default();
            let base = [ScoreInput { rouge: r, latency_s: l, power_w: p }, ScoreInput { rouge: 0.5, latency_s: 1.0, power_w: 10.0 }];
            let s = routing_score(&base, &w).unwrap();
            let mut slower = base; slower[0].latency_s += d;
            let mut hotter = base; hotter[0].power_w += d;
            let mut better = base; better[0].rouge += d;
            prop_assert!(routing_score(&slower, &w).unwrap() < s);
            prop_assert!(routing_score(&hotter, &w).unwrap() < s);
            prop_assert!(routing_score(&better, &w).unwrap() > s);
        }
    }
}
