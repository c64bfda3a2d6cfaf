//! Single-model baselines versus routed traffic.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluate::{PromptOutcome, ThresholdEvaluator, TierCounts};
use super::{RouteError, RoutingPolicy, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierMetrics {
    pub latency_s: f64,
    pub rouge: f64,
    pub power_w: f64,
    pub energy_j: Option<f64>,
}

impl TierMetrics {
    fn from_outcomes(o: &[PromptOutcome]) -> Self {
        let n = o.len() as f64;
        let energy: Option<f64> = o.iter().map(|x| x.energy_j).sum();
        Self {
            latency_s: o.iter().map(|x| x.latency_s).sum::<f64>() / n,
            rouge: o.iter().map(|x| x.rouge).sum::<f64>() / n,
            power_w: o.iter().map(|x| x.power_w).sum::<f64>() / n,
            energy_j: energy.map(|e| e / n),
        }
    }

    fn mean(all: &[TierMetrics]) -> Self {
        let n = all.len() as f64;
        let energy: Option<f64> = all.iter().map(|m| m.energy_j).sum();
        Self {
            latency_s: all.iter().map(|m| m.latency_s).sum::<f64>() / n,
            rouge: all.iter().map(|m| m.rouge).sum::<f64>() / n,
            power_w: all.iter().map(|m| m.power_w).sum::<f64>() / n,
            energy_j: energy.map(|e| e / n),
        }
    }
}

/// Improvement of the routed metrics over one baseline.
///
/// Positive values are better: lower latency and power, higher ROUGE-L.
/// Percentages are relative to the baseline and 0 when the baseline is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub latency_s: f64,
    pub latency_pct: f64,
    pub rouge: f64,
    pub rouge_pct: f64,
    pub power_w: f64,
    pub power_pct: f64,
}

impl Improvement {
    fn between(baseline: &TierMetrics, routed: &TierMetrics) -> Self {
        let pct = |delta: f64, base: f64| if base == 0.0 { 0.0 } else { 100.0 * delta / base };
        let lat = baseline.latency_s - routed.latency_s;
        let rouge = routed.rouge - baseline.rouge;
        let power = baseline.power_w - routed.power_w;
        Self {
            latency_s: lat,
            latency_pct: pct(lat, baseline.latency_s),
            rouge,
            rouge_pct: pct(rouge, baseline.rouge),
            power_w: power,
            power_pct: pct(power, baseline.power_w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub t1: f64,
    pub t2: f64,
    pub n_prompts: usize,
    pub tier_counts: TierCounts,
    /// Every prompt sent to one tier, in small/medium/large order.
    pub baselines: [TierMetrics; 3],
    pub baseline_mean: TierMetrics,
    pub routed: TierMetrics,
    pub vs_baseline: [Improvement; 3],
    pub vs_mean: Improvement,
    pub score: f64,
}

impl ComparisonReport {
    /// Plain-text table: one row per metric, baselines then routed results.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "thresholds t1={:.5} t2={:.5}  prompts={}  routed small/medium/large={}/{}/{}",
            self.t1, self.t2, self.n_prompts, self.tier_counts.small, self.tier_counts.medium, self.tier_counts.large
        );
        let _ = writeln!(
            s,
            "{:<12}{:>10}{:>10}{:>10}{:>10}{:>10}{:>14}{:>10}",
            "Metric", "small", "medium", "large", "mean", "routed", "abs vs mean", "% vs mean"
        );
        let b = &self.baselines;
        let rows: [(&str, [f64; 5], f64, f64); 3] = [
            (
                "Latency (s)",
                [b[0].latency_s, b[1].latency_s, b[2].latency_s, self.baseline_mean.latency_s, self.routed.latency_s],
                self.vs_mean.latency_s,
                self.vs_mean.latency_pct,
            ),
            (
                "ROUGE-L",
                [b[0].rouge, b[1].rouge, b[2].rouge, self.baseline_mean.rouge, self.routed.rouge],
                self.vs_mean.rouge,
                self.vs_mean.rouge_pct,
            ),
            (
                "Power (W)",
                [b[0].power_w, b[1].power_w, b[2].power_w, self.baseline_mean.power_w, self.routed.power_w],
                self.vs_mean.power_w,
                self.vs_mean.power_pct,
            ),
        ];
        for (name, v, abs, pct) in rows {
            let _ = writeln!(
                s,
                "{name:<12}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{abs:>14.4}{pct:>9.2}%",
                v[0], v[1], v[2], v[3], v[4]
            );
        }
        for (t, imp) in Tier::ALL.iter().zip(&self.vs_baseline) {
            let _ = writeln!(
                s,
                "vs {t:<7} latency {:+.4} s ({:+.2}%), ROUGE-L {:+.4} ({:+.2}%), power {:+.4} W ({:+.2}%)",
                imp.latency_s, imp.latency_pct, imp.rouge, imp.rouge_pct, imp.power_w, imp.power_pct
            );
        }
        s
    }
}

/// Compares routed traffic under `policy` with each single-tier baseline.
pub fn run_comparison(
    evaluator: &ThresholdEvaluator<'_>,
    policy: &RoutingPolicy,
) -> Result<ComparisonReport, RouteError> {
    policy.validate()?;
    let mut baselines = Vec::with_capacity(3);
    for t in Tier::ALL {
        baselines.push(TierMetrics::from_outcomes(&evaluator.tier_outcomes(t)?));
    }
    let baselines: [TierMetrics; 3] = baselines.try_into().expect("three tiers");
    let trial = evaluator.evaluate(policy.t1, policy.t2, &policy.weights)?;
    let routed = TierMetrics {
        latency_s: trial.mean_latency_s,
        rouge: trial.mean_rouge,
        power_w: trial.mean_power_w,
        energy_j: trial.mean_energy_j,
    };
    let baseline_mean = TierMetrics::mean(&baselines);
    Ok(ComparisonReport {
        t1: policy.t1,
        t2: policy.t2,
        n_prompts: trial.n_prompts,
        tier_counts: trial.tier_counts,
        vs_baseline: baselines.map(|b| Improvement::between(&b, &routed)),
        vs_mean: Improvement::between(&baseline_mean, &routed),
        baselines,
        baseline_mean,
        routed,
        score: trial.score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_synthetic_corpus, SynthConfig, SynthProfile};
    use crate::route::{BackendClient, EvaluatorConfig, MockBackend, MockProfile, TierBackends};
    use std::sync::Arc;

    #[test]
    fn identical_tiers_show_no_improvement() {
        let ds = make_synthetic_corpus(&SynthConfig::new(SynthProfile::Routing, 50, 8)).unwrap();
        let m: Arc<dyn BackendClient> = Arc::new(MockBackend::new(MockProfile::new("same", 3.0)).unwrap());
        let ev = ThresholdEvaluator::new(&ds, TierBackends::uniform(m), EvaluatorConfig::default()).unwrap();
        let r = run_comparison(&ev, &RoutingPolicy::new(4.8, 20.26)).unwrap();
        assert_eq!(r.vs_mean.latency_s, 0.0);
        assert_eq!(r.vs_mean.rouge, 0.0);
        assert_eq!(r.vs_mean.power_pct, 0.0);
        assert!(r.render().contains("Latency (s)"));
    }

    #[test]
    fn routed_latency_is_bounded_by_baselines() {
        let ds = make_synthetic_corpus(&SynthConfig::new(SynthProfile::Routing, 60, 9)).unwrap();
        let mk = |l: f64, s: u64| -> Arc<dyn BackendClient> {
            let mut p = MockProfile::new("m", l);
            p.seed = s;
            Arc::new(MockBackend::new(p).unwrap())
        };
        let b = TierBackends {
            small: mk(1.0, 1),
            medium: mk(2.0, 2),
            large: mk(5.0, 3),
        };
        let ev = ThresholdEvaluator::new(&ds, b, EvaluatorConfig::default()).unwrap();
        let r = run_comparison(&ev, &RoutingPolicy::new(4.8, 20.26)).unwrap();
        let max = r.baselines.iter().map(|m| m.latency_s).fold(f64::MIN, f64::max);
        assert!(r.routed.latency_s <= max);
        assert!(r.vs_mean.latency_s > 0.0);
    }
}
