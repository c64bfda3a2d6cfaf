//! Scoring threshold pairs on an annotated dataset.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    routing_score, select_tier, BackendClient, BackendError, Completion, CompletionRequest,
    ObjectiveWeights, RouteError, ScoreInput, Tier,
};
use crate::corpus::Dataset;
use crate::cot_parse::run_bounded;
use crate::score::{
    measure, rouge_l_text, ConstantSampler, EnergyRecord, MonotonicClock, PowerSampler,
    Tokenization, VirtualClock,
};

/// One backend per tier.
#[derive(Clone)]
pub struct TierBackends {
    pub small: Arc<dyn BackendClient>,
    pub medium: Arc<dyn BackendClient>,
    pub large: Arc<dyn BackendClient>,
}

impl TierBackends {
    pub fn get(&self, tier: Tier) -> &Arc<dyn BackendClient> {
        match tier {
            Tier::Small => &self.small,
            Tier::Medium => &self.medium,
            Tier::Large => &self.large,
        }
    }

    /// The same backend on every tier.
    pub fn uniform(b: Arc<dyn BackendClient>) -> Self {
        Self {
            small: b.clone(),
            medium: b.clone(),
            large: b,
        }
    }
}

/// Calls `backend` and measures latency and energy around the call.
///
/// Simulated backends advance a private virtual clock by their reported
/// latency. Backends that know their power draw are sampled at that constant;
/// others use `fallback`.
pub fn timed_invoke(
    backend: &dyn BackendClient,
    req: &CompletionRequest,
    fallback: &dyn PowerSampler,
) -> (Result<Completion, BackendError>, EnergyRecord) {
    let constant = backend.power_w().map(ConstantSampler);
    let sampler: &dyn PowerSampler = match &constant {
        Some(c) => c,
        None => fallback,
    };
    if backend.is_simulated() {
        let clock = VirtualClock::new();
        measure(&clock, sampler, || {
            let out = backend.invoke(req);
            if let Ok(c) = &out {
                clock.advance(c.simulated_latency_s.unwrap_or(0.0));
            }
            out
        })
    } else {
        measure(&MonotonicClock::new(), sampler, || backend.invoke(req))
    }
}

/// How the per-prompt terms of the objective are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Each prompt contributes its own measured ROUGE, latency and power.
    #[default]
    PerPrompt,
    /// Each prompt contributes its tier's dataset-wide averages.
    ModelAverage,
}

#[derive(Clone)]
pub struct EvaluatorConfig {
    pub max_in_flight: usize,
    pub score_mode: ScoreMode,
    pub tokenization: Tokenization,
    /// Score only the text after the last `Answer:` marker.
    pub answer_only: bool,
    /// Used for backends that do not report their power.
    pub sampler: Arc<dyn PowerSampler>,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 8,
            score_mode: ScoreMode::PerPrompt,
            tokenization: Tokenization::Words,
            answer_only: false,
            sampler: Arc::new(ConstantSampler(0.0)),
        }
    }
}

/// Measured result of sending one prompt to one tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptOutcome {
    pub rouge: f64,
    pub latency_s: f64,
    pub power_w: f64,
    pub energy_j: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

impl TierCounts {
    pub fn add(&mut self, t: Tier) {
        match t {
            Tier::Small => self.small += 1,
            Tier::Medium => self.medium += 1,
            Tier::Large => self.large += 1,
        }
    }

    pub fn get(&self, t: Tier) -> usize {
        match t {
            Tier::Small => self.small,
            Tier::Medium => self.medium,
            Tier::Large => self.large,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub t1: f64,
    pub t2: f64,
    pub score: f64,
    pub n_prompts: usize,
    pub tier_counts: TierCounts,
    pub mean_rouge: f64,
    pub mean_latency_s: f64,
    pub mean_power_w: f64,
    /// Absent if any prompt lacked an energy reading.
    pub mean_energy_j: Option<f64>,
}

/// Scores threshold pairs, running each (tier, prompt) pair at most once.
pub struct ThresholdEvaluator<'a> {
    ds: &'a Dataset,
    backends: TierBackends,
    cfg: EvaluatorConfig,
    cache: Mutex<HashMap<(Tier, usize), PromptOutcome>>,
}

impl<'a> ThresholdEvaluator<'a> {
    pub fn new(ds: &'a Dataset, backends: TierBackends, cfg: EvaluatorConfig) -> Result<Self, RouteError> {
        if ds.is_empty() {
            return Err(RouteError::EmptyResults);
        }
        for r in ds {
            if r.thought_count.is_none() {
                return Err(RouteError::MissingAnnotation(r.id.clone()));
            }
            if r.reference_answer.is_none() {
                return Err(RouteError::MissingReference(r.id.clone()));
            }
        }
        Ok(Self {
            ds,
            backends,
            cfg,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    fn scored_text<'t>(&self, text: &'t str) -> &'t str {
        if self.cfg.answer_only {
            if let Some(pos) = text.rfind("Answer:") {
                return &text[pos + "Answer:".len()..];
            }
        }
        text
    }

    /// Runs every missing (tier, record) pair and returns all requested outcomes.
    fn outcomes(&self, pairs: &[(Tier, usize)]) -> Result<Vec<PromptOutcome>, Vec<(String, String)>> {
        let missing: Vec<(Tier, usize)> = {
            let cache = self.cache.lock().unwrap();
            let mut m: Vec<(Tier, usize)> = pairs.iter().copied().filter(|p| !cache.contains_key(p)).collect();
            m.sort_unstable();
            m.dedup();
            m
        };
        let results = run_bounded(missing.len(), self.cfg.max_in_flight, |k| {
            let (tier, idx) = missing[k];
            let record = &self.ds.records[idx];
            let backend = self.backends.get(tier);
            let (out, rec) = timed_invoke(
                backend.as_ref(),
                &CompletionRequest::new(record.prompt.clone()),
                self.cfg.sampler.as_ref(),
            );
            let completion = out.map_err(|e| (record.id.clone(), e.to_string()))?;
            let reference = record.reference_answer.as_deref().unwrap_or_default();
            let rouge = rouge_l_text(reference, self.scored_text(&completion.text), self.cfg.tokenization).f;
            Ok(PromptOutcome {
                rouge,
                latency_s: rec.latency_s,
                power_w: rec.p_avg_w.unwrap_or(0.0),
                energy_j: rec.energy_j,
            })
        });
        let mut failures = Vec::new();
        {
            let mut cache = self.cache.lock().unwrap();
            for (key, r) in missing.iter().zip(results) {
                match r {
                    Ok(o) => {
                        cache.insert(*key, o);
                    }
                    Err(f) => failures.push(f),
                }
            }
        }
        if !failures.is_empty() {
            return Err(failures);
        }
        let cache = self.cache.lock().unwrap();
        Ok(pairs.iter().map(|p| cache[p]).collect())
    }

    /// Outcomes of sending every prompt to `tier`, in dataset order.
    pub fn tier_outcomes(&self, tier: Tier) -> Result<Vec<PromptOutcome>, RouteError> {
        let pairs: Vec<(Tier, usize)> = (0..self.ds.len()).map(|i| (tier, i)).collect();
        self.outcomes(&pairs).map_err(|failures| RouteError::TrialAborted {
            t1: f64::NAN,
            t2: f64::NAN,
            total: pairs.len(),
            failures,
        })
    }

    /// Routes every prompt by its annotated thought count and scores the result.
    pub fn evaluate(&self, t1: f64, t2: f64, weights: &ObjectiveWeights) -> Result<TrialRecord, RouteError> {
        if !(t1 < t2) {
            return Err(RouteError::InvalidPolicy(format!("t1 {t1} must be below t2 {t2}")));
        }
        let tiers: Vec<Tier> = self
            .ds
            .iter()
            .map(|r| select_tier(r.thought_count.unwrap_or(0.0), t1, t2))
            .collect();
        let pairs: Vec<(Tier, usize)> = tiers.iter().copied().zip(0..).collect();
        let outcomes = self.outcomes(&pairs).map_err(|failures| RouteError::TrialAborted {
            t1,
            t2,
            total: pairs.len(),
            failures,
        })?;

        let inputs: Vec<ScoreInput> = match self.cfg.score_mode {
            ScoreMode::PerPrompt => outcomes
                .iter()
                .map(|o| ScoreInput {
                    rouge: o.rouge,
                    latency_s: o.latency_s,
                    power_w: o.power_w,
                })
                .collect(),
            ScoreMode::ModelAverage => {
                let mut averages = HashMap::new();
                for t in Tier::ALL {
                    if tiers.contains(&t) {
                        let all = self.tier_outcomes(t)?;
                        let n = all.len() as f64;
                        averages.insert(
                            t,
                            ScoreInput {
                                rouge: all.iter().map(|o| o.rouge).sum::<f64>() / n,
                                latency_s: all.iter().map(|o| o.latency_s).sum::<f64>() / n,
                                power_w: all.iter().map(|o| o.power_w).sum::<f64>() / n,
                            },
                        );
                    }
                }
                tiers.iter().map(|t| averages[t]).collect()
            }
        };
        let score = routing_score(&inputs, weights)?;

        let n = outcomes.len() as f64;
        let mut counts = TierCounts::default();
        tiers.iter().for_each(|t| counts.add(*t));
        let energy: Option<f64> = outcomes.iter().map(|o| o.energy_j).sum();
        Ok(TrialRecord {
            t1,
            t2,
            score,
            n_prompts: outcomes.len(),
            tier_counts: counts,
            mean_rouge: outcomes.iter().map(|o| o.rouge).sum::<f64>() / n,
            mean_latency_s: outcomes.iter().map(|o| o.latency_s).sum::<f64>() / n,
            mean_power_w: outcomes.iter().map(|o| o.power_w).sum::<f64>() / n,
            mean_energy_j: energy.map(|e| e / n),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_synthetic_corpus, SynthConfig, SynthProfile};
    use crate::route::{MockBackend, MockProfile};

    fn mocks(lat: [f64; 3]) -> TierBackends {
        let mk = |name: &str, l: f64| -> Arc<dyn BackendClient> {
            Arc::new(MockBackend::new(MockProfile::new(name, l)).unwrap())
        };
        TierBackends {
            small: mk("s", lat[0]),
            medium: mk("m", lat[1]),
            large: mk("l", lat[2]),
        }
    }

    #[test]
    fn extreme_thresholds_reduce_to_single_tier_baselines() {
        let ds = make_synthetic_corpus(&SynthConfig::new(SynthProfile::Routing, 40, 1)).unwrap();
        let ev = ThresholdEvaluator::new(&ds, mocks([1.0, 2.0, 4.0]), EvaluatorConfig::default()).unwrap();
        let w = ObjectiveWeights::default();
        let all_small = ev.evaluate(1e9, 2e9, &w).unwrap();
        let small = ev.tier_outcomes(Tier::Small).unwrap();
        let mean = small.iter().map(|o| o.latency_s).sum::<f64>() / 40.0;
        assert!((all_small.mean_latency_s - mean).abs() < 1e-12);
        assert_eq!(all_small.tier_counts.small, 40);
        let all_large = ev.evaluate(-2.0, -1.0, &w).unwrap();
        assert_eq!(all_large.tier_counts.large, 40);
        assert!(all_large.mean_latency_s > all_small.mean_latency_s);
        // Power comes from the mock's constant draw.
        assert!((all_small.mean_power_w - crate::route::DEFAULT_POWER_W).abs() < 1e-9);
        let e = all_small.mean_energy_j.unwrap();
        assert!((e - crate::route::DEFAULT_POWER_W * all_small.mean_latency_s).abs() < 1e-6);
    }

    #[test]
    fn cached_pairs_are_not_rerun() {
        let ds = make_synthetic_corpus(&SynthConfig::new(SynthProfile::Routing, 20, 2)).unwrap();
        let b = mocks([1.0, 2.0, 3.0]);
        let ev = ThresholdEvaluator::new(&ds, b.clone(), EvaluatorConfig::default()).unwrap();
        let w = ObjectiveWeights::default();
        let a = ev.evaluate(5.0, 10.0, &w).unwrap();
        let calls: u64 = Tier::ALL.iter().map(|t| b.get(*t).call_count().unwrap()).sum();
        assert_eq!(calls, 20);
        let again = ev.evaluate(5.0, 10.0, &w).unwrap();
        assert_eq!(a, again);
        let calls2: u64 = Tier::ALL.iter().map(|t| b.get(*t).call_count().unwrap()).sum();
        assert_eq!(calls2, 20);
    }

    #[test]
    fn model_average_mode_uses_tier_means() {
        let ds = make_synthetic_corpus(&SynthConfig::new(SynthProfile::Routing, 30, 3)).unwrap();
        let cfg = EvaluatorConfig {
            score_mode: ScoreMode::ModelAverage,
            ..Default::default()
        };
        let ev = ThresholdEvaluator::new(&ds, mocks([1.0, 2.0, 3.0]), cfg).unwrap();
        let w = ObjectiveWeights::default();
        let rec = ev.evaluate(1e9, 2e9, &w).unwrap();
        // Everything on one tier: both modes agree.
        let per_prompt = ThresholdEvaluator::new(&ds, mocks([1.0, 2.0, 3.0]), EvaluatorConfig::default())
            .unwrap()
            .evaluate(1e9, 2e9, &w)
            .unwrap();
        assert!((rec.score - per_prompt.score).abs() < 1e-9);
    }

    #[test]
    fn unannotated_or_failing_inputs_are_reported() {
        let mut ds = make_synthetic_corpus(&SynthConfig::new(SynthProfile::Routing, 10, 4)).unwrap();
        let b = mocks([1.0, 1.0, 1.0]);
        ds.records[3].thought_count = None;
        assert!(matches!(
            ThresholdEvaluator::new(&ds, b.clone(), EvaluatorConfig::default()),
            Err(RouteError::MissingAnnotation(_))
        ));
        ds.records[3].thought_count = Some(1.0);
        let mut p = MockProfile::new("down", 1.0);
        p.failure_rate = 1.0;
        let down: Arc<dyn BackendClient> = Arc::new(MockBackend::new(p).unwrap());
        let ev = ThresholdEvaluator::new(&ds, TierBackends::uniform(down), EvaluatorConfig::default()).unwrap();
        let err = ev.evaluate(1.0, 2.0, &ObjectiveWeights::default()).unwrap_err();
        assert!(matches!(err, RouteError::TrialAborted { total: 10, ref failures, .. } if failures.len() == 10));
    }
}
