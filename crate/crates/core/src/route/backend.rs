//! Model backends: an OpenAI-compatible HTTP client and a deterministic mock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{canonical_answer, complexity_hint};
use crate::stable_hash;

/// Average board power used when a mock profile does not set one.
pub const DEFAULT_POWER_W: f64 = 63.9114;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    /// Distinguishes repeated samples of the same prompt.
    pub sample_index: u32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            sample_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Set by simulated backends that do not actually take this long.
    pub simulated_latency_s: Option<f64>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("backend {backend} unavailable: {message}")]
    Unavailable { backend: String, message: String },
    #[error("backend {backend} timed out after {timeout_s} s")]
    Timeout { backend: String, timeout_s: f64 },
    #[error("backend {backend} returned HTTP {status}")]
    Status { backend: String, status: u16 },
    #[error("backend {backend} sent an unusable response: {message}")]
    BadResponse { backend: String, message: String },
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
}

/// A model that turns prompts into text.
pub trait BackendClient: Send + Sync {
    fn name(&self) -> &str;

    fn invoke(&self, req: &CompletionRequest) -> Result<Completion, BackendError>;

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        self.invoke(req).map(|c| c.text)
    }

    /// Known average power draw, if the backend reports one.
    fn power_w(&self) -> Option<f64> {
        None
    }

    /// True when latencies are reported rather than spent.
    fn is_simulated(&self) -> bool {
        false
    }

    /// Number of `invoke` calls served so far, if tracked.
    fn call_count(&self) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Mock(MockProfile),
    Http(HttpSpec),
}

pub fn build_backend(spec: &BackendSpec) -> Result<Box<dyn BackendClient>, BackendError> {
    Ok(match spec {
        BackendSpec::Mock(p) => Box::new(MockBackend::new(p.clone())?),
        BackendSpec::Http(h) => Box::new(HttpBackend::new(h.clone())?),
    })
}

fn default_timeout() -> f64 {
    60.0
}

fn default_temperature() -> f64 {
    0.6
}

/// OpenAI-compatible chat completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSpec {
    /// Full URL of the chat completions route.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub api_key: Option<String>,
    /// Reported average power, when known out of band.
    #[serde(default)]
    pub power_w: Option<f64>,
}

pub struct HttpBackend {
    spec: HttpSpec,
    agent: ureq::Agent,
    calls: AtomicU64,
}

impl HttpBackend {
    pub fn new(spec: HttpSpec) -> Result<Self, BackendError> {
        if !(spec.timeout_s > 0.0) {
            return Err(BackendError::InvalidSpec("timeout_s must be positive".into()));
        }
        if !(spec.endpoint.starts_with("http://") || spec.endpoint.starts_with("https://")) {
            return Err(BackendError::InvalidSpec(format!(
                "endpoint {:?} is not an http(s) URL",
                spec.endpoint
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(spec.timeout_s)))
            .build()
            .into();
        Ok(Self {
            spec,
            agent,
            calls: AtomicU64::new(0),
        })
    }
}

impl BackendClient for HttpBackend {
    fn name(&self) -> &str {
        &self.spec.model
    }

    fn invoke(&self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let backend = self.spec.model.clone();
        let mut body = serde_json::json!({
            "model": self.spec.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": self.spec.temperature,
            "seed": req.sample_index,
        });
        if let Some(m) = self.spec.max_tokens {
            body["max_tokens"] = m.into();
        }
        let mut call = self
            .agent
            .post(&self.spec.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.spec.api_key {
            call = call.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send(body.to_string()).map_err(|e| match e {
            ureq::Error::StatusCode(status) => BackendError::Status {
                backend: backend.clone(),
                status,
            },
            ureq::Error::Timeout(_) => BackendError::Timeout {
                backend: backend.clone(),
                timeout_s: self.spec.timeout_s,
            },
            other => BackendError::Unavailable {
                backend: backend.clone(),
                message: other.to_string(),
            },
        })?;
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError::BadResponse {
            backend: backend.clone(),
            message: e.to_string(),
        })?;
        let json: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::BadResponse {
                backend: backend.clone(),
                message: e.to_string(),
            })?;
        let content = json["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::BadResponse {
                backend,
                message: "missing choices[0].message.content".into(),
            })?;
        Ok(Completion {
            text: content.to_string(),
            simulated_latency_s: None,
        })
    }

    fn power_w(&self) -> Option<f64> {
        self.spec.power_w
    }

    fn call_count(&self) -> Option<u64> {
        Some(self.calls.load(Ordering::Relaxed))
    }
}

/// Shape of the reasoning text a mock emits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum TranscriptMode {
    /// Numbered `Step k:` lines.
    #[default]
    Steps,
    /// Sentences opening with transition words, no numbering.
    Keywords,
    /// The same text for every request.
    Fixed { text: String },
}

fn default_mock_name() -> String {
    "mock".into()
}
fn default_sigma() -> f64 {
    0.25
}
fn default_shift() -> f64 {
    0.5
}
fn default_quality() -> f64 {
    1.0
}
fn default_power() -> f64 {
    DEFAULT_POWER_W
}
fn default_one() -> f64 {
    1.0
}

/// Deterministic stand-in for a model tier.
///
/// Latency is a shifted lognormal: `shift_fraction * mean` plus a lognormal
/// part whose mean is the remainder, all times `latency_scale`. The step count
/// of the transcript follows the prompt's complexity vocabulary, and the
/// final answer keeps each reference token with probability `quality`.
/// Every random draw is keyed on `(seed, prompt, sample_index)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockProfile {
    #[serde(default = "default_mock_name")]
    pub name: String,
    pub latency_mean_s: f64,
    #[serde(default = "default_sigma")]
    pub latency_sigma: f64,
    #[serde(default = "default_shift")]
    pub shift_fraction: f64,
    #[serde(default = "default_one")]
    pub latency_scale: f64,
    #[serde(default = "default_quality")]
    pub quality: f64,
    #[serde(default = "default_power")]
    pub power_w: f64,
    #[serde(default)]
    pub failure_rate: f64,
    /// Sleep for the latency instead of reporting it.
    #[serde(default)]
    pub realtime: bool,
    #[serde(default)]
    pub transcript: TranscriptMode,
    /// Standard deviation of the step-count noise between samples.
    #[serde(default = "default_one")]
    pub step_jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MockProfile {
    pub fn new(name: impl Into<String>, latency_mean_s: f64) -> Self {
        Self {
            name: name.into(),
            latency_mean_s,
            latency_sigma: default_sigma(),
            shift_fraction: default_shift(),
            latency_scale: 1.0,
            quality: 1.0,
            power_w: DEFAULT_POWER_W,
            failure_rate: 0.0,
            realtime: false,
            transcript: TranscriptMode::Steps,
            step_jitter: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidSpec(m));
        if !(self.latency_mean_s >= 0.0 && self.latency_mean_s.is_finite()) {
            return bad(format!("latency_mean_s {} must be finite and >= 0", self.latency_mean_s));
        }
        if !(self.latency_sigma >= 0.0) || !(0.0..=1.0).contains(&self.shift_fraction) {
            return bad("latency_sigma must be >= 0 and shift_fraction in [0, 1]".into());
        }
        if !(self.latency_scale > 0.0) {
            return bad("latency_scale must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.quality) || !(0.0..=1.0).contains(&self.failure_rate) {
            return bad("quality and failure_rate must lie in [0, 1]".into());
        }
        if !(self.power_w >= 0.0) || !(self.step_jitter >= 0.0) {
            return bad("power_w and step_jitter must be >= 0".into());
        }
        Ok(())
    }

    fn rng(&self, salt: u64, req: &CompletionRequest) -> ChaCha8Rng {
        let key = self.seed
            ^ stable_hash(&req.prompt)
            ^ (u64::from(req.sample_index)).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ salt;
        ChaCha8Rng::seed_from_u64(key)
    }

    /// Latency before `latency_scale` is applied.
    fn raw_latency(&self, req: &CompletionRequest) -> f64 {
        let shift = self.shift_fraction * self.latency_mean_s;
        let body_mean = self.latency_mean_s - shift;
        if body_mean <= 0.0 || self.latency_sigma == 0.0 {
            return self.latency_mean_s;
        }
        let mut rng = self.rng(0x6c61_7465, req);
        let z: f64 = StandardNormal.sample(&mut rng);
        let mu = body_mean.ln() - self.latency_sigma * self.latency_sigma / 2.0;
        shift + (mu + self.latency_sigma * z).exp()
    }

    pub fn latency(&self, req: &CompletionRequest) -> f64 {
        self.raw_latency(req) * self.latency_scale
    }

    fn step_count(&self, req: &CompletionRequest) -> usize {
        let mut rng = self.rng(0x7374_6570, req);
        let base = complexity_hint(&req.prompt)
            .unwrap_or_else(|| 1.0 + (stable_hash(&req.prompt) % 5) as f64);
        let noise = if self.step_jitter > 0.0 {
            Normal::new(0.0, self.step_jitter).unwrap().sample(&mut rng)
        } else {
            0.0
        };
        (base + noise).round().max(1.0) as usize
    }

    fn answer(&self, req: &CompletionRequest) -> String {
        let mut rng = self.rng(0x616e_7377, req);
        canonical_answer(&req.prompt)
            .split(' ')
            .map(|tok| {
                if rng.random_bool(self.quality) {
                    tok
                } else {
                    "unclear"
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn transcript(&self, req: &CompletionRequest) -> String {
        const PHRASES: [&str; 6] = [
            "restate the quantities involved",
            "apply the relevant rule",
            "simplify the intermediate result",
            "check the partial answer",
            "combine the pieces",
            "verify against the question",
        ];
        let n = self.step_count(req);
        let answer = self.answer(req);
        match &self.transcript {
            TranscriptMode::Fixed { text } => text.clone(),
            TranscriptMode::Steps => {
                let mut out = String::new();
                for k in 1..=n {
                    out.push_str(&format!("Step {k}: {}.\n", PHRASES[(k - 1) % PHRASES.len()]));
                }
                out.push_str(&format!("Answer: {answer}"));
                out
            }
            TranscriptMode::Keywords => {
                let mut parts = Vec::with_capacity(n);
                for k in 0..n {
                    let lead = match k {
                        0 => "First",
                        _ if k + 1 == n => "Finally",
                        _ => "Next",
                    };
                    parts.push(format!("{lead}, {}.", PHRASES[k % PHRASES.len()]));
                }
                format!("{} The result: {answer}", parts.join(" "))
            }
        }
    }
}

pub struct MockBackend {
    profile: MockProfile,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(profile: MockProfile) -> Result<Self, BackendError> {
        profile.validate()?;
        Ok(Self {
            profile,
            calls: AtomicU64::new(0),
        })
    }

    pub fn profile(&self) -> &MockProfile {
        &self.profile
    }
}

impl BackendClient for MockBackend {
    fn name(&self) -> &str {
        &self.profile.name
    }

    fn invoke(&self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let p = &self.profile;
        if p.failure_rate > 0.0 && p.rng(0x6661_696c, req).random_bool(p.failure_rate) {
            return Err(BackendError::Unavailable {
                backend: p.name.clone(),
                message: "injected failure".into(),
            });
        }
        let latency = p.latency(req);
        let text = p.transcript(req);
        if p.realtime {
            std::thread::sleep(Duration::from_secs_f64(latency));
            Ok(Completion {
                text,
                simulated_latency_s: None,
            })
        } else {
            Ok(Completion {
                text,
                simulated_latency_s: Some(latency),
            })
        }
    }

    fn power_w(&self) -> Option<f64> {
        Some(self.profile.power_w)
    }

    fn is_simulated(&self) -> bool {
        !self.profile.realtime
    }

    fn call_count(&self) -> Option<u64> {
        Some(self.calls.load(Ordering::Relaxed))
    }
}

/// Rescales each profile so its mean latency over `prompts` (first sample)
/// equals the matching target exactly.
pub fn calibrate_mocks(
    profiles: &mut [MockProfile],
    targets: &[f64],
    prompts: &[&str],
) -> Result<(), BackendError> {
    if profiles.len() != targets.len() {
        return Err(BackendError::InvalidSpec(format!(
            "{} profiles but {} targets",
            profiles.len(),
            targets.len()
        )));
    }
    if prompts.is_empty() {
        return Err(BackendError::InvalidSpec("calibration needs prompts".into()));
    }
    for (p, &target) in profiles.iter_mut().zip(targets) {
        if !(target > 0.0) {
            return Err(BackendError::InvalidSpec(format!("target latency {target} must be positive")));
        }
        let mean = prompts
            .iter()
            .map(|q| p.raw_latency(&CompletionRequest::new(*q)))
            .sum::<f64>()
            / prompts.len() as f64;
        if !(mean > 0.0) {
            return Err(BackendError::InvalidSpec(format!(
                "profile {} has zero latency and cannot be scaled",
                p.name
            )));
        }
        p.latency_scale = target / mean;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cot_parse::{parse_thought_count, AnnotationConfig, ParseStage};

    #[test]
    fn mock_is_deterministic_per_prompt_and_sample() {
        let m = MockBackend::new(MockProfile::new("s", 2.0)).unwrap();
        let a = m.invoke(&CompletionRequest::new("find the sum of 3 and 4")).unwrap();
        let b = m.invoke(&CompletionRequest::new("find the sum of 3 and 4")).unwrap();
        assert_eq!(a, b);
        let c = m
            .invoke(&CompletionRequest {
                prompt: "find the sum of 3 and 4".into(),
                sample_index: 1,
            })
            .unwrap();
        assert_ne!(a.simulated_latency_s, c.simulated_latency_s);
        assert_eq!(m.call_count(), Some(3));
    }

    #[test]
    fn transcripts_parse_to_their_step_count() {
        let mut p = MockProfile::new("s", 1.0);
        p.step_jitter = 0.0;
        let req = CompletionRequest::new("prove the theorem by induction on 3 and 5");
        let cfg = AnnotationConfig::default();
        let steps = parse_thought_count(&p.transcript(&req), &cfg);
        assert_eq!((steps.stage, steps.chosen_count), (ParseStage::Explicit, 42));
        p.transcript = TranscriptMode::Keywords;
        let kw = parse_thought_count(&p.transcript(&req), &cfg);
        assert_eq!((kw.stage, kw.chosen_count), (ParseStage::Keyword, 42));
    }

    #[test]
    fn zero_sigma_gives_exact_latency() {
        let mut p = MockProfile::new("fixed", 0.1);
        p.latency_sigma = 0.0;
        for i in 0..5 {
            assert_eq!(p.latency(&CompletionRequest::new(format!("q{i}"))), 0.1);
        }
    }

    #[test]
    fn calibration_hits_targets_exactly() {
        let prompts: Vec<String> = (0..50).map(|i| format!("prompt number {i}")).collect();
        let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
        let mut ps = vec![MockProfile::new("a", 1.0), MockProfile::new("b", 1.0)];
        ps[1].seed = 7;
        calibrate_mocks(&mut ps, &[6.5125, 12.3550], &refs).unwrap();
        for (p, t) in ps.iter().zip([6.5125, 12.3550]) {
            let mean = refs.iter().map(|q| p.latency(&CompletionRequest::new(*q))).sum::<f64>() / 50.0;
            assert!((mean - t).abs() < 1e-9);
        }
    }

    #[test]
    fn failures_and_validation() {
        let mut p = MockProfile::new("flaky", 1.0);
        p.failure_rate = 1.0;
        let m = MockBackend::new(p).unwrap();
        assert!(matches!(
            m.invoke(&CompletionRequest::new("x")),
            Err(BackendError::Unavailable { .. })
        ));
        let mut bad = MockProfile::new("bad", 1.0);
        bad.quality = 2.0;
        assert!(MockBackend::new(bad).is_err());
        assert!(HttpBackend::new(HttpSpec {
            endpoint: "ftp://x".into(),
            model: "m".into(),
            timeout_s: 1.0,
            temperature: 0.0,
            max_tokens: None,
            api_key: None,
            power_w: None,
        })
        .is_err());
    }

    #[test]
    fn unreachable_http_backend_reports_unavailable() {
        let b = HttpBackend::new(HttpSpec {
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            model: "m".into(),
            timeout_s: 2.0,
            temperature: 0.0,
            max_tokens: None,
            api_key: None,
            power_w: None,
        })
        .unwrap();
        let err = b.invoke(&CompletionRequest::new("hi")).unwrap_err();
        assert!(matches!(
            err,
            BackendError::Unavailable { .. } | BackendError::Timeout { .. }
        ));
    }

    #[test]
    fn spec_json_shapes() {
        let s: BackendSpec = serde_json::from_str(
            r#"{"kind":"mock","latency_mean_s":0.1,"latency_sigma":0,"realtime":true,
                "transcript":{"mode":"fixed","text":"Step 1: a"}}"#,
        )
        .unwrap();
        let BackendSpec::Mock(p) = &s else { panic!() };
        assert!(p.realtime);
        assert_eq!(p.transcript, TranscriptMode::Fixed { text: "Step 1: a".into() });
        let h: BackendSpec = serde_json::from_str(
            r#"{"kind":"http","endpoint":"http://localhost:8000/v1/chat/completions","model":"r1-1.5b"}"#,
        )
        .unwrap();
        assert!(matches!(h, BackendSpec::Http(HttpSpec { timeout_s, .. }) if timeout_s == 60.0));
    }
}
