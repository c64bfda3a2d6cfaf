//! Request handling: analysis, the adversarial gate, tier dispatch and metrics.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use noft_core::classify::{predict_noft, CalibratedClassifier, ClassifyError};
use noft_core::forest::{self, ForestError, ForestModel, ModelKind};
use noft_core::route::{
    build_backend, timed_invoke, AdversarialAction, BackendClient, BackendError, CompletionRequest, RoutingPolicy,
    Tier,
};
use noft_core::score::{ConstantSampler, EnergyRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::config::{ConfigError, GatewayConfig};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load model {path}: {message}")]
    Model { path: String, message: String },
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("inference failed: {0}")]
    Inference(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl From<ClassifyError> for GatewayError {
    fn from(e: ClassifyError) -> Self {
        GatewayError::Inference(e.to_string())
    }
}

impl From<ForestError> for GatewayError {
    fn from(e: ForestError) -> Self {
        GatewayError::Inference(e.to_string())
    }
}

/// Inference-only view of a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub predicted_noft: f64,
    pub adversarial_probability: f64,
    pub difficulty: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Routed,
    RejectedAdversarial,
}

/// Everything decided and measured for one routed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub predicted_noft: f64,
    pub adversarial_probability: f64,
    pub difficulty: Option<String>,
    pub tier: Option<Tier>,
    pub action: Action,
    /// Set when the adversarial threshold fired under the `flag` action.
    pub flagged: bool,
    pub timing: EnergyRecord,
    pub backend: Option<String>,
    pub backend_response: Option<String>,
    pub error: Option<String>,
    pub error_kind: Option<ErrorKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Timeout,
    Backend,
}

/// Counters over successfully handled requests; validation failures are
/// not counted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub analyze_requests: u64,
    pub rejections: u64,
    pub flagged: u64,
    pub backend_errors: u64,
    pub tier_counts: BTreeMap<Tier, u64>,
    pub latency_s: f64,
    pub energy_j: f64,
}

/// One lock guards every counter so a snapshot is always consistent.
#[derive(Debug, Default)]
pub struct Metrics {
    inner: Mutex<MetricsSnapshot>,
}

impl Metrics {
    fn record(&self, d: &RouteDecision) {
        let mut m = self.inner.lock().expect("metrics lock");
        m.requests += 1;
        match d.action {
            Action::RejectedAdversarial => m.rejections += 1,
            Action::Routed => {
                if let Some(t) = d.tier {
                    *m.tier_counts.entry(t).or_default() += 1;
                }
                m.latency_s += d.timing.latency_s;
                m.energy_j += d.timing.energy_j.unwrap_or(0.0);
            }
        }
        m.flagged += u64::from(d.flagged);
        m.backend_errors += u64::from(d.error.is_some());
    }

    fn record_analyze(&self) {
        self.inner.lock().expect("metrics lock").analyze_requests += 1;
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        self.inner.lock().expect("metrics lock").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub path: String,
    pub sha256: String,
}

/// Loaded models, backends and counters shared by all requests.
pub struct Gateway {
    noft: ForestModel,
    adversarial: CalibratedClassifier,
    difficulty: Option<CalibratedClassifier>,
    policy: RoutingPolicy,
    backends: BTreeMap<Tier, Arc<dyn BackendClient>>,
    tier_limits: BTreeMap<Tier, Arc<Semaphore>>,
    in_flight: Arc<Semaphore>,
    timeout: Duration,
    models: BTreeMap<String, ModelInfo>,
    metrics: Metrics,
}

fn read_model(path: &Path) -> Result<(Vec<u8>, ModelInfo), GatewayError> {
    let bytes = std::fs::read(path).map_err(|e| GatewayError::Model {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let info = ModelInfo {
        path: path.display().to_string(),
        sha256: hex(&Sha256::digest(&bytes)),
    };
    Ok((bytes, info))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn model_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Model {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl Gateway {
    /// Loads every model and builds every backend named by `cfg`.
    pub fn from_config(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let mut models = BTreeMap::new();
        let (bytes, info) = read_model(&cfg.models.noft)?;
        let (noft, _) = forest::from_bytes(&bytes).map_err(|e| model_err(&cfg.models.noft, e))?;
        if noft.kind != ModelKind::Regressor || noft.vocabulary.is_none() {
            return Err(model_err(&cfg.models.noft, "NofT model must be a regressor with a vocabulary"));
        }
        models.insert("noft".to_string(), info);
        let (bytes, info) = read_model(&cfg.models.adversarial)?;
        let adversarial =
            CalibratedClassifier::from_bytes(&bytes).map_err(|e| model_err(&cfg.models.adversarial, e))?;
        if adversarial.positive_class.is_none() {
            return Err(model_err(&cfg.models.adversarial, "adversarial model must be a two-class classifier"));
        }
        models.insert("adversarial".to_string(), info);
        let difficulty = match &cfg.models.difficulty {
            Some(p) => {
                let (bytes, info) = read_model(p)?;
                models.insert("difficulty".to_string(), info);
                Some(CalibratedClassifier::from_bytes(&bytes).map_err(|e| model_err(p, e))?)
            }
            None => None,
        };
        let policy = cfg.policy()?.clone();
        let mut backends = BTreeMap::new();
        for (tier, spec) in &policy.tiers {
            backends.insert(*tier, Arc::<dyn BackendClient>::from(build_backend(spec)?));
        }
        Ok(Self::assemble(noft, adversarial, difficulty, policy, backends, models, cfg))
    }

    /// Builds a gateway from in-memory parts.
    pub fn from_parts(
        noft: ForestModel,
        adversarial: CalibratedClassifier,
        difficulty: Option<CalibratedClassifier>,
        policy: RoutingPolicy,
        backends: BTreeMap<Tier, Arc<dyn BackendClient>>,
        cfg: &GatewayConfig,
    ) -> Result<Self, GatewayError> {
        policy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(t) = Tier::ALL.into_iter().find(|t| !backends.contains_key(t)) {
            return Err(ConfigError::Invalid(format!("no backend for tier {t}")).into());
        }
        let mut models = BTreeMap::new();
        let mut digest = |name: &str, bytes: Vec<u8>| {
            models.insert(
                name.to_string(),
                ModelInfo {
                    path: "<memory>".into(),
                    sha256: hex(&Sha256::digest(&bytes)),
                },
            );
        };
        digest("noft", forest::to_bytes(&noft, &[]));
        digest("adversarial", adversarial.to_bytes());
        if let Some(d) = &difficulty {
            digest("difficulty", d.to_bytes());
        }
        Ok(Self::assemble(noft, adversarial, difficulty, policy, backends, models, cfg))
    }

    fn assemble(
        noft: ForestModel,
        adversarial: CalibratedClassifier,
        difficulty: Option<CalibratedClassifier>,
        policy: RoutingPolicy,
        backends: BTreeMap<Tier, Arc<dyn BackendClient>>,
        models: BTreeMap<String, ModelInfo>,
        cfg: &GatewayConfig,
    ) -> Self {
        let tier_limits = backends
            .keys()
            .map(|t| (*t, Arc::new(Semaphore::new(cfg.per_tier_concurrency))))
            .collect();
        Self {
            noft,
            adversarial,
            difficulty,
            policy,
            backends,
            tier_limits,
            in_flight: Arc::new(Semaphore::new(cfg.max_in_flight)),
            timeout: Duration::from_secs_f64(cfg.request_timeout_s),
            models,
            metrics: Metrics::default(),
        }
    }

    pub fn policy(&self) -> &RoutingPolicy {
        &self.policy
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }

    pub fn models(&self) -> &BTreeMap<String, ModelInfo> {
        &self.models
    }

    /// Calls served by each tier's backend, when the backend counts them.
    pub fn backend_calls(&self) -> BTreeMap<Tier, Option<u64>> {
        self.backends.iter().map(|(t, b)| (*t, b.call_count())).collect()
    }

    /// Pure inference: no backend traffic.
    pub fn analyze(&self, prompt: &str) -> Result<Analysis, GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let noft = predict_noft(&self.noft, prompt)?;
        let adv = self.adversarial.predict(prompt, Some(noft))?;
        let difficulty = match &self.difficulty {
            Some(clf) => Some(clf.predict(prompt, Some(noft))?.label),
            None => None,
        };
        Ok(Analysis {
            predicted_noft: noft,
            adversarial_probability: adv.positive_score.expect("two-class model"),
            difficulty,
        })
    }

    /// Analyses, gates, and dispatches one prompt. Backend failures are
    /// reported inside the decision.
    pub async fn route(&self, prompt: &str) -> Result<RouteDecision, GatewayError> {
        let _slot = self.in_flight.acquire().await.expect("semaphore open");
        let a = self.analyze(prompt)?;
        let over = a.adversarial_probability >= self.policy.adversarial_threshold;
        let mut d = RouteDecision {
            predicted_noft: a.predicted_noft,
            adversarial_probability: a.adversarial_probability,
            difficulty: a.difficulty,
            tier: None,
            action: Action::Routed,
            flagged: false,
            timing: EnergyRecord::new(0.0, 0.0, Some(0.0)),
            backend: None,
            backend_response: None,
            error: None,
            error_kind: None,
        };
        if over && self.policy.adversarial_action == AdversarialAction::Reject {
            d.action = Action::RejectedAdversarial;
            self.metrics.record(&d);
            return Ok(d);
        }
        d.flagged = over;
        let tier = self.policy.tier_for(a.predicted_noft);
        d.tier = Some(tier);
        let backend = Arc::clone(&self.backends[&tier]);
        d.backend = Some(backend.name().to_string());
        let _tier_slot = self.tier_limits[&tier].acquire().await.expect("semaphore open");
        let req = CompletionRequest::new(prompt);
        let call = tokio::task::spawn_blocking(move || timed_invoke(backend.as_ref(), &req, &ConstantSampler(0.0)));
        match tokio::time::timeout(self.timeout, call).await {
            Ok(Ok((result, timing))) => {
                d.timing = timing;
                match result {
                    Ok(c) => d.backend_response = Some(c.text),
                    Err(e) => {
                        d.error_kind = Some(match e {
                            BackendError::Timeout { .. } => ErrorKind::Timeout,
                            _ => ErrorKind::Backend,
                        });
                        d.error = Some(e.to_string());
                    }
                }
            }
            Ok(Err(join)) => {
                d.error_kind = Some(ErrorKind::Backend);
                d.error = Some(format!("backend task failed: {join}"));
            }
            Err(_) => {
                let secs = self.timeout.as_secs_f64();
                d.timing = EnergyRecord::new(0.0, secs, None);
                d.error_kind = Some(ErrorKind::Timeout);
                d.error = Some(
                    BackendError::Timeout {
                        backend: d.backend.clone().unwrap_or_default(),
                        timeout_s: secs,
                    }
                    .to_string(),
                );
            }
        }
        self.metrics.record(&d);
        Ok(d)
    }
}

#[derive(Debug, Deserialize)]
struct PromptBody {
    prompt: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    kind: &'static str,
    message: String,
}

fn error_response(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Response {
    (
        status,
        Json(serde_json::json!({ "error": ErrorBody { kind, message: message.into() } })),
    )
        .into_response()
}

fn parse_prompt(body: &Bytes) -> Result<String, Box<Response>> {
    serde_json::from_slice::<PromptBody>(body)
        .map(|b| b.prompt)
        .map_err(|e| Box::new(error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string())))
}

fn gateway_error(e: GatewayError) -> Response {
    match e {
        GatewayError::EmptyPrompt => error_response(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string()),
        other => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
    }
}

async fn route_handler(State(gw): State<Arc<Gateway>>, body: Bytes) -> Response {
    let prompt = match parse_prompt(&body) {
        Ok(p) => p,
        Err(r) => return *r,
    };
    match gw.route(&prompt).await {
        Ok(d) => {
            let status = match d.error_kind {
                None => StatusCode::OK,
                Some(ErrorKind::Timeout) => StatusCode::GATEWAY_TIMEOUT,
                Some(ErrorKind::Backend) => StatusCode::BAD_GATEWAY,
            };
            (status, Json(d)).into_response()
        }
        Err(e) => gateway_error(e),
    }
}

async fn analyze_handler(State(gw): State<Arc<Gateway>>, body: Bytes) -> Response {
    let prompt = match parse_prompt(&body) {
        Ok(p) => p,
        Err(r) => return *r,
    };
    match gw.analyze(&prompt) {
        Ok(a) => {
            gw.metrics.record_analyze();
            Json(a).into_response()
        }
        Err(e) => gateway_error(e),
    }
}

async fn health_handler(State(gw): State<Arc<Gateway>>) -> Response {
    Json(serde_json::json!({
        "status": "ok",
        "format_version": forest::FORMAT_VERSION,
        "models": gw.models,
    }))
    .into_response()
}

async fn metrics_handler(State(gw): State<Arc<Gateway>>) -> Response {
    Json(serde_json::json!({
        "metrics": gw.metrics(),
        "backend_calls": gw.backend_calls(),
    }))
    .into_response()
}

/// HTTP routes over a shared gateway.
pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/v1/route", post(route_handler))
        .route("/v1/analyze", post(analyze_handler))
        .route("/healthz", get(health_handler))
        .route("/v1/metrics", get(metrics_handler))
        .with_state(gw)
}

/// Serves until `shutdown` resolves. Calls `on_bound` with the bound address
/// before accepting connections.
pub async fn serve(
    gw: Arc<Gateway>,
    listen: &str,
    on_bound: impl FnOnce(std::net::SocketAddr) -> std::io::Result<()>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    log::info!("listening on {addr}");
    on_bound(addr)?;
    axum::serve(listener, router(gw)).with_graceful_shutdown(shutdown).await
}
