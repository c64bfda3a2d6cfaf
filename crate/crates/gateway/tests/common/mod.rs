//! Shared fixtures: small trained models, mock tiers and an in-process server.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use noft_core::classify::{train_pipeline, CalibratedClassifier, FeatureMode, PipelineConfig};
use noft_core::corpus::{make_synthetic_corpus, Dataset, LabelKind, SynthConfig, SynthProfile};
use noft_core::forest::{self, FeatureRule, ForestModel, HyperParams, SearchSpace};
use noft_core::route::{BackendClient, MockBackend, MockProfile, RoutingPolicy, Tier};
use noft_core::vectorize::{self, TokenizerConfig};
use noft_gateway::config::{GatewayConfig, ModelPaths};
use noft_gateway::service::{self, Gateway};
use tokio::sync::oneshot;

pub struct Models {
    pub noft: ForestModel,
    pub adversarial: CalibratedClassifier,
    pub corpus: Dataset,
}

pub fn noft_regressor(ds: &Dataset, n_trees: usize, seed: u64) -> ForestModel {
    let voc = vectorize::fit(&ds.prompts(), &TokenizerConfig::default()).unwrap();
    let x = vectorize::transform_all(&voc, &ds.prompts());
    let y: Vec<f64> = ds.iter().map(|r| r.thought_count.unwrap()).collect();
    let hp = HyperParams {
        n_trees,
        ..HyperParams::default()
    };
    forest::fit_regressor(&x, &y, &hp, seed).unwrap().with_vocabulary(voc)
}

pub fn small_space() -> SearchSpace {
    SearchSpace {
        n_trees: vec![30],
        max_depth: vec![None, Some(12)],
        min_samples_split: vec![2],
        bootstrap: vec![true],
        features_per_split: vec![FeatureRule::Sqrt, FeatureRule::Fraction(0.3)],
    }
}

/// Models trained once per test binary on a synthetic adversarial corpus.
pub fn models() -> &'static Models {
    static M: OnceLock<Models> = OnceLock::new();
    M.get_or_init(|| {
        let corpus = make_synthetic_corpus(&SynthConfig::new(SynthProfile::Adversarial, 240, 3)).unwrap();
        let noft = noft_regressor(&corpus, 20, 3);
        let mut cfg = PipelineConfig::new(LabelKind::Adversarial);
        cfg.features = FeatureMode::Both;
        cfg.search_space = small_space();
        cfg.trials = 2;
        cfg.seed = 3;
        let (adversarial, _) = train_pipeline(&corpus, &cfg, Some(&noft)).unwrap();
        Models {
            noft,
            adversarial,
            corpus,
        }
    })
}

/// Synthetic prompts of one class, in corpus order.
pub fn prompts(adversarial: bool) -> Vec<String> {
    models()
        .corpus
        .iter()
        .filter(|r| r.adversarial == Some(adversarial))
        .map(|r| r.prompt.clone())
        .collect()
}

pub fn mock(profile: MockProfile) -> Arc<MockBackend> {
    Arc::new(MockBackend::new(profile).unwrap())
}

pub type DynTiers = BTreeMap<Tier, Arc<dyn BackendClient>>;

/// Zero-jitter simulated tiers with distinct latencies.
pub fn mock_tiers() -> (DynTiers, BTreeMap<Tier, Arc<MockBackend>>) {
    let mut dynamic: BTreeMap<Tier, Arc<dyn BackendClient>> = BTreeMap::new();
    let mut concrete = BTreeMap::new();
    for (t, lat) in [(Tier::Small, 0.5), (Tier::Medium, 1.0), (Tier::Large, 2.0)] {
        let mut p = MockProfile::new(t.as_str(), lat);
        p.latency_sigma = 0.0;
        let m = mock(p);
        dynamic.insert(t, m.clone());
        concrete.insert(t, m);
    }
    (dynamic, concrete)
}

pub fn config() -> GatewayConfig {
    GatewayConfig {
        listen: "127.0.0.1:0".into(),
        request_timeout_s: 5.0,
        max_in_flight: 64,
        per_tier_concurrency: 16,
        models: ModelPaths {
            noft: "<memory>".into(),
            adversarial: "<memory>".into(),
            difficulty: None,
        },
        policy: None,
        policy_file: None,
    }
}

pub fn gateway(policy: RoutingPolicy, backends: BTreeMap<Tier, Arc<dyn BackendClient>>, cfg: &GatewayConfig) -> Arc<Gateway> {
    let m = models();
    Arc::new(Gateway::from_parts(m.noft.clone(), m.adversarial.clone(), None, policy, backends, cfg).unwrap())
}

/// A running server; dropping it shuts the server down.
pub struct Server {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
    }
}

pub async fn spawn(gw: Arc<Gateway>) -> Server {
    let (stop, rx) = oneshot::channel::<()>();
    let (bound_tx, bound_rx) = oneshot::channel();
    tokio::spawn(async move {
        service::serve(
            gw,
            "127.0.0.1:0",
            move |a| {
                let _ = bound_tx.send(a);
                Ok(())
            },
            async {
                let _ = rx.await;
            },
        )
        .await
        .unwrap();
    });
    Server {
        addr: bound_rx.await.unwrap(),
        stop: Some(stop),
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

/// Blocking HTTP call returning status and parsed JSON body.
pub fn http(method: &str, addr: SocketAddr, path: &str, body: Option<&str>) -> (u16, serde_json::Value) {
    let url = format!("http://{addr}{path}");
    let mut resp = match (method, body) {
        ("GET", _) => agent().get(&url).call().unwrap(),
        ("POST", Some(b)) => agent()
            .post(&url)
            .header("content-type", "application/json")
            .send(b)
            .unwrap(),
        _ => panic!("unsupported request {method} {path}"),
    };
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(serde_json::Value::String(text)))
}

pub fn prompt_body(prompt: &str) -> String {
    serde_json::json!({ "prompt": prompt }).to_string()
}
