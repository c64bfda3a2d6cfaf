//! Response quality and cost: ROUGE-L, latency and energy.

mod energy;
mod rouge;

pub use energy::{
    energy_joules, measure, Clock, ConstantSampler, EnergyRecord, MonotonicClock, PowerMonitor,
    PowerSampler, ProfileSampler, ReplaySampler, VirtualClock,
};
pub use rouge::{lcs_len, rouge_l, rouge_l_text, tokens, RougeResult, Tokenization, MAX_LCS_TOKENS};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("power sampler failed: {0}")]
    Sampler(String),
    #[error("replay file line {line}: {message}")]
    ReplayParse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
