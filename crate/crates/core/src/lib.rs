//! Prompt complexity estimation and model routing.
//!
//! The crate covers the whole offline pipeline: dataset handling, thought-count
//! extraction from chain-of-thought transcripts, TF-IDF features, random
//! forests, the difficulty and adversarial classifiers, statistical tests,
//! quality and energy scoring, and threshold-based routing across three model
//! tiers. The HTTP gateway lives in a separate crate on top of this one.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod corpus;
pub mod cot_parse;
pub mod forest;
pub mod route;
pub mod score;
pub mod stats;
pub mod vectorize;

/// FNV-1a hash of a string, used to derive per-prompt seeds that are stable
/// across runs and platforms.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
