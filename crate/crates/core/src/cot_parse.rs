//! Counting reasoning steps in chain-of-thought transcripts.
//!
//! Two stages: an explicit stage that trusts a stated `Thought Count: n` line
//! or a run of numbered step markers, and a fallback that counts sentences
//! opening with a transition word ("first", "next", "finally", ...).
//! [`annotate_dataset`] queries a backend repeatedly per prompt and stores the
//! mean count as the record's `thought_count`.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::route::{BackendClient, CompletionRequest};

/// Instruction prepended to every annotation query.
pub const DEFAULT_INVOKED_PROMPT: &str = "Please provide a detailed, step-by-step solution to the following problem. Number each step sequentially.";

pub const DEFAULT_TRANSITION_KEYWORDS: [&str; 9] = [
    "first",
    "second",
    "third",
    "next",
    "then",
    "finally",
    "lastly",
    "afterwards",
    "subsequently",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStage {
    Explicit,
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedThoughts {
    pub explicit_count: Option<usize>,
    pub keyword_count: usize,
    pub chosen_count: usize,
    pub stage: ParseStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    pub repeats: usize,
    pub transition_keywords: Vec<String>,
    /// Either contains `{prompt}` or is prepended to the prompt.
    pub invoked_prompt: String,
    /// Upper bound on concurrent backend calls.
    pub max_in_flight: usize,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            repeats: 2,
            transition_keywords: DEFAULT_TRANSITION_KEYWORDS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            invoked_prompt: DEFAULT_INVOKED_PROMPT.to_string(),
            max_in_flight: 4,
        }
    }
}

impl AnnotationConfig {
    pub fn validate(&self) -> Result<(), AnnotateError> {
        if self.repeats == 0 {
            return Err(AnnotateError::Config("repeats must be at least 1".into()));
        }
        if self.transition_keywords.iter().all(|k| normalize_keyword(k).is_empty()) {
            return Err(AnnotateError::Config(
                "transition keyword set must not be empty".into(),
            ));
        }
        Ok(())
    }

    /// The text actually sent to the backend for `prompt`.
    pub fn build_query(&self, prompt: &str) -> String {
        if self.invoked_prompt.contains("{prompt}") {
            self.invoked_prompt.replace("{prompt}", prompt)
        } else {
            format!("{}\n\n{}", self.invoked_prompt, prompt)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("invalid annotation config: {0}")]
    Config(String),
    #[error("{failed} of {total} records failed to annotate")]
    TooManyFailures { failed: usize, total: usize },
}

fn stated_count_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[\s*#>_-]*thought\s+count[\s*_]*[:=][\s*_]*(\d+)").unwrap()
    })
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[\s*#>_-]*(?:step\s+(\d+)[\s*_]*[:.)]|(\d+)\.(?:\s|$))").unwrap()
    })
}

/// Step count from explicit structure in the transcript, if any.
///
/// A stated `Thought Count: n` line wins over markers. Otherwise the distinct
/// labels of `Step k:` / `k.` markers at line starts are counted, provided the
/// numbering starts at 1. Gaps are tolerated: labels {1, 2, 5} count as 3.
pub fn count_explicit_steps(transcript: &str) -> Option<usize> {
    if let Some(caps) = stated_count_re().captures_iter(transcript).last() {
        if let Ok(n) = caps[1].parse::<usize>() {
            return Some(n);
        }
    }
    let labels: BTreeSet<u64> = marker_re()
        .captures_iter(transcript)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .filter_map(|m| m.as_str().parse().ok())
        .collect();
    if labels.contains(&1) {
        Some(labels.len())
    } else {
        None
    }
}

fn normalize_keyword(k: &str) -> String {
    k.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Counts sentences whose first word(s) match a transition keyword.
///
/// Sentences split on `.`, `!`, `?` and newlines. Leading whitespace and
/// punctuation are stripped before matching; each sentence counts at most once.
pub fn count_transition_keywords<S: AsRef<str>>(transcript: &str, keywords: &[S]) -> usize {
    let keywords: Vec<String> = keywords
        .iter()
        .map(|k| normalize_keyword(k.as_ref()))
        .filter(|k| !k.is_empty())
        .collect();
    transcript
        .split(['.', '!', '?', '\n'])
        .filter(|sentence| {
            let s = sentence
                .trim_start_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase();
            keywords.iter().any(|k| {
                s.starts_with(k.as_str())
                    && s[k.len()..]
                        .chars()
                        .next()
                        .is_none_or(|c| !c.is_alphanumeric())
            })
        })
        .count()
}

/// Two-stage thought count for one transcript.
pub fn parse_thought_count(transcript: &str, cfg: &AnnotationConfig) -> ParsedThoughts {
    let explicit = count_explicit_steps(transcript);
    let keyword_count = count_transition_keywords(transcript, &cfg.transition_keywords);
    match explicit {
        Some(n) => ParsedThoughts {
            explicit_count: Some(n),
            keyword_count,
            chosen_count: n,
            stage: ParseStage::Explicit,
        },
        None => ParsedThoughts {
            explicit_count: None,
            keyword_count,
            chosen_count: keyword_count,
            stage: ParseStage::Keyword,
        },
    }
}

/// Outcome of an annotation run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub annotated: usize,
    /// `(record id, error message)` for every skipped record.
    pub skipped: Vec<(String, String)>,
}

/// Annotates every record with the mean thought count over `cfg.repeats`
/// independently sampled transcripts.
///
/// Records whose backend calls fail keep their previous annotation and are
/// listed in the report. More than half failing is an error.
pub fn annotate_dataset(
    ds: &Dataset,
    backend: &dyn BackendClient,
    cfg: &AnnotationConfig,
) -> Result<(Dataset, AnnotationReport), AnnotateError> {
    cfg.validate()?;
    let outcomes = run_bounded(ds.len(), cfg.max_in_flight.max(1), |i| {
        let record = &ds.records[i];
        let query = cfg.build_query(&record.prompt);
        let mut total = 0.0;
        for sample in 0..cfg.repeats {
            let req = CompletionRequest {
                prompt: query.clone(),
                sample_index: sample as u32,
            };
            let text = backend.complete(&req).map_err(|e| e.to_string())?;
            total += parse_thought_count(&text, cfg).chosen_count as f64;
        }
        Ok::<f64, String>(total / cfg.repeats as f64)
    });

    let mut out = ds.clone();
    let mut report = AnnotationReport::default();
    for (record, outcome) in out.records.iter_mut().zip(outcomes) {
        match outcome {
            Ok(mean) => {
                record.thought_count = Some(mean);
                report.annotated += 1;
            }
            Err(e) => {
                log::warn!("annotation of {} failed: {e}", record.id);
                report.skipped.push((record.id.clone(), e));
            }
        }
    }
    if report.skipped.len() * 2 > ds.len() {
        return Err(AnnotateError::TooManyFailures {
            failed: report.skipped.len(),
            total: ds.len(),
        });
    }
    Ok((out, report))
}

/// Runs `f(0..n)` on at most `limit` threads, returning results in index order.
pub(crate) fn run_bounded<T, F>(n: usize, limit: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if limit <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<T>>> =
        (0..n).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..limit.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                *slots[i].lock().unwrap() = Some(v);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
