//! Prompt datasets: the canonical record model, JSONL ingestion, deterministic
//! train/test splits and synthetic corpora for desk-scale experiments.
//!
//! The on-disk format is one JSON object per line:
//!
//! ```text
//! {"id": "q1", "prompt": "...", "reference_answer": "...", "difficulty": "easy",
//!  "adversarial": false, "thought_count": 5.5}
//! ```
//!
//! Every field except `prompt` is optional. Labels that are not known are
//! omitted rather than encoded as sentinel values.

mod synth;

pub use synth::{canonical_answer, complexity_hint, make_synthetic_corpus, SynthConfig, SynthProfile};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Errors raised while loading, validating or splitting datasets.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no records in {0}")]
    Empty(String),
    #[error("duplicate record id {id:?} (line {line})")]
    DuplicateId { id: String, line: usize },
    #[error("record {id:?} has no {label} label, cannot stratify")]
    MissingLabel { id: String, label: &'static str },
    #[error("train_fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("synthetic corpus needs at least 10 records, got {0}")]
    TooSmall(usize),
    #[error("invalid synthetic corpus setting: {0}")]
    BadSynthConfig(String),
}

/// Expert-assigned prompt difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty {other:?}")),
        }
    }
}

/// One prompt together with whatever labels its source dataset carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<bool>,
    /// Mean of repeated transcript parses, so fractional values are legal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought_count: Option<f64>,
}

impl PromptRecord {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            reference_answer: None,
            difficulty: None,
            adversarial: None,
            thought_count: None,
        }
    }

    /// Class label used for stratification and classification, if present.
    pub fn label(&self, on: LabelKind) -> Option<String> {
        match on {
            LabelKind::Difficulty => self.difficulty.map(|d| d.as_str().to_string()),
            LabelKind::Adversarial => self.adversarial.map(|a| {
                if a {
                    "adversarial".to_string()
                } else {
                    "benign".to_string()
                }
            }),
        }
    }
}

// Wire shape: `id` may be missing, in which case the line number is used.
#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    prompt: String,
    #[serde(default)]
    reference_answer: Option<String>,
    #[serde(default)]
    difficulty: Option<Difficulty>,
    #[serde(default)]
    adversarial: Option<bool>,
    #[serde(default)]
    thought_count: Option<f64>,
}

/// Which categorical label a split or classifier keys on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Difficulty,
    Adversarial,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Difficulty => "difficulty",
            LabelKind::Adversarial => "adversarial",
        }
    }
}

impl FromStr for LabelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "difficulty" => Ok(LabelKind::Difficulty),
            "adversarial" => Ok(LabelKind::Adversarial),
            other => Err(format!("unknown label kind {other:?}")),
        }
    }
}

/// An ordered, immutable collection of prompt records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub source_path: String,
    pub records: Vec<PromptRecord>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, records: Vec<PromptRecord>) -> Self {
        Self {
            name: name.into(),
            source_path: String::new(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PromptRecord> {
        self.records.iter()
    }

    pub fn prompts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.prompt.as_str()).collect()
    }

    /// Checks the record-level invariants: unique ids, finite non-negative
    /// thought counts.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: r.id.clone(),
                    line: i + 1,
                });
            }
            if let Some(tc) = r.thought_count {
                if !tc.is_finite() || tc < 0.0 {
                    return Err(CorpusError::Malformed {
                        line: i + 1,
                        message: format!("thought_count must be a non-negative number, got {tc}"),
                    });
                }
            }
        }
        Ok(())
    }

    fn derived(&self, suffix: &str, records: Vec<PromptRecord>) -> Dataset {
        Dataset {
            name: format!("{}-{}", self.name, suffix),
            source_path: self.source_path.clone(),
            records,
        }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a PromptRecord;
    type IntoIter = std::slice::Iter<'a, PromptRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// Reads a JSONL dataset. Blank lines are skipped; unknown fields are ignored.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut ds = parse_jsonl(&text, &name)?;
    ds.source_path = path.display().to_string();
    Ok(ds)
}

/// Parses JSONL text; `name` labels the resulting dataset.
pub fn parse_jsonl(text: &str, name: &str) -> Result<Dataset, CorpusError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = match raw.id {
            None | Some(serde_json::Value::Null) => line_no.to_string(),
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(other) => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!("id must be a string or number, got {other}"),
                })
            }
        };
        if let Some(tc) = raw.thought_count {
            if !tc.is_finite() || tc < 0.0 {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!("thought_count must be a non-negative number, got {tc}"),
                });
            }
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { id, line: line_no });
        }
        records.push(PromptRecord {
            id,
            prompt: raw.prompt,
            reference_answer: raw.reference_answer,
            difficulty: raw.difficulty,
            adversarial: raw.adversarial,
            thought_count: raw.thought_count,
        });
    }
    if records.is_empty() {
        return Err(CorpusError::Empty(name.to_string()));
    }
    Ok(Dataset::new(name, records))
}

/// Serializes records one per line, in dataset order.
pub fn to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for r in &ds.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(to_jsonl(ds).as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Parameters of a deterministic train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratify_on: Option<LabelKind>,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
            stratify_on: None,
        }
    }

    pub fn stratified(mut self, on: LabelKind) -> Self {
        self.stratify_on = Some(on);
        self
    }
}

/// Partitions `ds` into (train, test). Both halves keep load order.
///
/// Each stratum contributes `round(train_fraction * stratum_size)` records to
/// the training half, so per-class proportions hold to within one record.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), CorpusError> {
    if ds.is_empty() {
        return Err(CorpusError::Empty(ds.name.clone()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(spec.train_fraction));
    }
    let train_idx = split_indices(ds, spec)?;
    let mut in_train = vec![false; ds.len()];
    for i in train_idx {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in ds.records.iter().zip(&in_train) {
        if *t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((ds.derived("train", train), ds.derived("test", test)))
}

fn split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<Vec<usize>, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Strata in a stable (sorted) order so the RNG stream is reproducible.
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        let key = match spec.stratify_on {
            None => String::new(),
            Some(kind) => r.label(kind).ok_or_else(|| CorpusError::MissingLabel {
                id: r.id.clone(),
                label: kind.as_str(),
            })?,
        };
        strata.entry(key).or_default().push(i);
    }
    let mut train = Vec::new();
    for (_, mut members) in strata {
        members.shuffle(&mut rng);
        let take = (spec.train_fraction * members.len() as f64).round() as usize;
        train.extend_from_slice(&members[..take.min(members.len())]);
    }
    Ok(train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(n_pos: usize, n_neg: usize) -> Dataset {
        let mut recs = Vec::new();
        for i in 0..n_pos + n_neg {
            let mut r = PromptRecord::new(format!("r{i}"), format!("prompt {i}"));
            r.adversarial = Some(i < n_pos);
            recs.push(r);
        }
        Dataset::new("t", recs)
    }

    #[test]
    fn parses_unlabelled_table_one_question() {
        let ds = parse_jsonl(
            r#"{"id":"q1","prompt":"How many ways can the letters in the word COMMON be arranged?"}"#,
            "t",
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        let r = &ds.records[0];
        assert_eq!(r.id, "q1");
        assert!(r.prompt.starts_with("How many ways can the letters"));
        assert_eq!(r.difficulty, None);
        assert_eq!(r.adversarial, None);
        assert_eq!(r.thought_count, None);
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = parse_jsonl("", "empty").unwrap_err();
        assert!(err.to_string().contains("no records"), "{err}");
        assert!(matches!(parse_jsonl("\n  \n", "e"), Err(CorpusError::Empty(_))));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = "{\"id\":\"a\",\"prompt\":\"x\"}\n{not json}\n{\"id\":\"c\",\"prompt\":\"z\"}\n";
        match parse_jsonl(text, "t") {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_id_falls_back_to_line_number_and_unknown_fields_are_ignored() {
        let text = "{\"prompt\":\"x\",\"source\":\"gsm8k\"}\n\n{\"id\":7,\"prompt\":\"y\"}";
        let ds = parse_jsonl(text, "t").unwrap();
        assert_eq!(ds.records[0].id, "1");
        assert_eq!(ds.records[1].id, "7");
    }

    #[test]
    fn duplicate_ids_and_negative_counts_rejected() {
        let dup = "{\"id\":\"a\",\"prompt\":\"x\"}\n{\"id\":\"a\",\"prompt\":\"y\"}";
        assert!(matches!(
            parse_jsonl(dup, "t"),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
        let neg = "{\"id\":\"a\",\"prompt\":\"x\",\"thought_count\":-1}";
        assert!(matches!(parse_jsonl(neg, "t"), Err(CorpusError::Malformed { line: 1, .. })));
    }

    #[test]
    fn fractional_thought_count_and_labels_round_trip() {
        let text = r#"{"id":"a","prompt":"p","reference_answer":"r","difficulty":"hard","adversarial":true,"thought_count":5.5}"#;
        let ds = parse_jsonl(text, "t").unwrap();
        assert_eq!(ds.records[0].thought_count, Some(5.5));
        assert_eq!(ds.records[0].difficulty, Some(Difficulty::Hard));
        let again = parse_jsonl(&to_jsonl(&ds), "t").unwrap();
        assert_eq!(again.records, ds.records);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = labelled(5, 5);
        let spec = SplitSpec::new(0.8, 7);
        let (a, b) = split(&ds, &spec).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split(&ds, &spec).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);

        let two = labelled(1, 1);
        let (a, b) = split(&two, &SplitSpec::new(0.5, 1)).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn stratified_split_counts_every_seed() {
        // Exhaustive over seeds: 6 pos / 4 neg at 0.5 must always give 3 pos / 2 neg.
        let ds = labelled(6, 4);
        for seed in 0..200 {
            let spec = SplitSpec::new(0.5, seed).stratified(LabelKind::Adversarial);
            let (train, test) = split(&ds, &spec).unwrap();
            let pos = train.iter().filter(|r| r.adversarial == Some(true)).count();
            let neg = train.len() - pos;
            assert_eq!((pos, neg), (3, 2), "seed {seed}");
            assert_eq!(train.len() + test.len(), 10);
        }
    }

    #[test]
    fn stratify_requires_labels() {
        let mut ds = labelled(3, 3);
        ds.records[4].adversarial = None;
        let spec = SplitSpec::new(0.5, 0).stratified(LabelKind::Adversarial);
        assert!(matches!(split(&ds, &spec), Err(CorpusError::MissingLabel { .. })));
        let spec = SplitSpec::new(0.5, 0).stratified(LabelKind::Difficulty);
        assert!(split(&ds, &spec).is_err());
    }

    #[test]
    fn split_rejects_bad_fraction_and_empty() {
        let ds = labelled(2, 2);
        assert!(split(&ds, &SplitSpec::new(1.0, 0)).is_err());
        assert!(split(&ds, &SplitSpec::new(0.0, 0)).is_err());
        let empty = Dataset::new("e", vec![]);
        assert!(split(&empty, &SplitSpec::new(0.5, 0)).is_err());
    }
}
