//! TF-IDF vectorization.
//!
//! Tokens are alphanumeric runs. A term's weight in a document is its share of
//! the document's tokens times `ln(n_docs / doc_freq)`. Out-of-vocabulary tokens
//! still count toward the document length.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VectorizeError {
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("corpus produced no terms after pruning")]
    EmptyVocabulary,
    #[error("sparse vector index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("sparse vector indices must be strictly increasing")]
    Unsorted,
}

/// Tokenizer and pruning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub min_doc_freq: usize,
    pub max_features: Option<usize>,
    /// Use `ln((1 + N) / (1 + df)) + 1` instead of `ln(N / df)`.
    pub smooth_idf: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            min_doc_freq: 1,
            max_features: None,
            smooth_idf: false,
        }
    }
}

/// Splits `text` into alphanumeric tokens.
pub fn tokenize(text: &str, cfg: &TokenizerConfig) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if cfg.lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Sparse row with strictly increasing column indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
    dim: usize,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: Vec::new(),
            dim,
        }
    }

    /// Builds a vector from `(index, weight)` pairs, dropping zero weights.
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self, VectorizeError> {
        let mut prev = None;
        for &(i, _) in &entries {
            if i >= dim {
                return Err(VectorizeError::IndexOutOfRange { index: i, dim });
            }
            if prev.is_some_and(|p| p >= i) {
                return Err(VectorizeError::Unsorted);
            }
            prev = Some(i);
        }
        Ok(Self {
            entries: entries.into_iter().filter(|&(_, w)| w != 0.0).collect(),
            dim,
        })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i, v))
                .collect(),
            dim: values.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Value at column `i`; absent columns are 0.
    pub fn get(&self, i: usize) -> f64 {
        match self.entries.binary_search_by_key(&i, |&(j, _)| j) {
            Ok(k) => self.entries[k].1,
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, w) in &self.entries {
            out[i] = w;
        }
        out
    }

    /// Appends dense columns after the current dimension.
    pub fn extend_dense(&self, extra: &[f64]) -> Self {
        let mut entries = self.entries.clone();
        entries.extend(
            extra
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, &v)| (self.dim + k, v)),
        );
        Self {
            entries,
            dim: self.dim + extra.len(),
        }
    }
}

/// Fitted term index with document frequencies.
///
/// Persisted inside model files (see [`crate::forest`]) rather than via serde.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    n_docs: usize,
    config: TokenizerConfig,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its stored parts (terms must be sorted).
    pub fn from_parts(
        terms: Vec<String>,
        doc_freq: Vec<usize>,
        n_docs: usize,
        config: TokenizerConfig,
    ) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            terms,
            doc_freq,
            n_docs,
            config,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf(&self, col: usize) -> f64 {
        let n = self.n_docs as f64;
        let df = self.doc_freq[col] as f64;
        if self.config.smooth_idf {
            ((1.0 + n) / (1.0 + df)).ln() + 1.0
        } else {
            (n / df).ln()
        }
    }
}

/// Fits a vocabulary over `corpus`.
pub fn fit<S: AsRef<str>>(corpus: &[S], cfg: &TokenizerConfig) -> Result<Vocabulary, VectorizeError> {
    if corpus.is_empty() {
        return Err(VectorizeError::EmptyCorpus);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let mut seen: Vec<String> = tokenize(doc.as_ref(), cfg);
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df
        .into_iter()
        .filter(|(_, c)| *c >= cfg.min_doc_freq)
        .collect();
    if let Some(cap) = cfg.max_features {
        // Highest document frequency first, lexicographic among ties.
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(cap);
        kept.sort_by(|a, b| a.0.cmp(&b.0));
    }
    if kept.is_empty() {
        return Err(VectorizeError::EmptyVocabulary);
    }
    let (terms, doc_freq) = kept.into_iter().unzip();
    Ok(Vocabulary::from_parts(terms, doc_freq, corpus.len(), cfg.clone()))
}

/// TF-IDF vector for one document.
pub fn transform(voc: &Vocabulary, doc: &str) -> SparseVector {
    let tokens = tokenize(doc, &voc.config);
    if tokens.is_empty() {
        return SparseVector::zeros(voc.len());
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for t in &tokens {
        if let Some(i) = voc.index_of(t) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let total = tokens.len() as f64;
    let entries = counts
        .into_iter()
        .map(|(i, c)| (i, c as f64 / total * voc.idf(i)))
        .filter(|&(_, w)| w != 0.0)
        .collect();
    SparseVector {
        entries,
        dim: voc.len(),
    }
}

pub fn transform_all<S: AsRef<str>>(voc: &Vocabulary, docs: &[S]) -> Vec<SparseVector> {
    docs.iter().map(|d| transform(voc, d.as_ref())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_docs() -> Vocabulary {
        fit(&["a b", "a c"], &TokenizerConfig::default()).unwrap()
    }

    #[test]
    fn fit_counts_documents() {
        let v = two_docs();
        assert_eq!(v.terms(), ["a", "b", "c"]);
        assert_eq!(v.doc_freq(), [2, 1, 1]);
        assert_eq!(v.n_docs(), 2);
    }

    #[test]
    fn pruning_rules() {
        let cfg = TokenizerConfig {
            min_doc_freq: 2,
            ..Default::default()
        };
        assert_eq!(fit(&["a b", "a c"], &cfg).unwrap().terms(), ["a"]);
        let cfg = TokenizerConfig {
            max_features: Some(2),
            ..Default::default()
        };
        assert_eq!(fit(&["a b", "a c"], &cfg).unwrap().terms(), ["a", "b"]);
    }

    #[test]
    fn empty_inputs() {
        let empty: [&str; 0] = [];
        assert_eq!(
            fit(&empty, &TokenizerConfig::default()),
            Err(VectorizeError::EmptyCorpus)
        );
        assert_eq!(
            fit(&["", " ,. "], &TokenizerConfig::default()),
            Err(VectorizeError::EmptyVocabulary)
        );
    }

    #[test]
    fn hand_computed_weights() {
        let v = two_docs();
        let x = transform(&v, "a b");
        assert_eq!(x.get(0), 0.0);
        assert!((x.get(1) - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(x.nnz(), 1);
        let oov = transform(&v, "z z z");
        assert_eq!((oov.nnz(), oov.dim()), (0, 3));
        assert_eq!(transform(&v, "").nnz(), 0);
    }

    #[test]
    fn oov_tokens_dilute_term_frequency() {
        let v = two_docs();
        let x = transform(&v, "b z z z");
        assert!((x.get(1) - 0.25 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ubiquitous_terms_weigh_zero() {
        let v = fit(&["x y x"], &TokenizerConfig::default()).unwrap();
        assert_eq!(transform(&v, "x y x").nnz(), 0);
    }

    #[test]
    fn smoothed_idf_is_opt_in() {
        let cfg = TokenizerConfig {
            smooth_idf: true,
            ..Default::default()
        };
        let v = fit(&["a b", "a c"], &cfg).unwrap();
        let x = transform(&v, "a b");
        assert!((x.get(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sparse_vector_validation() {
        assert_eq!(
            SparseVector::new(2, vec![(2, 1.0)]),
            Err(VectorizeError::IndexOutOfRange { index: 2, dim: 2 })
        );
        assert_eq!(
            SparseVector::new(3, vec![(1, 1.0), (1, 2.0)]),
            Err(VectorizeError::Unsorted)
        );
        let v = SparseVector::new(3, vec![(0, 0.0), (2, 1.5)]).unwrap();
        assert_eq!(v.entries(), [(2, 1.5)]);
        assert_eq!(v.extend_dense(&[0.0, 4.0]).to_dense(), [0.0, 0.0, 1.5, 0.0, 4.0]);
    }

    proptest! {
        #[test]
        fn tf_mass_sums_to_one(docs in proptest::collection::vec("[a-e ]{1,20}", 1..6), probe in "[a-h ]{1,30}") {
            let Ok(v) = fit(&docs, &TokenizerConfig::default()) else { return Ok(()); };
            let toks = tokenize(&probe, v.config());
            prop_assume!(!toks.is_empty());
            let in_vocab = toks.iter().filter(|t| v.index_of(t).is_some()).count() as f64;
            let oov = toks.len() as f64 - in_vocab;
            // Recover tf from weights wherever idf is nonzero.
            let x = transform(&v, &probe);
            let mut tf_sum = 0.0;
            for col in 0..v.len() {
                let idf = v.idf(col);
                let tf = if idf == 0.0 {
                    toks.iter().filter(|t| v.index_of(t) == Some(col)).count() as f64 / toks.len() as f64
                } else {
                    x.get(col) / idf
                };
                tf_sum += tf;
            }
            prop_assert!((tf_sum + oov / toks.len() as f64 - 1.0).abs() < 1e-9);
            prop_assert!(x.entries().iter().all(|(_, w)| w.is_finite()));
        }

        #[test]
        fn transform_ignores_token_order(words in proptest::collection::vec("[a-d]{1,2}", 1..10)) {
            let v = fit(&words, &TokenizerConfig::default()).unwrap();
            let forward = words.join(" ");
            let mut rev = words.clone();
            rev.reverse();
            prop_assert_eq!(transform(&v, &forward), transform(&v, &rev.join(" ")));
        }
    }
}
