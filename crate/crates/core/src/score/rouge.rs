use serde::{Deserialize, Serialize};

/// Longest sequences compared in full; longer inputs are truncated.
pub const MAX_LCS_TOKENS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeResult {
    pub lcs_len: usize,
    /// LCS over target length.
    pub r_lcs: f64,
    /// LCS over generated length.
    pub p_lcs: f64,
    pub f: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Lowercased whitespace tokens.
    #[default]
    Words,
    Chars,
}

pub fn tokens(text: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Words => text.split_whitespace().map(str::to_lowercase).collect(),
        Tokenization::Chars => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_lowercase)
            .map(String::from)
            .collect(),
    }
}

/// Length of the longest common subsequence, in two DP rows.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn truncate<'a, T>(s: &'a [T], what: &str) -> &'a [T] {
    if s.len() > MAX_LCS_TOKENS {
        log::warn!("{what} has {} tokens; truncating to {MAX_LCS_TOKENS}", s.len());
        &s[..MAX_LCS_TOKENS]
    } else {
        s
    }
}

/// ROUGE-L F-measure between two token sequences. `beta` must be positive.
pub fn rouge_l<T: PartialEq>(target: &[T], generated: &[T], beta: f64) -> RougeResult {
    assert!(beta > 0.0, "beta must be positive");
    let target = truncate(target, "target");
    let generated = truncate(generated, "generated text");
    if target.is_empty() && generated.is_empty() {
        return RougeResult {
            lcs_len: 0,
            r_lcs: 1.0,
            p_lcs: 1.0,
            f: 1.0,
            beta,
        };
    }
    let lcs = lcs_len(target, generated);
    let ratio = |n: usize| if n == 0 { 0.0 } else { lcs as f64 / n as f64 };
    let (r, p) = (ratio(target.len()), ratio(generated.len()));
    let b2 = beta * beta;
    let f = if r + p > 0.0 {
        (1.0 + b2) * r * p / (r + b2 * p)
    } else {
        0.0
    };
    RougeResult {
        lcs_len: lcs,
        r_lcs: r,
        p_lcs: p,
        f,
        beta,
    }
}

/// ROUGE-L between two texts with the given tokenization and β = 1.
pub fn rouge_l_text(target: &str, generated: &str, mode: Tokenization) -> RougeResult {
    rouge_l(&tokens(target, mode), &tokens(generated, mode), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exponential oracle: longest subsequence of `a` that is also one of `b`.
    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        fn is_subseq(s: &[u8], b: &[u8]) -> bool {
            let mut it = b.iter();
            s.iter().all(|c| it.any(|d| d == c))
        }
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            if s.len() > best && is_subseq(&s, b) {
                best = s.len();
            }
        }
        best
    }

    #[test]
    fn hand_examples() {
        let r = rouge_l_text("the cat sat", "the cat", Tokenization::Words);
        assert_eq!(r.lcs_len, 2);
        assert!((r.r_lcs - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.p_lcs, 1.0);
        assert!((r.f - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l_text("a b c", "a b c", Tokenization::Words).f, 1.0);
        assert_eq!(rouge_l_text("a b", "c d", Tokenization::Words).f, 0.0);
        assert_eq!(rouge_l_text("", "", Tokenization::Words).f, 1.0);
        assert_eq!(rouge_l_text("", "x", Tokenization::Words).f, 0.0);
        assert_eq!(rouge_l_text("x", "", Tokenization::Words).f, 0.0);
    }

    #[test]
    fn tokenization_modes() {
        assert_eq!(tokens("The  CAT\nsat", Tokenization::Words), ["the", "cat", "sat"]);
        assert_eq!(tokens("Ab c", Tokenization::Chars), ["a", "b", "c"]);
    }

    #[test]
    fn long_inputs_are_truncated() {
        let a = vec![1u8; MAX_LCS_TOKENS + 10];
        assert_eq!(rouge_l(&a, &a, 1.0).lcs_len, MAX_LCS_TOKENS);
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in proptest::collection::vec(0u8..3, 0..=8), b in proptest::collection::vec(0u8..3, 0..=8)) {
            let lcs = lcs_len(&a, &b);
            prop_assert_eq!(lcs, brute_lcs(&a, &b));
            prop_assert!(lcs <= a.len().min(b.len()));
        }

        #[test]
        fn swapping_swaps_recall_and_precision(a in proptest::collection::vec(0u8..4, 1..12), b in proptest::collection::vec(0u8..4, 1..12), beta in 0.1f64..4.0) {
            let x = rouge_l(&a, &b, beta);
            let y = rouge_l(&b, &a, beta);
            prop_assert_eq!(x.r_lcs, y.p_lcs);
            prop_assert_eq!(x.p_lcs, y.r_lcs);
            if a.len() == b.len() {
                prop_assert!((x.f - y.f).abs() < 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&x.f));
        }
    }
}
