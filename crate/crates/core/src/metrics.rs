//! Text-overlap metrics and the marker-based style accuracy.
//!
//! All scores are on the unit interval. BLEU is corpus-level; ROUGE-L and
//! METEOR are sentence-level and averaged over turns by the caller.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{classify_style, Style, TokenId, Vocab};
use crate::error::{domain, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor_s: f64,
    /// Share of turns generated with the reference style target whose output
    /// carries only that style's markers.
    pub control_accuracy: f64,
    /// Share of turns whose output carries only the opposite style's markers
    /// when generated with the style target flipped.
    pub flip_rate: f64,
    /// Mean over episodes of `Σ_t ‖s_t − s_1‖₁ / T`.
    pub mean_drift: f64,
    pub n_turns: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and total hypothesis n-grams over a corpus.
pub fn modified_precision<T, S>(hypotheses: &[S], references: &[S], n: usize) -> (usize, usize)
where
    T: Eq + Hash,
    S: AsRef<[T]>,
{
    let mut matched = 0;
    let mut total = 0;
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        let ref_counts = ngram_counts(r, n);
        for (gram, c) in ngram_counts(h, n) {
            matched += c.min(ref_counts.get(gram).copied().unwrap_or(0));
            total += c;
        }
    }
    (matched, total)
}

/// Corpus BLEU with uniform weights over n = 1..=`max_n` and the brevity
/// penalty. A zero match count for n ≥ 2 is smoothed to `1 / (total + 1)`;
/// non-zero counts are used as is, so exact matches score 1.
pub fn bleu<T, S>(hypotheses: &[S], references: &[S], max_n: usize) -> Result<f64>
where
    T: Eq + Hash,
    S: AsRef<[T]>,
{
    if hypotheses.is_empty() {
        return domain("bleu over an empty corpus");
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "bleu: {} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return domain("bleu: max_n must be at least 1");
    }
    let hyp_len: usize = hypotheses.iter().map(|h| h.as_ref().len()).sum();
    let ref_len: usize = references.iter().map(|r| r.as_ref().len()).sum();
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (matched, total) = modified_precision(hypotheses, references, n);
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n >= 2 {
            1.0 / (total as f64 + 1.0)
        } else {
            return Ok(0.0);
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok((bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0))
}

/// Longest common subsequence length by dynamic programming.
pub fn lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1.
pub fn rouge_l<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return domain("rouge_l: empty reference");
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let l = lcs(hypothesis, reference) as f64;
    let p = l / hypothesis.len() as f64;
    let r = l / reference.len() as f64;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// Exact-match METEOR: greedy left-to-right unigram alignment,
/// `F = 10PR / (R + 9P)`, fragmentation penalty `0.5 · (chunks / matches)³`.
pub fn meteor_simplified<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return domain("meteor_simplified: empty reference");
    }
    let mut used = vec![false; reference.len()];
    let mut alignment: Vec<usize> = Vec::new();
    for h in hypothesis {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *h) {
            used[j] = true;
            alignment.push(j);
        } else {
            alignment.push(usize::MAX);
        }
    }
    let matches = alignment.iter().filter(|&&j| j != usize::MAX).count();
    if matches == 0 {
        return Ok(0.0);
    }
    let mut chunks = 0;
    let mut last: Option<usize> = None;
    for &j in &alignment {
        if j == usize::MAX {
            last = None;
            continue;
        }
        if last.is_none_or(|l| j != l + 1) {
            chunks += 1;
        }
        last = Some(j);
    }
    let m = matches as f64;
    let p = m / hypothesis.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    Ok(f_mean * (1.0 - penalty))
}

/// Fraction of outputs that carry at least one marker of the intended style
/// and none of the other. Zero on an empty list.
pub fn control_accuracy<S: AsRef<[TokenId]>>(generated: &[S], intended: &[Style], vocab: &Vocab) -> f64 {
    if generated.is_empty() {
        return 0.0;
    }
    let correct = generated
        .iter()
        .zip(intended)
        .filter(|(g, &s)| classify_style(g.as_ref(), vocab) == Some(s))
        .count();
    correct as f64 / generated.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_exact_match_is_one() {
        let r = vec![words("the cat sat on the mat"), words("a b c d")];
        assert_eq!(bleu(&r, &r, 4).unwrap(), 1.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let h = vec![words("the the the the")];
        let r = vec![words("the cat sat down")];
        assert_eq!(modified_precision(&h, &r, 1), (1, 4));
    }

    #[test]
    fn bleu_hand_value_with_smoothing() {
        // p1 = 1/4, p2..p4 smoothed to 1/4, 1/3, 1/2; no brevity penalty
        let h = vec![words("the the the the")];
        let r = vec![words("the cat sat down")];
        let expect = (0.25f64 * 0.25 * (1.0 / 3.0) * 0.5).powf(0.25);
        assert!((bleu(&h, &r, 4).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn bleu_brevity_penalty_hand_value() {
        // hypothesis is a 4-token prefix of an 8-token reference: all
        // precisions 1, BP = exp(1 − 8/4)
        let h = vec![words("a b c d")];
        let r = vec![words("a b c d e f g h")];
        assert!((bleu(&h, &r, 4).unwrap() - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn bleu_disjoint_and_errors() {
        let h = vec![words("x y z w")];
        let r = vec![words("a b c d")];
        assert_eq!(bleu(&h, &r, 4).unwrap(), 0.0);
        let empty: Vec<Vec<&str>> = vec![];
        assert!(bleu(&empty, &empty, 4).is_err());
        let blank = vec![vec![]];
        assert_eq!(bleu(&blank, &r, 4).unwrap(), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&["a", "b", "c"], &["a", "b", "c"]).unwrap(), 1.0);
        assert!((rouge_l(&["a", "b", "c"], &["a", "x", "c"]).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(rouge_l(&["a", "b"], &["c", "d"]).unwrap(), 0.0);
        assert!(rouge_l::<&str>(&["a"], &[]).is_err());
    }

    #[test]
    fn meteor_examples() {
        let id = meteor_simplified(&["a", "b", "c", "d"], &["a", "b", "c", "d"]).unwrap();
        assert!((id - 0.9921875).abs() < 1e-9);
        assert_eq!(meteor_simplified(&["x"], &["a", "b"]).unwrap(), 0.0);
        // one match: P = 1/2, R = 1/3, F = 10PR/(R+9P), one chunk → × 0.5
        let (p, r) = (0.5f64, 1.0f64 / 3.0);
        let f = 10.0 * p * r / (r + 9.0 * p);
        let got = meteor_simplified(&["a", "x"], &["y", "a", "z"]).unwrap();
        assert!((got - 0.5 * f).abs() < 1e-9);
        assert!(meteor_simplified::<&str>(&["a"], &[]).is_err());
    }

    #[test]
    fn meteor_counts_chunks() {
        // swapped halves: 4 matches in 2 chunks
        let got = meteor_simplified(&["c", "d", "a", "b"], &["a", "b", "c", "d"]).unwrap();
        assert!((got - (1.0 - 0.5 * 0.5f64.powi(3))).abs() < 1e-12);
    }

    #[test]
    fn control_accuracy_rules() {
        let c = generate_corpus(40, 3).unwrap();
        let outs: Vec<&[TokenId]> = c.episodes.iter().flat_map(|e| &e.turns).map(|t| t.response_tokens.as_slice()).collect();
        let styles: Vec<Style> = c.episodes.iter().flat_map(|e| &e.turns).map(|t| t.style).collect();
        assert_eq!(control_accuracy(&outs, &styles, &c.vocab), 1.0);
        let dot = vec![c.vocab.id(".").unwrap()];
        assert_eq!(control_accuracy(&[dot], &[Style::Formal], &c.vocab), 0.0);
        let mixed = vec![c.vocab.id("yeah").unwrap(), c.vocab.id("certainly").unwrap()];
        assert_eq!(control_accuracy(&[mixed], &[Style::Casual], &c.vocab), 0.0);
        assert_eq!(control_accuracy::<Vec<TokenId>>(&[], &[], &c.vocab), 0.0);
    }

    fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (Some((x, ra)), Some((y, rb))) => {
                if x == y {
                    1 + lcs_brute(ra, rb)
                } else {
                    lcs_brute(ra, b).max(lcs_brute(a, rb))
                }
            }
            _ => 0,
        }
    }

    fn seq(max: usize) -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..4, 0..=max)
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(a in seq(8), b in seq(8)) {
            prop_assert_eq!(lcs(&a, &b), lcs_brute(&a, &b));
            prop_assert_eq!(lcs(&a, &b), lcs(&b, &a));
            prop_assert_eq!(lcs(&a, &a), a.len());
        }

        #[test]
        fn rouge_is_symmetric(a in prop::collection::vec(0u8..4, 1..10), b in prop::collection::vec(0u8..4, 1..10)) {
            let x = rouge_l(&a, &b).unwrap();
            let y = rouge_l(&b, &a).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn metrics_are_one_on_identity(a in prop::collection::vec(0u8..6, 1..12)) {
            prop_assert_eq!(rouge_l(&a, &a).unwrap(), 1.0);
            let m = meteor_simplified(&a, &a).unwrap();
            prop_assert!((m - (1.0 - 0.5 / (a.len() as f64).powi(3))).abs() < 1e-12);
        }

        #[test]
        fn bleu_is_order_invariant(
            pairs in prop::collection::vec((prop::collection::vec(0u8..5, 1..8), prop::collection::vec(0u8..5, 1..8)), 1..6)
        ) {
            let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let (hr, rr): (Vec<_>, Vec<_>) = pairs.iter().rev().cloned().unzip();
            let a = bleu(&h, &r, 4).unwrap();
            prop_assert_eq!(a, bleu(&hr, &rr, 4).unwrap());
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn meteor_in_unit_interval(a in prop::collection::vec(0u8..4, 0..10), b in prop::collection::vec(0u8..4, 1..10)) {
            let m = meteor_simplified(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
