//! Corpus-level BLEU-4 over token-id sequences.
//!
//! Standard corpus BLEU with clipped n-gram counts, brevity penalty, and
//! add-one smoothing applied only to orders with zero matches. Hypotheses
//! and references are plain token-id sequences; there is no tokenization or
//! casing involved.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BleuError {
    LengthMismatch { hypotheses: usize, references: usize },
    EmptyReference { index: usize },
    NoReferences,
}

impl fmt::Display for BleuError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LengthMismatch { hypotheses, references } => {
                write!(f, "{hypotheses} hypotheses for {references} references")
            }
            Self::EmptyReference { index } => write!(f, "reference sentence {index} is empty"),
            Self::NoReferences => write!(f, "reference corpus is empty"),
        }
    }
}

impl core::error::Error for BleuError {}

fn ngram_counts(seq: &[u32], n: usize) -> BTreeMap<&[u32], u64> {
    let mut counts: BTreeMap<&[u32], u64> = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 in [0, 100].
pub fn corpus_bleu(hypotheses: &[Vec<u32>], references: &[Vec<u32>]) -> Result<f64, BleuError> {
    if references.is_empty() {
        return Err(BleuError::NoReferences);
    }
    if hypotheses.len() != references.len() {
        return Err(BleuError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (i, (hyp, rf)) in hypotheses.iter().zip(references).enumerate() {
        if rf.is_empty() {
            return Err(BleuError::EmptyReference { index: i });
        }
        hyp_len += hyp.len() as u64;
        ref_len += rf.len() as u64;
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(hyp, n);
            let rc = ngram_counts(rf, n);
            for (g, c) in &hc {
                let clip = rc.get(g).copied().unwrap_or(0);
                matches[n - 1] += (*c).min(clip);
            }
            totals[n - 1] += (hyp.len() + 1).saturating_sub(n) as u64;
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let p = if matches[n] == 0 {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += libm::log(p);
    }
    let bp =
        if hyp_len >= ref_len { 1.0 } else { libm::exp(1.0 - ref_len as f64 / hyp_len as f64) };
    Ok(100.0 * bp * libm::exp(log_sum / MAX_ORDER as f64))
}

/// Fraction of reference tokens matched at the same position.
pub fn token_accuracy(hypotheses: &[Vec<u32>], references: &[Vec<u32>]) -> Result<f64, BleuError> {
    if hypotheses.len() != references.len() {
        return Err(BleuError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut correct = 0u64;
    let mut total = 0u64;
    for (hyp, rf) in hypotheses.iter().zip(references) {
        total += rf.len() as u64;
        correct += hyp.iter().zip(rf).filter(|(a, b)| a == b).count() as u64;
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(correct as f64 / total as f64)
}

/// Fraction of sentences reproduced exactly.
pub fn exact_match(hypotheses: &[Vec<u32>], references: &[Vec<u32>]) -> Result<f64, BleuError> {
    if hypotheses.len() != references.len() {
        return Err(BleuError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if references.is_empty() {
        return Err(BleuError::NoReferences);
    }
    let hits = hypotheses.iter().zip(references).filter(|(h, r)| h == r).count();
    Ok(hits as f64 / references.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_hypothesis_scores_100() {
        let refs = vec![vec![1, 2, 3, 5], vec![7, 8]];
        assert_eq!(corpus_bleu(&refs.clone(), &refs).unwrap(), 100.0);
        assert_eq!(exact_match(&refs.clone(), &refs).unwrap(), 1.0);
        assert_eq!(token_accuracy(&refs.clone(), &refs).unwrap(), 1.0);
    }

    #[test]
    fn hand_worked_two_sentence_example() {
        // s1: 3/4 unigrams, 2/3 bigrams, 1/2 trigrams, 0/1 four-grams
        // s2: exact two-token match
        // p = (5/6, 3/4, 1/2, smoothed 1/2), BP = 1
        let hyps = vec![vec![1, 2, 3, 4], vec![7, 8]];
        let refs = vec![vec![1, 2, 3, 5], vec![7, 8]];
        let b = corpus_bleu(&hyps, &refs).unwrap();
        assert!((b - 62.87167148414677).abs() < 1e-6, "got {b}");
    }

    #[test]
    fn brevity_penalty_applies() {
        // precisions are all perfect or smoothed to 1; only BP remains
        let hyps = vec![vec![1, 2], vec![7, 8]];
        let refs = vec![vec![1, 2, 3, 5], vec![7, 8]];
        let b = corpus_bleu(&hyps, &refs).unwrap();
        assert!((b - 60.653065971263345).abs() < 1e-6, "got {b}");
    }

    #[test]
    fn disjoint_corpus_scores_near_zero() {
        let refs: Vec<Vec<u32>> =
            (0..100).map(|i| vec![i, i + 1, i + 2, i + 3, i, i, i, i, i, i]).collect();
        let hyps: Vec<Vec<u32>> = refs.iter().map(|r| vec![999; r.len()]).collect();
        let b = corpus_bleu(&hyps, &refs).unwrap();
        assert!(b < 0.5, "got {b}");
    }

    #[test]
    fn error_cases() {
        assert!(matches!(corpus_bleu(&[vec![1]], &[]).unwrap_err(), BleuError::NoReferences));
        assert!(matches!(
            corpus_bleu(&[vec![1]], &[vec![1], vec![2]]).unwrap_err(),
            BleuError::LengthMismatch { .. }
        ));
        assert!(matches!(
            corpus_bleu(&[vec![1], vec![2]], &[vec![1], vec![]]).unwrap_err(),
            BleuError::EmptyReference { index: 1 }
        ));
    }

    #[test]
    fn empty_hypotheses_score_zero() {
        let refs = vec![vec![1, 2, 3]];
        let hyps = vec![vec![]];
        assert_eq!(corpus_bleu(&hyps, &refs).unwrap(), 0.0);
    }

    #[test]
    fn token_accuracy_counts_aligned_positions() {
        let refs = vec![vec![1, 2, 3, 4], vec![5, 6]];
        let hyps = vec![vec![1, 9, 3], vec![5, 6]];
        // 2 of 4 in s1, 2 of 2 in s2 over 6 reference tokens
        assert!((token_accuracy(&hyps, &refs).unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(exact_match(&hyps, &refs).unwrap(), 0.5);
    }
}
