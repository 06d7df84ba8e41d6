//! Generation metrics: corpus BLEU and ROUGE-L.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty reference")]
    EmptyReference,
    #[error("no hypothesis/reference pairs")]
    NoPairs,
    #[error("max_order must be at least 1")]
    MaxOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub hypothesis: String,
    pub reference: String,
}

impl EvalPair {
    pub fn new(hypothesis: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            hypothesis: hypothesis.into(),
            reference: reference.into(),
        }
    }
}

const SPLIT_CHARS: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')'];

/// Lowercases, splits `.,!?;:"'()` into their own tokens, then splits on whitespace.
pub fn tokenize_eval(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if SPLIT_CHARS.contains(&c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.to_lowercase().split_whitespace().map(str::to_string).collect()
}

pub fn lcs_length<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// LCS-based precision, recall and F1 (β = 1).
pub fn rouge_l<T: Real>(hypothesis: &str, reference: &str) -> Result<RougeScore<T>, MetricsError> {
    let reference = tokenize_eval(reference);
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let hypothesis = tokenize_eval(hypothesis);
    if hypothesis.is_empty() {
        return Ok(RougeScore {
            precision: T::zero(),
            recall: T::zero(),
            f1: T::zero(),
        });
    }
    let lcs = T::from_count(lcs_length(&hypothesis, &reference));
    let precision = lcs / T::from_count(hypothesis.len());
    let recall = lcs / T::from_count(reference.len());
    let f1 = if precision + recall > T::zero() {
        T::lit(2.0) * precision * recall / (precision + recall)
    } else {
        T::zero()
    };
    Ok(RougeScore { precision, recall, f1 })
}

/// Mean ROUGE-L F1 over the pairs.
pub fn rouge_l_mean<T: Real>(pairs: &[EvalPair]) -> Result<T, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let total = pairs
        .iter()
        .map(|p| rouge_l::<T>(&p.hypothesis, &p.reference).map(|s| s.f1))
        .try_fold(T::zero(), |acc, f| f.map(|f| acc + f))?;
    Ok(total / T::from_count(pairs.len()))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU in `[0, 100]`, without smoothing: clipped n-gram counts
/// and lengths are summed over the corpus before precisions are formed.
pub fn bleu_corpus<T: Real>(pairs: &[EvalPair], max_order: usize) -> Result<T, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    if max_order == 0 {
        return Err(MetricsError::MaxOrder);
    }
    let mut matches = vec![0usize; max_order];
    let mut totals = vec![0usize; max_order];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for pair in pairs {
        let hyp = tokenize_eval(&pair.hypothesis);
        let reference = tokenize_eval(&pair.reference);
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=max_order {
            let ref_counts = ngram_counts(&reference, n);
            for (gram, count) in ngram_counts(&hyp, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches.contains(&0) {
        return Ok(T::zero());
    }
    let log_precision: T = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (T::from_count(m) / T::from_count(t)).ln())
        .sum();
    let brevity = if hyp_len >= ref_len {
        T::one()
    } else {
        (T::one() - T::from_count(ref_len) / T::from_count(hyp_len)).exp()
    };
    Ok(T::lit(100.0) * brevity * (log_precision / T::from_count(max_order)).exp())
}
