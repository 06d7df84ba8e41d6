//! Relevance scoring of (question, answer) pairs.
//!
//! A [`ScorerBackend`] maps a batch of pairs to scores in `[0, 1]`, one per
//! pair and in the same order. The lexical mock is a pure function used as a
//! test oracle; [`HttpScorer`] talks to a cross-encoder service over
//! `POST /v1/score`.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remote::{ClientConfig, JsonClient, RemoteError};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextPair {
    pub question: String,
    pub answer: String,
}

impl TextPair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("empty scoring batch")]
    EmptyBatch,
    #[error("pair {index} has an empty question or answer")]
    EmptyText { index: usize },
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("{backend}: {message}")]
    Protocol { backend: String, message: String },
}

impl ScorerError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScorerError::Remote(RemoteError::Transport { .. }))
    }
}

/// A relevance model: base or fine-tuned cross-encoder, or a stand-in.
pub trait ScorerBackend<T: Real>: Send + Sync {
    /// Human-readable backend identity recorded in run manifests.
    fn identity(&self) -> String;

    /// Raw scoring. Callers go through [`score_batch`], which checks the
    /// batch and the returned scores.
    fn score_pairs(&self, pairs: &[TextPair]) -> Result<Vec<T>, ScorerError>;
}

impl<T: Real, S: ScorerBackend<T> + ?Sized> ScorerBackend<T> for &S {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn score_pairs(&self, pairs: &[TextPair]) -> Result<Vec<T>, ScorerError> {
        (**self).score_pairs(pairs)
    }
}

/// Scores a non-empty batch. A wrong-length answer or a score outside
/// `[0, 1]` fails the call; scores are never clamped.
pub fn score_batch<T: Real, S: ScorerBackend<T> + ?Sized>(
    backend: &S,
    pairs: &[TextPair],
) -> Result<Vec<T>, ScorerError> {
    if pairs.is_empty() {
        return Err(ScorerError::EmptyBatch);
    }
    if let Some(index) = pairs
        .iter()
        .position(|p| p.question.trim().is_empty() || p.answer.trim().is_empty())
    {
        return Err(ScorerError::EmptyText { index });
    }
    let scores = backend.score_pairs(pairs)?;
    check_scores(&backend.identity(), pairs.len(), &scores)?;
    Ok(scores)
}

fn check_scores<T: Real>(backend: &str, expected: usize, scores: &[T]) -> Result<(), ScorerError> {
    if scores.len() != expected {
        return Err(ScorerError::Protocol {
            backend: backend.to_string(),
            message: format!("expected {expected} scores, got {}", scores.len()),
        });
    }
    if let Some((i, s)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !(**s >= T::zero() && **s <= T::one()))
    {
        return Err(ScorerError::Protocol {
            backend: backend.to_string(),
            message: format!("score {i} = {s} is outside [0, 1]"),
        });
    }
    Ok(())
}

const STRIP_CHARS: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')'];

/// Lowercased whitespace tokens with `.,!?;:'"()` trimmed from their edges.
pub fn lexical_tokens(text: &str) -> HashSet<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(STRIP_CHARS).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Token-set F1 between question and answer.
pub fn mock_lexical_score<T: Real>(question: &str, answer: &str) -> T {
    let q = lexical_tokens(question);
    let a = lexical_tokens(answer);
    match (q.is_empty(), a.is_empty()) {
        (true, true) => return T::one(),
        (true, false) | (false, true) => return T::zero(),
        _ => {}
    }
    let overlap = q.intersection(&a).count();
    T::from_count(2 * overlap) / T::from_count(q.len() + a.len())
}

/// Deterministic stand-in for a cross-encoder: token-set F1.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLexicalScorer;

impl<T: Real> ScorerBackend<T> for MockLexicalScorer {
    fn identity(&self) -> String {
        "mock-lexical".to_string()
    }

    fn score_pairs(&self, pairs: &[TextPair]) -> Result<Vec<T>, ScorerError> {
        Ok(pairs
            .iter()
            .map(|p| mock_lexical_score(&p.question, &p.answer))
            .collect())
    }
}

/// Wraps a backend and counts the pairs it is asked to score.
#[derive(Debug, Default)]
pub struct CountingScorer<S> {
    inner: S,
    pairs: AtomicUsize,
    calls: AtomicUsize,
}

impl<S> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            pairs: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn pairs_scored(&self) -> usize {
        self.pairs.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.pairs.store(0, Ordering::SeqCst);
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<T: Real, S: ScorerBackend<T>> ScorerBackend<T> for CountingScorer<S> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn score_pairs(&self, pairs: &[TextPair]) -> Result<Vec<T>, ScorerError> {
        self.pairs.fetch_add(pairs.len(), Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_pairs(pairs)
    }
}

#[derive(Debug, Clone)]
pub struct HttpScorerConfig {
    /// Pairs per request; larger batches are split.
    pub max_batch: usize,
    pub client: ClientConfig,
}

impl Default for HttpScorerConfig {
    fn default() -> Self {
        Self {
            max_batch: 64,
            client: ClientConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: &'a [TextPair],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Client for a remote scoring service.
#[derive(Debug)]
pub struct HttpScorer {
    client: JsonClient,
    max_batch: usize,
}

impl HttpScorer {
    pub fn new(base_url: &str, config: HttpScorerConfig) -> Self {
        Self {
            client: JsonClient::new(base_url, config.client),
            max_batch: config.max_batch.max(1),
        }
    }

    pub fn base_url(&self) -> &str {
        self.client.base_url()
    }
}

impl<T: Real> ScorerBackend<T> for HttpScorer {
    fn identity(&self) -> String {
        format!("remote:{}", self.client.base_url())
    }

    fn score_pairs(&self, pairs: &[TextPair]) -> Result<Vec<T>, ScorerError> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.max_batch) {
            let response: ScoreResponse = self.client.post("/v1/score", &ScoreRequest { pairs: chunk })?;
            let identity = <Self as ScorerBackend<T>>::identity(self);
            check_scores(&identity, chunk.len(), &response.scores)?;
            out.extend(response.scores.into_iter().map(T::lit));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(q: &str, a: &str) -> TextPair {
        TextPair::new(q, a)
    }

    #[test]
    fn mock_identical_and_disjoint() {
        let s: Vec<f64> = score_batch(&MockLexicalScorer, &[pair("a b", "a b"), pair("a b", "c d")]).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
    }

    #[test]
    fn mock_half_overlap() {
        // overlap {b}: 2*1 / (2 + 2)
        let s: Vec<f64> = score_batch(&MockLexicalScorer, &[pair("a b", "b c")]).unwrap();
        assert_eq!(s, vec![0.5]);
    }

    #[test]
    fn normalization_collapses_case_and_punctuation() {
        assert_eq!(mock_lexical_score::<f64>("Hello, world!", "hello world"), 1.0);
    }

    #[test]
    fn one_empty_side_scores_zero() {
        assert_eq!(mock_lexical_score::<f64>("x", ""), 0.0);
        assert_eq!(mock_lexical_score::<f64>("", ""), 1.0);
        assert_eq!(mock_lexical_score::<f64>("...", "!!"), 1.0);
    }

    #[test]
    fn partial_overlap_f1() {
        // overlap {b, c}: 2*2 / (3 + 4)
        let s = mock_lexical_score::<f64>("a b c", "b c d e");
        assert!((s - 4.0 / 7.0).abs() < 1e-12);
        assert!((s - 0.5714).abs() < 1e-4);
        let s32 = mock_lexical_score::<f32>("a b c", "b c d e");
        assert!((s32 - 4.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn repeated_tokens_count_once() {
        assert_eq!(mock_lexical_score::<f64>("a a a b", "a b"), 1.0);
    }

    #[test]
    fn empty_batch_and_empty_text_rejected() {
        assert!(matches!(
            score_batch::<f64, _>(&MockLexicalScorer, &[]),
            Err(ScorerError::EmptyBatch)
        ));
        assert!(matches!(
            score_batch::<f64, _>(&MockLexicalScorer, &[pair("a", "b"), pair("a", " ")]),
            Err(ScorerError::EmptyText { index: 1 })
        ));
    }

    struct Broken(Vec<f64>);

    impl ScorerBackend<f64> for Broken {
        fn identity(&self) -> String {
            "broken".into()
        }
        fn score_pairs(&self, _: &[TextPair]) -> Result<Vec<f64>, ScorerError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn wrong_length_and_out_of_range_are_protocol_errors() {
        let err = score_batch(&Broken(vec![0.1]), &[pair("a", "b"), pair("c", "d")]).unwrap_err();
        assert!(matches!(err, ScorerError::Protocol { .. }));
        let err = score_batch(&Broken(vec![1.2]), &[pair("a", "b")]).unwrap_err();
        assert!(err.to_string().contains("outside [0, 1]"));
        let err = score_batch(&Broken(vec![f64::NAN]), &[pair("a", "b")]).unwrap_err();
        assert!(matches!(err, ScorerError::Protocol { .. }));
    }

    #[test]
    fn counting_wrapper_counts_pairs() {
        let counter = CountingScorer::new(MockLexicalScorer);
        let _: Vec<f64> = score_batch(&counter, &[pair("a", "b"), pair("c", "d")]).unwrap();
        let _: Vec<f64> = score_batch(&counter, &[pair("a", "b")]).unwrap();
        assert_eq!(counter.pairs_scored(), 3);
        assert_eq!(counter.calls(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn text() -> impl Strategy<Value = String> {
            proptest::collection::vec("[a-dA-D]{1,3}[.,!?]?", 1..6).prop_map(|w| w.join(" "))
        }

        proptest! {
            #[test]
            fn symmetric(q in text(), a in text()) {
                prop_assert_eq!(mock_lexical_score::<f64>(&q, &a), mock_lexical_score::<f64>(&a, &q));
            }

            #[test]
            fn batch_matches_elementwise_and_permutes(pairs in proptest::collection::vec((text(), text()), 1..12), rot in 0usize..12) {
                let pairs: Vec<TextPair> = pairs.into_iter().map(|(q, a)| TextPair::new(q, a)).collect();
                let scores: Vec<f64> = score_batch(&MockLexicalScorer, &pairs).unwrap();
                for (p, s) in pairs.iter().zip(&scores) {
                    prop_assert_eq!(*s, mock_lexical_score::<f64>(&p.question, &p.answer));
                    prop_assert!((0.0..=1.0).contains(s));
                }
                let k = rot % pairs.len();
                let mut rotated = pairs.clone();
                rotated.rotate_left(k);
                let mut expected = scores.clone();
                expected.rotate_left(k);
                prop_assert_eq!(score_batch::<f64, _>(&MockLexicalScorer, &rotated).unwrap(), expected);
            }
        }
    }
}
