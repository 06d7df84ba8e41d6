//! Response decoding over an abstract next-token distribution.
//!
//! [`beam_search`] ranks finished hypotheses by log-probability divided by
//! the length normalizer `(5 + |Y|)^α / 6^α`, with hard minimum and maximum
//! lengths. [`nucleus_sample`] is the top-p sampling baseline.

mod beam;
mod nucleus;
mod remote;
mod tabular;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remote::RemoteError;
use crate::scalar::Real;

pub use beam::beam_search;
pub use nucleus::{nucleus_draw, nucleus_sample, nucleus_set};
pub use remote::{HttpLm, HttpLmConfig};
pub use tabular::{TabularLm, TabularLmFile, WILDCARD_KEY};

pub type TokenId = u32;

/// Tolerance on the total probability mass of a next-token distribution.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("tabular LM: {0}")]
    Table(String),
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    Config(String),
    #[error("invalid next-token distribution after {prefix_len} generated tokens: {message}")]
    InvalidDistribution { prefix_len: usize, message: String },
    #[error("context of {len} tokens exceeds the model limit of {limit}")]
    ContextTooLong { len: usize, limit: usize },
    #[error("no admissible continuation after {prefix_len} generated tokens")]
    NoContinuation { prefix_len: usize },
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// A generator: maps a prefix to a distribution over the next token.
pub trait LanguageModel<T: Real>: Send + Sync {
    fn identity(&self) -> String;

    fn eos_token(&self) -> TokenId;

    /// Longest accepted context, if the model has one.
    fn max_context(&self) -> Option<usize> {
        None
    }

    /// Log-probabilities of the next token after `context` followed by
    /// `generated`. Tokens not listed (or listed as `-inf`) have probability
    /// zero; the listed finite entries must exponentiate to a total of 1.
    fn next_log_probs(&self, context: &[TokenId], generated: &[TokenId]) -> Result<Vec<(TokenId, T)>, LmError>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, LmError>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, LmError>;
}

impl<T: Real, L: LanguageModel<T> + ?Sized> LanguageModel<T> for &L {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn eos_token(&self) -> TokenId {
        (**self).eos_token()
    }
    fn max_context(&self) -> Option<usize> {
        (**self).max_context()
    }
    fn next_log_probs(&self, context: &[TokenId], generated: &[TokenId]) -> Result<Vec<(TokenId, T)>, LmError> {
        (**self).next_log_probs(context, generated)
    }
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, LmError> {
        (**self).detokenize(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Beam,
    Nucleus,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Beam => "beam",
            Strategy::Nucleus => "nucleus",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "beam" => Ok(Strategy::Beam),
            "nucleus" => Ok(Strategy::Nucleus),
            other => Err(format!("unknown strategy '{other}', expected beam or nucleus")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig<T> {
    pub strategy: Strategy,
    pub beam_size: usize,
    /// Minimum response length, counting a terminal EOS.
    pub min_length: usize,
    pub max_length: usize,
    /// Length normalization exponent.
    pub alpha: T,
    pub top_p: T,
    pub seed: u64,
    /// Rank beam candidates by normalized score instead of raw log-probability.
    pub normalize_during_pruning: bool,
}

impl<T: Real> Default for DecodeConfig<T> {
    fn default() -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size: 10,
            min_length: 5,
            max_length: 80,
            alpha: T::one(),
            top_p: T::lit(0.9),
            seed: 0,
            normalize_during_pruning: false,
        }
    }
}

impl<T: Real> DecodeConfig<T> {
    /// Nucleus sampling with minimum length 1, maximum length 20 and no
    /// length normalization.
    pub fn baseline() -> Self {
        Self {
            strategy: Strategy::Nucleus,
            beam_size: 1,
            min_length: 1,
            max_length: 20,
            alpha: T::zero(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let fail = |m: String| Err(DecodeError::Config(m));
        if self.beam_size < 1 {
            return fail("beam_size must be at least 1".into());
        }
        if self.min_length < 1 {
            return fail("min_length must be at least 1".into());
        }
        if self.max_length < self.min_length {
            return fail(format!(
                "max_length {} is below min_length {}",
                self.max_length, self.min_length
            ));
        }
        if !self.alpha.is_finite() || self.alpha < T::zero() {
            return fail(format!("alpha {} must be a finite value >= 0", self.alpha));
        }
        if !(self.top_p > T::zero() && self.top_p <= T::one()) {
            return fail(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        Ok(())
    }
}

/// An in-flight or finished token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis<T> {
    /// Generated tokens, excluding context, including a terminal EOS.
    pub tokens: Vec<TokenId>,
    pub logprob_sum: T,
    pub finished: bool,
}

impl<T: Real> BeamHypothesis<T> {
    pub fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            logprob_sum: T::zero(),
            finished: false,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult<T> {
    pub tokens: Vec<TokenId>,
    pub normalized_score: T,
    pub raw_logprob: T,
    pub steps_taken: usize,
}

/// `(5 + length)^alpha / (5 + 1)^alpha`.
pub fn length_norm<T: Real>(length: usize, alpha: T) -> T {
    debug_assert!(length >= 1);
    T::from_count(5 + length).powf(alpha) / T::lit(6.0).powf(alpha)
}

pub fn normalized_score<T: Real>(hypothesis: &BeamHypothesis<T>, alpha: T) -> T {
    hypothesis.logprob_sum / length_norm(hypothesis.len(), alpha)
}

/// Runs the strategy selected in `config`.
pub fn decode<T: Real, L: LanguageModel<T> + ?Sized>(
    lm: &L,
    context: &[TokenId],
    config: &DecodeConfig<T>,
) -> Result<DecodeResult<T>, DecodeError> {
    match config.strategy {
        Strategy::Beam => beam_search(lm, context, config),
        Strategy::Nucleus => nucleus_sample(lm, context, config),
    }
}

pub(crate) fn check_context<T: Real, L: LanguageModel<T> + ?Sized>(
    lm: &L,
    context: &[TokenId],
) -> Result<(), DecodeError> {
    match lm.max_context() {
        Some(limit) if context.len() > limit => Err(DecodeError::ContextTooLong {
            len: context.len(),
            limit,
        }),
        _ => Ok(()),
    }
}

/// Queries the model and returns its finite entries sorted by token id,
/// after checking that they form a distribution.
pub(crate) fn next_distribution<T: Real, L: LanguageModel<T> + ?Sized>(
    lm: &L,
    context: &[TokenId],
    generated: &[TokenId],
) -> Result<Vec<(TokenId, T)>, DecodeError> {
    let raw = lm.next_log_probs(context, generated)?;
    let invalid = |message: String| DecodeError::InvalidDistribution {
        prefix_len: generated.len(),
        message,
    };
    let mut entries = Vec::with_capacity(raw.len());
    let mut mass = 0.0f64;
    for (token, lp) in raw {
        if lp.is_nan() || lp == T::infinity() {
            return Err(invalid(format!("token {token} has log-probability {lp}")));
        }
        if lp == T::neg_infinity() {
            continue;
        }
        let lp64 = lp.as_f64();
        if lp64 > MASS_TOLERANCE {
            return Err(invalid(format!("token {token} has positive log-probability {lp}")));
        }
        mass += lp64.exp();
        entries.push((token, lp.min(T::zero())));
    }
    entries.sort_by_key(|&(t, _)| t);
    if entries.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(invalid("duplicate token ids".into()));
    }
    // f32 log-probabilities cannot hit 1e-6 on large vocabularies
    let tolerance = MASS_TOLERANCE.max(T::epsilon().as_f64() * 4.0 * entries.len() as f64);
    if (mass - 1.0).abs() > tolerance {
        return Err(invalid(format!("probability mass {mass} differs from 1")));
    }
    Ok(entries)
}
