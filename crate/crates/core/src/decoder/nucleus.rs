use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_context, length_norm, next_distribution, DecodeConfig, DecodeError, DecodeResult, LanguageModel, Strategy,
    TokenId,
};
use crate::scalar::Real;

/// Smallest prefix of the tokens sorted by probability (descending, ties by
/// token id) whose cumulative probability reaches `top_p`, renormalized.
/// Zero-probability tokens never enter the nucleus.
pub fn nucleus_set<T: Real>(probs: &[(TokenId, T)], top_p: T) -> Vec<(TokenId, T)> {
    let mut sorted: Vec<(TokenId, T)> = probs.iter().copied().filter(|&(_, p)| p > T::zero()).collect();
    sorted.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let total: T = sorted.iter().map(|&(_, p)| p).sum();
    let mut cumulative = T::zero();
    let mut cut = sorted.len();
    for (i, &(_, p)) in sorted.iter().enumerate() {
        cumulative = cumulative + p;
        if cumulative >= top_p * total {
            cut = i + 1;
            break;
        }
    }
    sorted.truncate(cut);
    let mass: T = sorted.iter().map(|&(_, p)| p).sum();
    sorted.into_iter().map(|(t, p)| (t, p / mass)).collect()
}

/// Draws one token from a renormalized nucleus.
pub fn nucleus_draw<T: Real, R: Rng + ?Sized>(nucleus: &[(TokenId, T)], rng: &mut R) -> TokenId {
    let u = T::lit(rng.gen::<f64>());
    let mut cumulative = T::zero();
    for &(token, p) in nucleus {
        cumulative = cumulative + p;
        if u < cumulative {
            return token;
        }
    }
    nucleus.last().expect("nucleus is non-empty").0
}

/// Top-p sampling, deterministic for a given `config.seed`.
pub fn nucleus_sample<T: Real, L: LanguageModel<T> + ?Sized>(
    lm: &L,
    context: &[TokenId],
    config: &DecodeConfig<T>,
) -> Result<DecodeResult<T>, DecodeError> {
    config.validate()?;
    if config.strategy != Strategy::Nucleus {
        return Err(DecodeError::Config("nucleus_sample requires strategy = nucleus".into()));
    }
    check_context(lm, context)?;
    let eos = lm.eos_token();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut raw = T::zero();
    let mut steps = 0;

    while tokens.len() < config.max_length {
        steps += 1;
        let eos_allowed = tokens.len() + 1 >= config.min_length;
        let dist = next_distribution(lm, context, &tokens)?;
        let probs: Vec<(TokenId, T)> = dist
            .iter()
            .filter(|&&(t, _)| eos_allowed || t != eos)
            .map(|&(t, lp)| (t, lp.exp()))
            .collect();
        let nucleus = nucleus_set(&probs, config.top_p);
        if nucleus.is_empty() {
            return Err(DecodeError::NoContinuation {
                prefix_len: tokens.len(),
            });
        }
        let token = nucleus_draw(&nucleus, &mut rng);
        let lp = dist
            .iter()
            .find(|&&(t, _)| t == token)
            .map(|&(_, lp)| lp)
            .expect("drawn token comes from the distribution");
        raw = raw + lp;
        tokens.push(token);
        if token == eos {
            break;
        }
    }

    Ok(DecodeResult {
        normalized_score: raw / length_norm(tokens.len(), config.alpha),
        raw_logprob: raw,
        tokens,
        steps_taken: steps,
    })
}
