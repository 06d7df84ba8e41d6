use std::cmp::Ordering;

use super::{
    check_context, length_norm, next_distribution, normalized_score, BeamHypothesis, DecodeConfig, DecodeError,
    DecodeResult, LanguageModel, Strategy, TokenId,
};
use crate::scalar::Real;

/// Higher score first, then the lexicographically smaller sequence.
fn rank<T: Real>(a: (T, &[TokenId]), b: (T, &[TokenId])) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

/// Length-normalized beam search.
///
/// Each step expands every live hypothesis over all tokens with non-zero
/// probability and keeps the best `beam_size` expansions (by log-probability
/// sum, or by normalized score with `normalize_during_pruning`). EOS is
/// unavailable until the response reaches `min_length`; a hypothesis that
/// emits EOS, or reaches `max_length` without it, joins the finished pool.
/// The result is the finished hypothesis with the best normalized score.
pub fn beam_search<T: Real, L: LanguageModel<T> + ?Sized>(
    lm: &L,
    context: &[TokenId],
    config: &DecodeConfig<T>,
) -> Result<DecodeResult<T>, DecodeError> {
    config.validate()?;
    if config.strategy != Strategy::Beam {
        return Err(DecodeError::Config("beam_search requires strategy = beam".into()));
    }
    check_context(lm, context)?;
    let eos = lm.eos_token();
    let alpha = config.alpha;
    let pruning_score = |h: &BeamHypothesis<T>| {
        if config.normalize_during_pruning {
            normalized_score(h, alpha)
        } else {
            h.logprob_sum
        }
    };
    // no descendant can score above sum / norm(max_length) because the sum
    // only decreases and the normalizer is largest at max_length
    let max_norm = length_norm(config.max_length, alpha);

    let mut live = vec![BeamHypothesis::<T>::empty()];
    let mut finished: Vec<BeamHypothesis<T>> = Vec::new();
    let mut steps = 0;

    while !live.is_empty() {
        steps += 1;
        let mut candidates = Vec::new();
        for hyp in &live {
            let eos_allowed = hyp.len() + 1 >= config.min_length;
            for (token, lp) in next_distribution(lm, context, &hyp.tokens)? {
                if token == eos && !eos_allowed {
                    continue;
                }
                let mut tokens = Vec::with_capacity(hyp.len() + 1);
                tokens.extend_from_slice(&hyp.tokens);
                tokens.push(token);
                candidates.push(BeamHypothesis {
                    tokens,
                    logprob_sum: hyp.logprob_sum + lp,
                    finished: token == eos,
                });
            }
        }
        if candidates.is_empty() {
            if finished.is_empty() {
                return Err(DecodeError::NoContinuation {
                    prefix_len: live[0].len(),
                });
            }
            break;
        }
        candidates.sort_by(|a, b| rank((pruning_score(a), &a.tokens), (pruning_score(b), &b.tokens)));
        candidates.truncate(config.beam_size);

        live.clear();
        for mut cand in candidates {
            if !cand.finished && cand.len() >= config.max_length {
                cand.finished = true;
            }
            if cand.finished {
                finished.push(cand);
            } else {
                live.push(cand);
            }
        }

        if finished.len() >= config.beam_size && !live.is_empty() {
            let mut scores: Vec<T> = finished.iter().map(|h| normalized_score(h, alpha)).collect();
            scores.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
            let worst_kept = scores[config.beam_size - 1];
            if live.iter().all(|h| h.logprob_sum / max_norm < worst_kept) {
                break;
            }
        }
    }

    let best = finished
        .iter()
        .map(|h| (normalized_score(h, alpha), h))
        .min_by(|a, b| rank((a.0, &a.1.tokens), (b.0, &b.1.tokens)))
        .expect("finished pool is non-empty");
    Ok(DecodeResult {
        tokens: best.1.tokens.clone(),
        normalized_score: best.0,
        raw_logprob: best.1.logprob_sum,
        steps_taken: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{LmError, TabularLm};

    fn toy() -> TabularLm {
        TabularLm::from_json_str(
            r#"{"vocab": ["EOS", "a", "b"], "eos": "EOS",
                "transitions": {
                    "": {"a": 0.6, "b": 0.4},
                    "a": {"EOS": 0.5, "a": 0.1, "b": 0.4},
                    "b": {"EOS": 0.1, "b": 0.9},
                    "*": {"EOS": 0.7, "a": 0.2, "b": 0.1}
                }}"#,
        )
        .unwrap()
    }

    fn cfg(beam: usize, min: usize, max: usize, alpha: f64) -> DecodeConfig<f64> {
        DecodeConfig {
            beam_size: beam,
            min_length: min,
            max_length: max,
            alpha,
            ..Default::default()
        }
    }

    #[test]
    fn beam_one_follows_greedy_path() {
        // greedy: a (0.6), EOS (0.5)
        let out = beam_search(&toy(), &[], &cfg(1, 1, 5, 0.0)).unwrap();
        assert_eq!(out.tokens, vec![1, 0]);
        assert!((out.raw_logprob - (0.6f64.ln() + 0.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn length_normalization_prefers_longer_sequence() {
        // α = 0: "a EOS" (0.30) beats "b b EOS" (0.4*0.9*0.7 = 0.252)
        let plain = beam_search(&toy(), &[], &cfg(10, 1, 3, 0.0)).unwrap();
        assert_eq!(plain.tokens, vec![1, 0]);
        // α = 2 divides by (8/6)^2 for length 3 and (7/6)^2 for length 2
        let long = beam_search(&toy(), &[], &cfg(10, 1, 3, 2.0)).unwrap();
        assert_eq!(long.tokens.len(), 3);
    }

    #[test]
    fn min_length_masks_eos() {
        let out = beam_search(&toy(), &[], &cfg(4, 3, 6, 0.0)).unwrap();
        assert!(out.tokens.len() >= 3);
        assert!(!out.tokens[..out.tokens.len() - 1].contains(&0));
    }

    #[test]
    fn force_finish_at_max_length_without_eos() {
        let lm = TabularLm::from_json_str(r#"{"vocab": ["EOS", "a"], "eos": "EOS", "transitions": {"*": {"a": 1.0}}}"#)
            .unwrap();
        let out = beam_search(&lm, &[], &cfg(3, 1, 4, 1.0)).unwrap();
        assert_eq!(out.tokens, vec![1, 1, 1, 1]);
        assert_eq!(out.raw_logprob, 0.0);
    }

    #[test]
    fn eos_only_table_with_min_length_has_no_continuation() {
        let lm =
            TabularLm::from_json_str(r#"{"vocab": ["EOS", "a"], "eos": "EOS", "transitions": {"*": {"EOS": 1.0}}}"#)
                .unwrap();
        assert_eq!(beam_search(&lm, &[], &cfg(2, 1, 4, 1.0)).unwrap().tokens, vec![0]);
        assert!(matches!(
            beam_search(&lm, &[], &cfg(2, 2, 4, 1.0)),
            Err(DecodeError::NoContinuation { prefix_len: 0 })
        ));
    }

    #[test]
    fn rejects_nucleus_strategy() {
        let c = DecodeConfig {
            strategy: Strategy::Nucleus,
            ..cfg(1, 1, 3, 0.0)
        };
        assert!(matches!(beam_search(&toy(), &[], &c), Err(DecodeError::Config(_))));
    }

    struct Broken {
        mass: f64,
        limit: Option<usize>,
    }

    impl LanguageModel<f64> for Broken {
        fn identity(&self) -> String {
            "broken".into()
        }
        fn eos_token(&self) -> TokenId {
            0
        }
        fn max_context(&self) -> Option<usize> {
            self.limit
        }
        fn next_log_probs(&self, _: &[TokenId], _: &[TokenId]) -> Result<Vec<(TokenId, f64)>, LmError> {
            Ok(vec![(0, (self.mass / 2.0).ln()), (1, (self.mass / 2.0).ln())])
        }
        fn tokenize(&self, _: &str) -> Result<Vec<TokenId>, LmError> {
            Ok(vec![])
        }
        fn detokenize(&self, _: &[TokenId]) -> Result<String, LmError> {
            Ok(String::new())
        }
    }

    #[test]
    fn invalid_mass_is_an_error() {
        let lm = Broken { mass: 0.9, limit: None };
        assert!(matches!(
            beam_search(&lm, &[], &cfg(2, 1, 3, 0.0)),
            Err(DecodeError::InvalidDistribution { .. })
        ));
        let ok = Broken {
            mass: 1.0 + 1e-8,
            limit: None,
        };
        assert!(beam_search(&ok, &[], &cfg(2, 1, 3, 0.0)).is_ok());
    }

    #[test]
    fn context_limit_is_enforced() {
        let lm = Broken {
            mass: 1.0,
            limit: Some(2),
        };
        assert!(matches!(
            beam_search(&lm, &[5, 6, 7], &cfg(2, 1, 3, 0.0)),
            Err(DecodeError::ContextTooLong { len: 3, limit: 2 })
        ));
    }

    #[test]
    fn normalized_pruning_switch_still_respects_lengths() {
        let c = DecodeConfig {
            normalize_during_pruning: true,
            ..cfg(2, 2, 4, 1.0)
        };
        let out = beam_search(&toy(), &[], &c).unwrap();
        assert!((2..=4).contains(&out.tokens.len()));
    }
}
