//! Random tabular language models and brute-force decoding oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pkground::decoder::{TabularLm, TabularLmFile, TokenId};
use rand::Rng;

pub const EOS: TokenId = 0;

fn name(id: usize) -> String {
    if id == 0 {
        "EOS".to_string()
    } else {
        format!("w{id}")
    }
}

fn random_row<R: Rng>(rng: &mut R, vocab: usize) -> BTreeMap<String, f64> {
    let weights: Vec<f64> = (0..vocab).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().enumerate().map(|(i, w)| (name(i), w / total)).collect()
}

/// A table with a distinct row for every non-EOS prefix shorter than `depth`
/// and a random fallback row for anything deeper. Every token has positive
/// probability everywhere.
pub fn random_lm<R: Rng>(rng: &mut R, vocab: usize, depth: usize) -> TabularLm {
    assert!(vocab >= 2);
    let mut transitions = BTreeMap::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..depth {
        let mut next = Vec::new();
        for prefix in &frontier {
            let key: Vec<String> = prefix.iter().map(|&t| name(t)).collect();
            transitions.insert(key.join(" "), random_row(rng, vocab));
            for t in 1..vocab {
                let mut p = prefix.clone();
                p.push(t);
                next.push(p);
            }
        }
        frontier = next;
    }
    transitions.insert("*".to_string(), random_row(rng, vocab));
    TabularLm::new(TabularLmFile {
        vocab: (0..vocab).map(name).collect(),
        eos: name(0),
        transitions,
    })
    .expect("random table is valid")
}

fn prob(lm: &TabularLm, generated: &[TokenId], token: TokenId) -> f64 {
    lm.probabilities(generated)
        .unwrap()
        .iter()
        .find(|(t, _)| *t == token)
        .map_or(0.0, |(_, p)| *p)
}

fn norm(len: usize, alpha: f64) -> f64 {
    ((5 + len) as f64 / 6.0).powf(alpha)
}

/// Every admissible output (EOS-terminated with length >= min_len, or
/// unterminated at max_len) with its normalized score.
pub fn enumerate_outputs(lm: &TabularLm, min_len: usize, max_len: usize, alpha: f64) -> Vec<(Vec<TokenId>, f64)> {
    fn walk(
        lm: &TabularLm,
        prefix: &mut Vec<TokenId>,
        logp: f64,
        min_len: usize,
        max_len: usize,
        alpha: f64,
        out: &mut Vec<(Vec<TokenId>, f64)>,
    ) {
        if prefix.len() == max_len {
            out.push((prefix.clone(), logp / norm(prefix.len(), alpha)));
            return;
        }
        for t in 0..lm.vocab_size() as TokenId {
            let p = prob(lm, prefix, t);
            if p <= 0.0 {
                continue;
            }
            prefix.push(t);
            if t == EOS {
                if prefix.len() >= min_len {
                    out.push((prefix.clone(), (logp + p.ln()) / norm(prefix.len(), alpha)));
                }
            } else {
                walk(lm, prefix, logp + p.ln(), min_len, max_len, alpha, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(lm, &mut Vec::new(), 0.0, min_len, max_len, alpha, &mut out);
    out
}

pub fn brute_force_best(lm: &TabularLm, min_len: usize, max_len: usize, alpha: f64) -> f64 {
    enumerate_outputs(lm, min_len, max_len, alpha)
        .into_iter()
        .map(|(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Step-wise argmax (lowest id on ties), EOS masked until it would reach min_len.
pub fn greedy(lm: &TabularLm, min_len: usize, max_len: usize) -> Vec<TokenId> {
    let mut out = Vec::new();
    while out.len() < max_len {
        let mut best: Option<(TokenId, f64)> = None;
        for &(t, p) in lm.probabilities(&out).unwrap() {
            if t == EOS && out.len() + 1 < min_len {
                continue;
            }
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((t, p));
            }
        }
        let (t, _) = best.expect("some admissible token");
        out.push(t);
        if t == EOS {
            break;
        }
    }
    out
}
