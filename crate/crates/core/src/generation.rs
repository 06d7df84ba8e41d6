//! Grounded response generation over a corpus and its evaluation files.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DialogueInstance};
use crate::decoder::{decode, DecodeConfig, DecodeError, LanguageModel, LmError};
use crate::grounding::{predictions_by_id, GroundingPrediction};
use crate::metrics::{bleu_corpus, rouge_l_mean, EvalPair, MetricsError};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("no grounding prediction for instance '{0}'")]
    MissingPrediction(String),
    #[error("instance '{0}' has no reference response")]
    MissingReference(String),
    #[error("instance '{id}': {source}")]
    Decode {
        id: String,
        #[source]
        source: DecodeError,
    },
    #[error("instance '{id}': {source}")]
    Lm {
        id: String,
        #[source]
        source: LmError,
    },
    #[error("{file} line {line}: {message}")]
    Format { file: String, line: usize, message: String },
    #[error("id '{0}' has a reference but no hypothesis")]
    MissingHypothesis(String),
    #[error("id '{0}' has a hypothesis but no reference")]
    UnmatchedHypothesis(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `{"id": ..., "text": ...}` line of a hypothesis or reference file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

/// Generator input: retrieved persona (if any), retrieved knowledge, last turn.
pub fn generation_prompt(instance: &DialogueInstance, knowledge_index: usize, persona_index: Option<usize>) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(3);
    if let Some(p) = persona_index.and_then(|i| instance.personas.get(i)) {
        parts.push(p);
    }
    if let Some(k) = instance.knowledge.get(knowledge_index) {
        parts.push(k);
    }
    if let Some(turn) = instance.last_turn() {
        parts.push(turn);
    }
    parts.join(" ")
}

/// Decodes a response for every instance, in corpus order. Nucleus seeds
/// are offset by the instance position so each dialogue gets its own stream.
pub fn generate_responses<T, L>(
    corpus: &Corpus,
    predictions: &[GroundingPrediction<T>],
    lm: &L,
    config: &DecodeConfig<T>,
) -> Result<Vec<TextRecord>, GenerationError>
where
    T: Real,
    L: LanguageModel<T> + ?Sized,
{
    config.validate().map_err(|source| GenerationError::Decode {
        id: String::new(),
        source,
    })?;
    let by_id = predictions_by_id(predictions);
    let eos = lm.eos_token();
    corpus
        .instances
        .par_iter()
        .enumerate()
        .map(|(pos, inst)| {
            let pred = by_id
                .get(inst.id.as_str())
                .ok_or_else(|| GenerationError::MissingPrediction(inst.id.clone()))?;
            let lm_err = |source| GenerationError::Lm {
                id: inst.id.clone(),
                source,
            };
            let prompt = generation_prompt(inst, pred.knowledge_index, pred.persona_index);
            let context = lm.tokenize(&prompt).map_err(lm_err)?;
            let cell_config = DecodeConfig {
                seed: config.seed.wrapping_add(pos as u64),
                ..*config
            };
            let result = decode(lm, &context, &cell_config).map_err(|source| GenerationError::Decode {
                id: inst.id.clone(),
                source,
            })?;
            let body = match result.tokens.split_last() {
                Some((&last, rest)) if last == eos => rest,
                _ => &result.tokens[..],
            };
            Ok(TextRecord {
                id: inst.id.clone(),
                text: lm.detokenize(body).map_err(lm_err)?,
            })
        })
        .collect()
}

/// Gold responses as reference records.
pub fn references_from_corpus(corpus: &Corpus) -> Result<Vec<TextRecord>, GenerationError> {
    corpus
        .instances
        .iter()
        .map(|inst| {
            inst.gold_response
                .clone()
                .map(|text| TextRecord {
                    id: inst.id.clone(),
                    text,
                })
                .ok_or_else(|| GenerationError::MissingReference(inst.id.clone()))
        })
        .collect()
}

pub fn write_text_records<W: Write>(records: &[TextRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_text_records<R: BufRead>(input: R, file: &str) -> Result<Vec<TextRecord>, GenerationError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |message: String| GenerationError::Format {
            file: file.to_string(),
            line: idx + 1,
            message,
        };
        let record: TextRecord = serde_json::from_str(&line).map_err(|e| format_err(e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(format_err(format!("duplicate id '{}'", record.id)));
        }
        out.push(record);
    }
    Ok(out)
}

/// Pairs hypotheses with references by id, in reference order. Every id
/// must appear on both sides.
pub fn align_records(hypotheses: &[TextRecord], references: &[TextRecord]) -> Result<Vec<EvalPair>, GenerationError> {
    let hyp: HashMap<&str, &str> = hypotheses.iter().map(|r| (r.id.as_str(), r.text.as_str())).collect();
    let ref_ids: HashSet<&str> = references.iter().map(|r| r.id.as_str()).collect();
    if let Some(extra) = hypotheses.iter().find(|r| !ref_ids.contains(r.id.as_str())) {
        return Err(GenerationError::UnmatchedHypothesis(extra.id.clone()));
    }
    references
        .iter()
        .map(|r| {
            hyp.get(r.id.as_str())
                .map(|h| EvalPair::new(*h, r.text.clone()))
                .ok_or_else(|| GenerationError::MissingHypothesis(r.id.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationScores<T> {
    /// Corpus BLEU in `[0, 100]`.
    pub bleu: T,
    /// Mean ROUGE-L F1 scaled to `[0, 100]`.
    pub rouge_l: T,
    pub count: usize,
}

pub fn evaluate_generation<T: Real>(pairs: &[EvalPair]) -> Result<GenerationScores<T>, GenerationError> {
    Ok(GenerationScores {
        bleu: bleu_corpus(pairs, 4)?,
        rouge_l: rouge_l_mean::<T>(pairs)? * T::lit(100.0),
        count: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::decoder::TabularLm;

    fn record(id: &str, text: &str) -> TextRecord {
        TextRecord {
            id: id.into(),
            text: text.into(),
        }
    }

    #[test]
    fn prompt_layout() {
        let inst = DialogueInstance {
            id: "x".into(),
            dialogue_turns: vec!["old".into(), "What is this?".into()],
            personas: vec!["I love pyramids.".into()],
            knowledge: vec!["Giza is in Egypt.".into()],
            gold_persona: BTreeSet::new(),
            gold_knowledge: None,
            gold_response: None,
        };
        assert_eq!(
            generation_prompt(&inst, 0, Some(0)),
            "I love pyramids. Giza is in Egypt. What is this?"
        );
        assert_eq!(generation_prompt(&inst, 0, None), "Giza is in Egypt. What is this?");
    }

    #[test]
    fn alignment_by_id() {
        let refs = vec![record("a", "x y"), record("b", "z")];
        let hyps = vec![record("b", "z"), record("a", "x")];
        let pairs = align_records(&hyps, &refs).unwrap();
        assert_eq!(pairs, vec![EvalPair::new("x", "x y"), EvalPair::new("z", "z")]);
        assert!(matches!(
            align_records(&hyps[..1], &refs),
            Err(GenerationError::MissingHypothesis(id)) if id == "a"
        ));
        let extra = vec![record("a", "x"), record("b", "z"), record("c", "q")];
        assert!(matches!(
            align_records(&extra, &refs),
            Err(GenerationError::UnmatchedHypothesis(id)) if id == "c"
        ));
    }

    #[test]
    fn duplicate_record_ids_rejected() {
        let text = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        assert!(matches!(
            read_text_records(text.as_bytes(), "hyps"),
            Err(GenerationError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn responses_strip_eos() {
        let lm = TabularLm::from_json_str(
            r#"{"vocab": ["EOS", "hi"], "eos": "EOS", "transitions": {"": {"hi": 1.0}, "*": {"EOS": 1.0}}}"#,
        )
        .unwrap();
        let corpus = crate::corpus::generate_synthetic(&crate::corpus::SyntheticSpec {
            count: 3,
            ..Default::default()
        });
        let preds: Vec<GroundingPrediction<f64>> = corpus
            .instances
            .iter()
            .map(|i| GroundingPrediction {
                instance_id: i.id.clone(),
                knowledge_index: 0,
                persona_index: None,
                persona_scores: vec![],
                knowledge_best_score: 0.0,
            })
            .collect();
        let cfg = DecodeConfig::<f64> {
            min_length: 1,
            ..Default::default()
        };
        let out = generate_responses(&corpus, &preds, &lm, &cfg).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.text == "hi"));
        assert!(matches!(
            generate_responses(&corpus, &preds[..1], &lm, &cfg),
            Err(GenerationError::MissingPrediction(_))
        ));
    }
}
