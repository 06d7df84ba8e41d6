//! Export of persona fine-tuning pairs: every persona of a dialogue paired
//! with that dialogue's true knowledge passage, never with other passages.

use std::collections::HashMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DialogueInstance};
use crate::grounding::{build_question, DialogueScope, GroundingError, GroundingPrediction};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("instance '{0}' has no gold knowledge label")]
    MissingGold(String),
    #[error("no prediction for instance '{0}'")]
    MissingPrediction(String),
    #[error("instance '{id}': predicted knowledge index {index} out of range")]
    PredictionRange { id: String, index: usize },
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetunePair {
    pub question: String,
    pub answer: String,
    /// 1 iff the persona is one of the gold personas.
    pub label: u8,
    pub instance_id: String,
    pub persona_index: usize,
}

/// Where the fixed knowledge passage of each dialogue comes from.
#[derive(Debug, Clone)]
pub enum KnowledgeSource {
    /// Labelled training data.
    Gold,
    /// Knowledge index per instance id, e.g. from grounding predictions.
    Predicted(HashMap<String, usize>),
}

impl KnowledgeSource {
    pub fn from_predictions<T>(predictions: &[GroundingPrediction<T>]) -> Self {
        KnowledgeSource::Predicted(
            predictions
                .iter()
                .map(|p| (p.instance_id.clone(), p.knowledge_index))
                .collect(),
        )
    }

    fn knowledge_index(&self, inst: &DialogueInstance) -> Result<usize, FinetuneError> {
        match self {
            KnowledgeSource::Gold => inst
                .gold_knowledge
                .ok_or_else(|| FinetuneError::MissingGold(inst.id.clone())),
            KnowledgeSource::Predicted(map) => {
                let &index = map
                    .get(&inst.id)
                    .ok_or_else(|| FinetuneError::MissingPrediction(inst.id.clone()))?;
                if index >= inst.knowledge_count() {
                    return Err(FinetuneError::PredictionRange {
                        id: inst.id.clone(),
                        index,
                    });
                }
                Ok(index)
            }
        }
    }
}

/// One pair per persona, in corpus order then persona order.
pub fn build_finetune_pairs(
    corpus: &Corpus,
    source: &KnowledgeSource,
    scope: DialogueScope,
) -> Result<Vec<FinetunePair>, FinetuneError> {
    let mut out = Vec::with_capacity(corpus.instances.iter().map(|i| i.persona_count()).sum());
    for inst in &corpus.instances {
        let k = source.knowledge_index(inst)?;
        let answer = &inst.knowledge[k];
        for i in 0..inst.persona_count() {
            out.push(FinetunePair {
                question: build_question(inst, Some(i), scope)?,
                answer: answer.clone(),
                label: u8::from(inst.gold_persona.contains(&i)),
                instance_id: inst.id.clone(),
                persona_index: i,
            });
        }
    }
    Ok(out)
}

/// Writes the pairs as JSONL and returns how many were written.
pub fn export_finetune_pairs<W: Write>(
    corpus: &Corpus,
    source: &KnowledgeSource,
    scope: DialogueScope,
    mut out: W,
) -> Result<usize, FinetuneError> {
    let pairs = build_finetune_pairs(corpus, source, scope)?;
    for pair in &pairs {
        serde_json::to_writer(&mut out, pair).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(pairs.len())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};

    fn instance(gold_persona: BTreeSet<usize>) -> DialogueInstance {
        DialogueInstance {
            id: "x".into(),
            dialogue_turns: vec!["what is it?".into()],
            personas: (0..5).map(|i| format!("persona {i}")).collect(),
            knowledge: (0..10).map(|i| format!("passage {i}")).collect(),
            gold_persona,
            gold_knowledge: Some(3),
            gold_response: None,
        }
    }

    fn corpus_of(instances: Vec<DialogueInstance>) -> Corpus {
        Corpus {
            instances,
            source_path: String::new(),
        }
    }

    #[test]
    fn five_pairs_with_fixed_answer_and_labels() {
        let corpus = corpus_of(vec![instance(BTreeSet::from([1]))]);
        let pairs = build_finetune_pairs(&corpus, &KnowledgeSource::Gold, DialogueScope::LastTurn).unwrap();
        assert_eq!(pairs.len(), 5);
        assert!(pairs.iter().all(|p| p.answer == "passage 3"));
        assert_eq!(pairs.iter().map(|p| p.label).collect::<Vec<_>>(), vec![0, 1, 0, 0, 0]);
        assert_eq!(pairs[2].question, "persona 2 what is it?");
    }

    #[test]
    fn no_persona_gives_all_zero_labels() {
        let corpus = corpus_of(vec![instance(BTreeSet::new())]);
        let pairs = build_finetune_pairs(&corpus, &KnowledgeSource::Gold, DialogueScope::LastTurn).unwrap();
        assert_eq!(pairs.len(), 5);
        assert!(pairs.iter().all(|p| p.label == 0));
    }

    #[test]
    fn predicted_source_uses_prediction() {
        let corpus = corpus_of(vec![instance(BTreeSet::from([0]))]);
        let source = KnowledgeSource::Predicted(HashMap::from([("x".to_string(), 7)]));
        let pairs = build_finetune_pairs(&corpus, &source, DialogueScope::LastTurn).unwrap();
        assert!(pairs.iter().all(|p| p.answer == "passage 7"));
    }

    #[test]
    fn missing_labels_or_predictions_name_the_instance() {
        let mut inst = instance(BTreeSet::new());
        inst.gold_knowledge = None;
        let corpus = corpus_of(vec![inst]);
        let err = build_finetune_pairs(&corpus, &KnowledgeSource::Gold, DialogueScope::LastTurn).unwrap_err();
        assert_eq!(err.to_string(), "instance 'x' has no gold knowledge label");
        let err = build_finetune_pairs(
            &corpus,
            &KnowledgeSource::Predicted(HashMap::new()),
            DialogueScope::LastTurn,
        )
        .unwrap_err();
        assert!(matches!(err, FinetuneError::MissingPrediction(id) if id == "x"));
    }

    #[test]
    fn synthetic_export_counts_and_is_stable() {
        let corpus = generate_synthetic(&SyntheticSpec::default());
        let mut a = Vec::new();
        let mut b = Vec::new();
        let n = export_finetune_pairs(&corpus, &KnowledgeSource::Gold, DialogueScope::LastTurn, &mut a).unwrap();
        export_finetune_pairs(&corpus, &KnowledgeSource::Gold, DialogueScope::LastTurn, &mut b).unwrap();
        assert_eq!(n, 200 * 5);
        assert_eq!(a, b);
        let first: serde_json::Value = serde_json::from_slice(a.split(|&c| c == b'\n').next().unwrap()).unwrap();
        let keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["answer", "instance_id", "label", "persona_index", "question"]);
    }
}
