//! Persona-knowledge grounding.
//!
//! Every persona is paired with every knowledge candidate as a Q&A pair
//! (`"{persona} {dialogue}"` against `"{knowledge}"`), the knowledge of the
//! best-scoring pair is selected, and the persona is then re-scored against
//! that fixed knowledge and kept only if its score reaches the threshold.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DialogueInstance};
use crate::scalar::{first_argmax, Real};
use crate::scorer::{score_batch, ScorerBackend, ScorerError, TextPair};

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("instance '{id}': persona index {index} out of range ({count} personas)")]
    PersonaIndex { id: String, index: usize, count: usize },
    #[error("instance '{id}': knowledge index {index} out of range ({count} passages)")]
    KnowledgeIndex { id: String, index: usize, count: usize },
    #[error("instance '{id}' has no dialogue turns")]
    NoDialogue { id: String },
    #[error("instance '{id}': {source}")]
    Scorer {
        id: String,
        #[source]
        source: ScorerError,
    },
    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f64),
    #[error("score matrix entry {0} is outside [0, 1]")]
    MatrixEntry(f64),
    #[error("score matrix is empty or ragged")]
    MatrixShape,
    #[error("prediction for unknown instance '{0}'")]
    UnknownId(String),
    #[error("instance '{0}' has no gold knowledge label")]
    MissingGold(String),
    #[error("no predictions to evaluate")]
    NoPredictions,
    #[error("predictions line {line}: {message}")]
    PredictionFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Which context forms the question when searching for knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroundingMode {
    /// Persona + dialogue against knowledge, all n·m pairs.
    #[serde(rename = "pd_k")]
    PersonaDialogue,
    /// Persona alone against knowledge, all n·m pairs.
    #[serde(rename = "p_k")]
    Persona,
    /// Dialogue alone against knowledge, m pairs.
    #[serde(rename = "d_k")]
    Dialogue,
}

/// Question form when scoring personas against the selected knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PersonaMode {
    #[serde(rename = "p_ktrue")]
    Persona,
    #[serde(rename = "pd_ktrue")]
    PersonaDialogue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueScope {
    LastTurn,
    FullHistory,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }

        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!(
                        "unknown value '{other}', expected one of: {}",
                        [$($name),+].join(", ")
                    )),
                }
            }
        }
    };
}

str_enum!(GroundingMode {
    GroundingMode::PersonaDialogue => "pd_k",
    GroundingMode::Persona => "p_k",
    GroundingMode::Dialogue => "d_k",
});
str_enum!(PersonaMode {
    PersonaMode::Persona => "p_ktrue",
    PersonaMode::PersonaDialogue => "pd_ktrue",
});
str_enum!(DialogueScope {
    DialogueScope::LastTurn => "last_turn",
    DialogueScope::FullHistory => "full_history",
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig<T> {
    pub mode: GroundingMode,
    pub persona_mode: PersonaMode,
    /// Minimum persona score for a persona to be retrieved, in `[0, 1]`.
    pub threshold: T,
    pub dialogue_scope: DialogueScope,
}

impl<T: Real> Default for GroundingConfig<T> {
    fn default() -> Self {
        Self {
            mode: GroundingMode::PersonaDialogue,
            persona_mode: PersonaMode::PersonaDialogue,
            threshold: T::lit(0.5),
            dialogue_scope: DialogueScope::LastTurn,
        }
    }
}

impl<T: Real> GroundingConfig<T> {
    pub fn validate(&self) -> Result<(), GroundingError> {
        if self.threshold >= T::zero() && self.threshold <= T::one() {
            Ok(())
        } else {
            Err(GroundingError::Threshold(self.threshold.as_f64()))
        }
    }
}

/// One question/answer pair submitted to a scorer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub persona_index: Option<usize>,
    pub knowledge_index: usize,
    pub question: String,
    pub answer: String,
}

pub fn dialogue_text(instance: &DialogueInstance, scope: DialogueScope) -> Result<String, GroundingError> {
    let no_dialogue = || GroundingError::NoDialogue {
        id: instance.id.clone(),
    };
    match scope {
        DialogueScope::LastTurn => instance.last_turn().map(str::to_string).ok_or_else(no_dialogue),
        DialogueScope::FullHistory if instance.dialogue_turns.is_empty() => Err(no_dialogue()),
        DialogueScope::FullHistory => Ok(instance.dialogue_turns.join(" ")),
    }
}

fn persona_text(instance: &DialogueInstance, index: usize) -> Result<&str, GroundingError> {
    instance
        .personas
        .get(index)
        .map(String::as_str)
        .ok_or_else(|| GroundingError::PersonaIndex {
            id: instance.id.clone(),
            index,
            count: instance.personas.len(),
        })
}

fn knowledge_text(instance: &DialogueInstance, index: usize) -> Result<&str, GroundingError> {
    instance
        .knowledge
        .get(index)
        .map(String::as_str)
        .ok_or_else(|| GroundingError::KnowledgeIndex {
            id: instance.id.clone(),
            index,
            count: instance.knowledge.len(),
        })
}

/// `"{persona} {dialogue}"`, or the dialogue alone without a persona.
pub fn build_question(
    instance: &DialogueInstance,
    persona_index: Option<usize>,
    scope: DialogueScope,
) -> Result<String, GroundingError> {
    let dialogue = dialogue_text(instance, scope)?;
    match persona_index {
        Some(i) => Ok(format!("{} {}", persona_text(instance, i)?, dialogue)),
        None => Ok(dialogue),
    }
}

/// Pairs scored in knowledge search, in row-major order (persona, then knowledge).
pub fn knowledge_pairs<T: Real>(
    instance: &DialogueInstance,
    config: &GroundingConfig<T>,
) -> Result<Vec<QaPair>, GroundingError> {
    let questions: Vec<(Option<usize>, String)> = match config.mode {
        GroundingMode::PersonaDialogue => (0..instance.persona_count())
            .map(|i| Ok((Some(i), build_question(instance, Some(i), config.dialogue_scope)?)))
            .collect::<Result<_, GroundingError>>()?,
        GroundingMode::Persona => (0..instance.persona_count())
            .map(|i| Ok((Some(i), persona_text(instance, i)?.to_string())))
            .collect::<Result<_, GroundingError>>()?,
        GroundingMode::Dialogue => vec![(None, build_question(instance, None, config.dialogue_scope)?)],
    };
    let mut pairs = Vec::with_capacity(questions.len() * instance.knowledge_count());
    for (persona_index, question) in questions {
        for (j, answer) in instance.knowledge.iter().enumerate() {
            pairs.push(QaPair {
                persona_index,
                knowledge_index: j,
                question: question.clone(),
                answer: answer.clone(),
            });
        }
    }
    Ok(pairs)
}

/// Relevance scores over (persona, knowledge); a single row in `d_k` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix<T> {
    rows: usize,
    cols: usize,
    scores: Vec<T>,
}

impl<T: Real> ScoreMatrix<T> {
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, GroundingError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(GroundingError::MatrixShape);
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn from_row_major(rows: usize, cols: usize, scores: Vec<T>) -> Result<Self, GroundingError> {
        if rows == 0 || cols == 0 || scores.len() != rows * cols {
            return Err(GroundingError::MatrixShape);
        }
        if let Some(bad) = scores.iter().find(|s| !(**s >= T::zero() && **s <= T::one())) {
            return Err(GroundingError::MatrixEntry(bad.as_f64()));
        }
        Ok(Self { rows, cols, scores })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.scores[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.scores[row * self.cols..(row + 1) * self.cols]
    }

    /// Applies `f` to every entry. The result must stay within `[0, 1]`.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self, GroundingError> {
        Self::from_row_major(self.rows, self.cols, self.scores.iter().map(|&s| f(s)).collect())
    }
}

/// Scores every pair of the chosen mode in a single ordered batch.
pub fn compute_score_matrix<T: Real, S: ScorerBackend<T> + ?Sized>(
    instance: &DialogueInstance,
    backend: &S,
    config: &GroundingConfig<T>,
) -> Result<ScoreMatrix<T>, GroundingError> {
    let pairs: Vec<TextPair> = knowledge_pairs(instance, config)?
        .into_iter()
        .map(|p| TextPair::new(p.question, p.answer))
        .collect();
    let scores = score_batch(backend, &pairs).map_err(|source| GroundingError::Scorer {
        id: instance.id.clone(),
        source,
    })?;
    let rows = match config.mode {
        GroundingMode::Dialogue => 1,
        _ => instance.persona_count(),
    };
    ScoreMatrix::from_row_major(rows, instance.knowledge_count(), scores)
}

/// Knowledge column of the globally best entry. Ties go to the lowest
/// knowledge index, then the lowest persona index.
pub fn select_knowledge<T: Real>(matrix: &ScoreMatrix<T>) -> (usize, T) {
    let mut best = (0, matrix.get(0, 0));
    for j in 0..matrix.cols() {
        for i in 0..matrix.rows() {
            let s = matrix.get(i, j);
            if s > best.1 {
                best = (j, s);
            }
        }
    }
    best
}

/// Index of the best persona score if it reaches `threshold` (inclusive).
pub fn persona_from_scores<T: Real>(scores: &[T], threshold: T) -> Option<usize> {
    first_argmax(scores).filter(|&i| scores[i] >= threshold)
}

/// Scores each persona against the fixed knowledge passage and applies the threshold.
pub fn select_persona<T: Real, S: ScorerBackend<T> + ?Sized>(
    instance: &DialogueInstance,
    knowledge_index: usize,
    backend: &S,
    config: &GroundingConfig<T>,
) -> Result<(Option<usize>, Vec<T>), GroundingError> {
    let answer = knowledge_text(instance, knowledge_index)?;
    let pairs = (0..instance.persona_count())
        .map(|i| {
            let question = match config.persona_mode {
                PersonaMode::Persona => persona_text(instance, i)?.to_string(),
                PersonaMode::PersonaDialogue => build_question(instance, Some(i), config.dialogue_scope)?,
            };
            Ok(TextPair::new(question, answer))
        })
        .collect::<Result<Vec<_>, GroundingError>>()?;
    let scores = score_batch(backend, &pairs).map_err(|source| GroundingError::Scorer {
        id: instance.id.clone(),
        source,
    })?;
    Ok((persona_from_scores(&scores, config.threshold), scores))
}

/// Retrieved knowledge and (optional) persona for one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingPrediction<T> {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub knowledge_index: usize,
    pub persona_index: Option<usize>,
    pub persona_scores: Vec<T>,
    pub knowledge_best_score: T,
}

/// Knowledge search with `knowledge_backend`, then persona selection with
/// `persona_backend` against the chosen knowledge.
pub fn ground_instance<T, K, P>(
    instance: &DialogueInstance,
    knowledge_backend: &K,
    persona_backend: &P,
    config: &GroundingConfig<T>,
) -> Result<GroundingPrediction<T>, GroundingError>
where
    T: Real,
    K: ScorerBackend<T> + ?Sized,
    P: ScorerBackend<T> + ?Sized,
{
    config.validate()?;
    let matrix = compute_score_matrix(instance, knowledge_backend, config)?;
    let (knowledge_index, knowledge_best_score) = select_knowledge(&matrix);
    let (persona_index, persona_scores) = select_persona(instance, knowledge_index, persona_backend, config)?;
    Ok(GroundingPrediction {
        instance_id: instance.id.clone(),
        knowledge_index,
        persona_index,
        persona_scores,
        knowledge_best_score,
    })
}

/// Grounds every instance on the current rayon pool; output is in corpus order.
pub fn ground_corpus<T, K, P>(
    corpus: &Corpus,
    knowledge_backend: &K,
    persona_backend: &P,
    config: &GroundingConfig<T>,
) -> Result<Vec<GroundingPrediction<T>>, GroundingError>
where
    T: Real,
    K: ScorerBackend<T> + ?Sized,
    P: ScorerBackend<T> + ?Sized,
{
    config.validate()?;
    corpus
        .instances
        .par_iter()
        .map(|inst| ground_instance(inst, knowledge_backend, persona_backend, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingScores<T> {
    /// Percentages in `[0, 100]`.
    pub knowledge_accuracy: T,
    pub persona_accuracy: T,
    pub grounding_average: T,
    pub count: usize,
}

/// Knowledge is correct on an exact index match. Persona is correct when the
/// prediction is one of the gold personas, or when both are empty.
pub fn evaluate_grounding<T: Real>(
    predictions: &[GroundingPrediction<T>],
    corpus: &Corpus,
) -> Result<GroundingScores<T>, GroundingError> {
    if predictions.is_empty() {
        return Err(GroundingError::NoPredictions);
    }
    let by_id = corpus.index_by_id();
    let mut knowledge_hits = 0usize;
    let mut persona_hits = 0usize;
    for pred in predictions {
        let inst = by_id
            .get(pred.instance_id.as_str())
            .map(|&pos| &corpus.instances[pos])
            .ok_or_else(|| GroundingError::UnknownId(pred.instance_id.clone()))?;
        let gold_k = inst
            .gold_knowledge
            .ok_or_else(|| GroundingError::MissingGold(inst.id.clone()))?;
        if pred.knowledge_index == gold_k {
            knowledge_hits += 1;
        }
        let persona_ok = match pred.persona_index {
            Some(i) => inst.gold_persona.contains(&i),
            None => inst.gold_persona.is_empty(),
        };
        if persona_ok {
            persona_hits += 1;
        }
    }
    let total = T::from_count(predictions.len());
    let hundred = T::lit(100.0);
    let knowledge_accuracy = hundred * T::from_count(knowledge_hits) / total;
    let persona_accuracy = hundred * T::from_count(persona_hits) / total;
    Ok(GroundingScores {
        knowledge_accuracy,
        persona_accuracy,
        grounding_average: (knowledge_accuracy + persona_accuracy) / T::lit(2.0),
        count: predictions.len(),
    })
}

pub fn write_predictions<T: Real, W: Write>(predictions: &[GroundingPrediction<T>], mut out: W) -> io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_predictions<T: Real, R: BufRead>(input: R) -> Result<Vec<GroundingPrediction<T>>, GroundingError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pred: GroundingPrediction<T> =
            serde_json::from_str(&line).map_err(|e| GroundingError::PredictionFormat {
                line: line_no,
                message: e.to_string(),
            })?;
        if !seen.insert(pred.instance_id.clone()) {
            return Err(GroundingError::PredictionFormat {
                line: line_no,
                message: format!("duplicate id '{}'", pred.instance_id),
            });
        }
        out.push(pred);
    }
    Ok(out)
}

/// Predictions keyed by instance id.
pub fn predictions_by_id<T: Clone>(predictions: &[GroundingPrediction<T>]) -> HashMap<&str, &GroundingPrediction<T>> {
    predictions.iter().map(|p| (p.instance_id.as_str(), p)).collect()
}
