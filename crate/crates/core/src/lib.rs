//! Persona- and knowledge-grounded dialogue: retrieval by permutative
//! question answering, fine-tuning pair export, beam and nucleus decoding,
//! BLEU/ROUGE-L evaluation and ablation sweeps.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the `*64` and
//! `*32` aliases below fix the scalar type.

pub mod corpus;
pub mod decoder;
pub mod finetune;
pub mod generation;
pub mod grounding;
pub mod harness;
pub mod metrics;
pub mod remote;
pub mod scalar;
pub mod scorer;

pub use corpus::{Corpus, CorpusError, DialogueInstance, LoadOptions, SyntheticSpec};
pub use decoder::{
    BeamHypothesis, DecodeConfig, DecodeError, DecodeResult, LanguageModel, LmError, Strategy, TabularLm, TokenId,
};
pub use grounding::{
    DialogueScope, GroundingConfig, GroundingError, GroundingMode, GroundingPrediction, GroundingScores, PersonaMode,
    ScoreMatrix,
};
pub use harness::{Axis, ReportTable, SweepSpec};
pub use metrics::{EvalPair, RougeScore};
pub use scalar::Real;
pub use scorer::{MockLexicalScorer, ScorerBackend, ScorerError, TextPair};

pub type ScoreMatrix64 = ScoreMatrix<f64>;
pub type GroundingConfig64 = GroundingConfig<f64>;
pub type GroundingPrediction64 = GroundingPrediction<f64>;
pub type GroundingScores64 = GroundingScores<f64>;
pub type DecodeConfig64 = DecodeConfig<f64>;
pub type DecodeResult64 = DecodeResult<f64>;
pub type BeamHypothesis64 = BeamHypothesis<f64>;
pub type SweepSpec64 = SweepSpec<f64>;

pub type ScoreMatrix32 = ScoreMatrix<f32>;
pub type GroundingConfig32 = GroundingConfig<f32>;
pub type GroundingPrediction32 = GroundingPrediction<f32>;
pub type GroundingScores32 = GroundingScores<f32>;
pub type DecodeConfig32 = DecodeConfig<f32>;
pub type DecodeResult32 = DecodeResult<f32>;
pub type BeamHypothesis32 = BeamHypothesis<f32>;
