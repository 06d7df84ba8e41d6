use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pkground::decoder::Strategy;
use pkground::grounding::{DialogueScope, GroundingMode, PersonaMode};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "pkground",
    version,
    about = "Persona/knowledge grounding, grounded response decoding and evaluation",
    propagate_version = true
)]
pub struct Cli {
    /// Worker threads for grounding and decoding (default: logical cores)
    #[arg(long, global = true, value_parser = parse_positive)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus against the schema and report every violation
    Validate(ValidateArgs),
    /// Generate a synthetic corpus with known gold labels
    Synth(SynthArgs),
    /// Retrieve knowledge and persona for every dialogue
    Ground(GroundArgs),
    /// Score grounding predictions against gold labels
    EvalGrounding(EvalGroundingArgs),
    /// Export persona fine-tuning pairs against fixed true knowledge
    ExportFinetune(ExportFinetuneArgs),
    /// Generate grounded responses
    Decode(DecodeCmdArgs),
    /// Score generated responses with BLEU and ROUGE-L
    EvalGen(EvalGenArgs),
    /// Run a one-axis ablation sweep described by a JSON spec
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Synth(_) => "synth",
            Command::Ground(_) => "ground",
            Command::EvalGrounding(_) => "eval-grounding",
            Command::ExportFinetune(_) => "export-finetune",
            Command::Decode(_) => "decode",
            Command::EvalGen(_) => "eval-gen",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArgs {
    /// Corpus file (JSONL, one dialogue per line)
    #[arg(long, default_value = "corpus.jsonl")]
    pub corpus: PathBuf,
    /// Drop unknown keys with a warning instead of rejecting the corpus
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GroundingArgs {
    /// Question layout for knowledge search: pd_k, p_k or d_k
    #[arg(long, default_value = "pd_k")]
    pub mode: GroundingMode,
    /// Question layout for persona search: pd_ktrue or p_ktrue
    #[arg(long, default_value = "pd_ktrue")]
    pub persona_mode: PersonaMode,
    /// Minimum persona score for retrieval, in [0, 1]
    #[arg(long, default_value_t = 0.5, value_parser = parse_unit)]
    pub threshold: f64,
    /// Dialogue text used in questions: last_turn or full_history
    #[arg(long, default_value = "last_turn")]
    pub dialogue_scope: DialogueScope,
    /// Knowledge scorer: mock or http:<url>
    #[arg(long, default_value = "mock")]
    pub scorer: String,
    /// Persona scorer, e.g. a fine-tuned model (default: same as --scorer)
    #[arg(long)]
    pub persona_scorer: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecodeArgs {
    /// Language model: tabular:<path> or http:<url>
    #[arg(long)]
    pub lm: String,
    /// Decoding strategy: beam or nucleus
    #[arg(long, default_value = "beam")]
    pub strategy: Strategy,
    /// Beam size
    #[arg(long, default_value_t = 10, value_parser = parse_positive)]
    pub beam: usize,
    /// Minimum response length in tokens, counting EOS
    #[arg(long, default_value_t = 5, value_parser = parse_positive)]
    pub min_len: usize,
    /// Maximum response length in tokens
    #[arg(long, default_value_t = 80, value_parser = parse_positive)]
    pub max_len: usize,
    /// Length normalization exponent
    #[arg(long, default_value_t = 1.0, value_parser = parse_non_negative)]
    pub alpha: f64,
    /// Nucleus mass for --strategy nucleus, in (0, 1]
    #[arg(long, default_value_t = 0.9, value_parser = parse_top_p)]
    pub top_p: f64,
    /// Sampling seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rank beam candidates by normalized score instead of raw log-probability
    #[arg(long)]
    pub normalize_during_pruning: bool,
    /// Entries requested per step from an http language model
    #[arg(long, default_value_t = 50, value_parser = parse_positive)]
    pub lm_top_k: usize,
    /// EOS token id of an http language model
    #[arg(long, default_value_t = 2)]
    pub lm_eos: u32,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Also write the report as JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Number of dialogues
    #[arg(long, default_value_t = 200, value_parser = parse_positive)]
    pub count: usize,
    /// Generator seed
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Persona candidates per dialogue
    #[arg(long, default_value_t = 5, value_parser = parse_positive)]
    pub personas: usize,
    /// Knowledge candidates per dialogue
    #[arg(long, default_value_t = 10, value_parser = parse_positive)]
    pub knowledge: usize,
    /// Share of dialogues without a gold persona, in [0, 1]
    #[arg(long, default_value_t = 0.1, value_parser = parse_unit)]
    pub no_persona_fraction: f64,
    /// Output corpus
    #[arg(long, default_value = "corpus.jsonl")]
    pub out: PathBuf,
    /// Also write the gold responses as a reference file
    #[arg(long)]
    pub refs_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GroundArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub grounding: GroundingArgs,
    /// Output predictions (JSONL)
    #[arg(long, default_value = "predictions.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalGroundingArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Grounding predictions (JSONL)
    #[arg(long, default_value = "predictions.jsonl")]
    pub predictions: PathBuf,
    /// Output scores (JSON)
    #[arg(long, default_value = "grounding_scores.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportFinetuneArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Take the fixed knowledge from these predictions instead of gold labels
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Dialogue text used in questions: last_turn or full_history
    #[arg(long, default_value = "last_turn")]
    pub dialogue_scope: DialogueScope,
    /// Output pairs (JSONL)
    #[arg(long, default_value = "finetune.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DecodeCmdArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Grounding predictions to condition on (default: ground with --scorer)
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub grounding: GroundingArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Output hypotheses (JSONL of {"id", "text"})
    #[arg(long, default_value = "hyps.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalGenArgs {
    /// Hypotheses (JSONL of {"id", "text"})
    #[arg(long, default_value = "hyps.jsonl")]
    pub hyps: PathBuf,
    /// References (JSONL of {"id", "text"}); defaults to the corpus responses
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Output scores (JSON)
    #[arg(long, default_value = "gen_scores.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// Sweep spec (JSON); relative paths inside it resolve against its directory
    #[arg(long, default_value = "sweep.json")]
    pub spec: PathBuf,
    /// Report path, overriding the spec's "out"
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_top_p(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be a finite value >= 0"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("'{s}' is not a positive integer")),
    }
}
