use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use pkground::corpus::{
    generate_synthetic, load_corpus_with, parse_instances, validate_instances, write_corpus, Corpus, LoadOptions,
    SyntheticSpec,
};
use pkground::decoder::DecodeConfig;
use pkground::finetune::{export_finetune_pairs, KnowledgeSource};
use pkground::generation::{
    align_records, evaluate_generation, generate_responses, read_text_records, references_from_corpus,
    write_text_records, TextRecord,
};
use pkground::grounding::{
    evaluate_grounding, ground_corpus, read_predictions, write_predictions, GroundingConfig, GroundingPrediction,
};
use pkground::harness::{run_sweep, SweepSpec};
use serde::Serialize;

use crate::args::*;
use crate::backends::{self, LmSpec};
use crate::manifest::Recorder;
use crate::UsageError;

pub fn run(command: &Command, argv: &[String]) -> Result<ExitCode> {
    let mut rec = Recorder::start(command.name(), argv);
    let code = match command {
        Command::Validate(a) => validate(a, &mut rec)?,
        Command::Synth(a) => synth(a, &mut rec)?,
        Command::Ground(a) => ground(a, &mut rec)?,
        Command::EvalGrounding(a) => eval_grounding(a, &mut rec)?,
        Command::ExportFinetune(a) => export_finetune(a, &mut rec)?,
        Command::Decode(a) => decode(a, &mut rec)?,
        Command::EvalGen(a) => eval_gen(a, &mut rec)?,
        Command::Sweep(a) => sweep(a, &mut rec)?,
    };
    rec.finish()?;
    Ok(code)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn load(args: &CorpusArgs, rec: &mut Recorder) -> Result<Corpus> {
    rec.input(&args.corpus)?;
    Ok(load_corpus_with(&args.corpus, LoadOptions { lenient: args.lenient })?)
}

fn load_predictions(path: &Path, rec: &mut Recorder) -> Result<Vec<GroundingPrediction<f64>>> {
    rec.input(path)?;
    read_predictions(open(path)?).with_context(|| format!("in {}", path.display()))
}

fn grounding_config(args: &GroundingArgs) -> GroundingConfig<f64> {
    GroundingConfig {
        mode: args.mode,
        persona_mode: args.persona_mode,
        threshold: args.threshold,
        dialogue_scope: args.dialogue_scope,
    }
}

fn decode_config(args: &DecodeArgs) -> Result<DecodeConfig<f64>> {
    let config = DecodeConfig {
        strategy: args.strategy,
        beam_size: args.beam,
        min_length: args.min_len,
        max_length: args.max_len,
        alpha: args.alpha,
        top_p: args.top_p,
        seed: args.seed,
        normalize_during_pruning: args.normalize_during_pruning,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(config)
}

struct Scorers {
    knowledge: backends::Scorer,
    persona: Option<backends::Scorer>,
}

fn scorers(args: &GroundingArgs) -> Result<Scorers> {
    Ok(Scorers {
        knowledge: backends::scorer(&args.scorer)?,
        persona: args.persona_scorer.as_deref().map(backends::scorer).transpose()?,
    })
}

fn run_grounding(
    corpus: &Corpus,
    args: &GroundingArgs,
    scorers: &Scorers,
    rec: &mut Recorder,
) -> Result<Vec<GroundingPrediction<f64>>> {
    let knowledge = scorers.knowledge.as_ref();
    let persona = scorers.persona.as_deref().unwrap_or(knowledge);
    rec.backend("knowledge_scorer", knowledge.identity());
    rec.backend("persona_scorer", persona.identity());
    Ok(ground_corpus(corpus, knowledge, persona, &grounding_config(args))?)
}

fn validate(args: &ValidateArgs, rec: &mut Recorder) -> Result<ExitCode> {
    rec.config(args);
    rec.input(&args.corpus.corpus)?;
    let text = std::fs::read_to_string(&args.corpus.corpus)
        .with_context(|| format!("cannot read {}", args.corpus.corpus.display()))?;
    let parsed = parse_instances(
        &text,
        LoadOptions {
            lenient: args.corpus.lenient,
        },
    )?;
    let report = validate_instances(parsed.iter().map(|(_, inst)| inst));
    for v in &report.violations {
        println!("instance {} ({}): {}", v.position, v.id, v.message);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
        rec.output(path);
    }
    if parsed.is_empty() {
        println!("empty corpus");
        return Ok(ExitCode::from(2));
    }
    if report.is_empty() {
        println!("{} instance(s) valid", parsed.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} violation(s)", report.violations.len());
        Ok(ExitCode::from(2))
    }
}

fn synth(args: &SynthArgs, rec: &mut Recorder) -> Result<ExitCode> {
    let spec = SyntheticSpec {
        count: args.count,
        personas: args.personas,
        knowledge: args.knowledge,
        seed: args.seed,
        no_persona_fraction: args.no_persona_fraction,
    };
    rec.config(&spec);
    let corpus = generate_synthetic(&spec);
    write_corpus(&corpus, create(&args.out)?)?;
    rec.output(&args.out);
    if let Some(path) = &args.refs_out {
        write_text_records(&references_from_corpus(&corpus)?, create(path)?)?;
        rec.output(path);
    }
    println!("wrote {} dialogues to {}", corpus.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn ground(args: &GroundArgs, rec: &mut Recorder) -> Result<ExitCode> {
    rec.config(&grounding_config(&args.grounding));
    let scorers = scorers(&args.grounding)?;
    let corpus = load(&args.corpus, rec)?;
    let predictions = run_grounding(&corpus, &args.grounding, &scorers, rec)?;
    write_predictions(&predictions, create(&args.out)?)?;
    rec.output(&args.out);
    let without = predictions.iter().filter(|p| p.persona_index.is_none()).count();
    println!(
        "grounded {} dialogues ({} without persona) into {}",
        predictions.len(),
        without,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval_grounding(args: &EvalGroundingArgs, rec: &mut Recorder) -> Result<ExitCode> {
    rec.config(args);
    let corpus = load(&args.corpus, rec)?;
    let predictions = load_predictions(&args.predictions, rec)?;
    let scores = evaluate_grounding(&predictions, &corpus)?;
    write_json(&args.out, &scores)?;
    rec.output(&args.out);
    println!(
        "knowledge {:.2}  persona {:.2}  average {:.2}  ({} dialogues)",
        scores.knowledge_accuracy, scores.persona_accuracy, scores.grounding_average, scores.count
    );
    Ok(ExitCode::SUCCESS)
}

fn export_finetune(args: &ExportFinetuneArgs, rec: &mut Recorder) -> Result<ExitCode> {
    rec.config(args);
    let corpus = load(&args.corpus, rec)?;
    let source = match &args.predictions {
        Some(path) => KnowledgeSource::from_predictions(&load_predictions(path, rec)?),
        None => KnowledgeSource::Gold,
    };
    let n = export_finetune_pairs(&corpus, &source, args.dialogue_scope, create(&args.out)?)?;
    rec.output(&args.out);
    println!("wrote {n} pairs to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DecodeRun<'a> {
    grounding: Option<GroundingConfig<f64>>,
    decode: DecodeConfig<f64>,
    lm: &'a str,
}

fn decode(args: &DecodeCmdArgs, rec: &mut Recorder) -> Result<ExitCode> {
    let config = decode_config(&args.decode)?;
    let spec = backends::lm_spec(&args.decode.lm)?;
    rec.config(&DecodeRun {
        grounding: args.predictions.is_none().then(|| grounding_config(&args.grounding)),
        decode: config,
        lm: &args.decode.lm,
    });
    let scorers = scorers(&args.grounding)?;
    let corpus = load(&args.corpus, rec)?;
    let predictions = match &args.predictions {
        Some(path) => load_predictions(path, rec)?,
        None => run_grounding(&corpus, &args.grounding, &scorers, rec)?,
    };
    if let LmSpec::Tabular(path) = &spec {
        rec.input(path)?;
    }
    let lm = backends::language_model(&spec, Path::new(""), args.decode.lm_top_k, args.decode.lm_eos)?;
    rec.backend("language_model", lm.identity());
    let hyps = generate_responses(&corpus, &predictions, lm.as_ref(), &config)?;
    write_text_records(&hyps, create(&args.out)?)?;
    rec.output(&args.out);
    println!("decoded {} responses into {}", hyps.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn read_records(path: &Path, rec: &mut Recorder) -> Result<Vec<TextRecord>> {
    rec.input(path)?;
    Ok(read_text_records(open(path)?, &path.display().to_string())?)
}

fn eval_gen(args: &EvalGenArgs, rec: &mut Recorder) -> Result<ExitCode> {
    rec.config(args);
    let hyps = read_records(&args.hyps, rec)?;
    let refs = match &args.refs {
        Some(path) => read_records(path, rec)?,
        None => references_from_corpus(&load(&args.corpus, rec)?)?,
    };
    let pairs = align_records(&hyps, &refs)?;
    let scores = evaluate_generation::<f64>(&pairs)?;
    write_json(&args.out, &scores)?;
    rec.output(&args.out);
    println!(
        "BLEU {:.2}  ROUGE-L {:.2}  ({} pairs)",
        scores.bleu, scores.rouge_l, scores.count
    );
    Ok(ExitCode::SUCCESS)
}

fn json_sibling(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn sweep(args: &SweepArgs, rec: &mut Recorder) -> Result<ExitCode> {
    rec.input(&args.spec)?;
    let text = std::fs::read_to_string(&args.spec).with_context(|| format!("cannot read {}", args.spec.display()))?;
    let spec: SweepSpec<f64> =
        serde_json::from_str(&text).with_context(|| format!("invalid sweep spec {}", args.spec.display()))?;
    rec.config(&spec);
    let base_dir = args.spec.parent().unwrap_or(Path::new("")).to_path_buf();

    let corpus_path = base_dir.join(&spec.corpus);
    rec.input(&corpus_path)?;
    let corpus = load_corpus_with(&corpus_path, LoadOptions::default())?;
    let scorer = backends::scorer(&spec.scorer)?;
    rec.backend("scorer", scorer.identity());
    let lm = match &spec.lm {
        Some(s) => {
            let lm_spec = backends::lm_spec(s)?;
            if let LmSpec::Tabular(path) = &lm_spec {
                rec.input(&base_dir.join(path))?;
            }
            let lm = backends::language_model(&lm_spec, &base_dir, 50, 2)?;
            rec.backend("language_model", lm.identity());
            Some(lm)
        }
        None => None,
    };

    let table = run_sweep(
        spec.axis,
        &spec.values,
        &spec.base,
        &corpus,
        scorer.as_ref(),
        lm.as_deref(),
    )?;
    let out = args.out.clone().unwrap_or_else(|| base_dir.join(&spec.out));
    let mut w = create(&out)?;
    w.write_all(table.render_text().as_bytes())?;
    w.flush()?;
    let json = json_sibling(&out);
    let mut w = create(&json)?;
    w.write_all(table.to_json().as_bytes())?;
    w.flush()?;
    rec.output(&out);
    rec.output(&json);
    print!("{}", table.render_text());
    Ok(ExitCode::SUCCESS)
}
