use std::path::{Path, PathBuf};

use anyhow::Result;
use pkground::decoder::{HttpLm, HttpLmConfig, LanguageModel, TabularLm};
use pkground::scorer::{HttpScorer, HttpScorerConfig, MockLexicalScorer, ScorerBackend};

use crate::UsageError;

pub type Scorer = Box<dyn ScorerBackend<f64>>;
pub type Lm = Box<dyn LanguageModel<f64>>;

/// Accepts `http:<url>` as well as a bare `http://` or `https://` URL.
fn http_url(spec: &str) -> Option<String> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Some(spec.to_string());
    }
    let rest = spec.strip_prefix("http:")?;
    if rest.starts_with("http://") || rest.starts_with("https://") {
        Some(rest.to_string())
    } else {
        Some(format!("http://{}", rest.trim_start_matches('/')))
    }
}

pub fn scorer(spec: &str) -> Result<Scorer> {
    if spec == "mock" {
        return Ok(Box::new(MockLexicalScorer));
    }
    match http_url(spec) {
        Some(url) => Ok(Box::new(HttpScorer::new(&url, HttpScorerConfig::default()))),
        None => Err(UsageError(format!("unknown scorer '{spec}', expected mock or http:<url>")).into()),
    }
}

pub enum LmSpec {
    Tabular(PathBuf),
    Http(String),
}

pub fn lm_spec(spec: &str) -> Result<LmSpec> {
    if let Some(path) = spec.strip_prefix("tabular:") {
        return Ok(LmSpec::Tabular(PathBuf::from(path)));
    }
    match http_url(spec) {
        Some(url) => Ok(LmSpec::Http(url)),
        None => Err(UsageError(format!(
            "unknown language model '{spec}', expected tabular:<path> or http:<url>"
        ))
        .into()),
    }
}

/// Builds the model; relative table paths resolve against `base_dir`.
pub fn language_model(spec: &LmSpec, base_dir: &Path, top_k: usize, eos: u32) -> Result<Lm> {
    Ok(match spec {
        LmSpec::Tabular(path) => Box::new(TabularLm::load(base_dir.join(path))?),
        LmSpec::Http(url) => Box::new(HttpLm::new(
            url,
            HttpLmConfig {
                top_k,
                eos_token: eos,
                ..Default::default()
            },
        )),
    })
}
