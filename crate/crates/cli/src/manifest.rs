//! Run manifests written next to every output as `<output>.manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    /// sha256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub backends: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

/// `SOURCE_DATE_EPOCH` when set, so reruns can be byte-identical.
pub fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(Utc::now)
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Recorder {
    manifest: RunManifest,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &str, argv: &[String]) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                argv: argv.to_vec(),
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                backends: BTreeMap::new(),
                tool_version: format!("pkground {}", env!("CARGO_PKG_VERSION")),
                started_at: timestamp(),
                finished_at: String::new(),
            },
            outputs: Vec::new(),
        }
    }

    pub fn config<C: Serialize>(&mut self, config: &C) {
        self.manifest.config = serde_json::to_value(config).expect("config serializes");
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn backend(&mut self, role: &str, identity: String) {
        self.manifest.backends.insert(role.to_string(), identity);
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Digests the outputs and writes one manifest beside each of them.
    pub fn finish(mut self) -> Result<()> {
        for path in &self.outputs {
            let digest = sha256_file(path)?;
            self.manifest.outputs.insert(path.display().to_string(), digest);
        }
        self.manifest.finished_at = timestamp();
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        for path in &self.outputs {
            let target = manifest_path(path);
            fs::write(&target, &text).with_context(|| format!("cannot write {}", target.display()))?;
        }
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
