use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LanguageModel, LmError, TokenId, MASS_TOLERANCE};
use crate::scalar::Real;

/// Fallback entry used when the generated prefix has no row of its own.
pub const WILDCARD_KEY: &str = "*";

/// On-disk form of a tabular LM. Keys of `transitions` are generated prefixes
/// joined by single spaces (`""` for the first step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularLmFile {
    pub vocab: Vec<String>,
    pub eos: String,
    pub transitions: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Context-free lookup-table language model.
#[derive(Debug, Clone)]
pub struct TabularLm {
    file: TabularLmFile,
    ids: HashMap<String, TokenId>,
    eos: TokenId,
    rows: HashMap<String, Vec<(TokenId, f64)>>,
    identity: String,
}

impl TabularLm {
    pub fn new(file: TabularLmFile) -> Result<Self, LmError> {
        let err = |m: String| Err(LmError::Table(m));
        if file.vocab.is_empty() {
            return err("empty vocabulary".into());
        }
        let mut ids = HashMap::with_capacity(file.vocab.len());
        for (i, tok) in file.vocab.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return err(format!(
                    "vocabulary entry {i} ({tok:?}) is empty or contains whitespace"
                ));
            }
            if ids.insert(tok.clone(), i as TokenId).is_some() {
                return err(format!("duplicate vocabulary entry {tok:?}"));
            }
        }
        let Some(&eos) = ids.get(&file.eos) else {
            return err(format!("eos token {:?} is not in the vocabulary", file.eos));
        };
        if !file.transitions.contains_key(WILDCARD_KEY) {
            return err(format!("missing \"{WILDCARD_KEY}\" fallback entry"));
        }
        let mut rows = HashMap::with_capacity(file.transitions.len());
        for (key, entry) in &file.transitions {
            let mut row = Vec::with_capacity(entry.len());
            let mut mass = 0.0;
            for (tok, &p) in entry {
                let Some(&id) = ids.get(tok) else {
                    return err(format!("entry {key:?}: token {tok:?} is not in the vocabulary"));
                };
                if !(0.0..=1.0).contains(&p) {
                    return err(format!("entry {key:?}: probability {p} of {tok:?} is outside [0, 1]"));
                }
                mass += p;
                if p > 0.0 {
                    row.push((id, p));
                }
            }
            if (mass - 1.0).abs() > MASS_TOLERANCE {
                return err(format!("entry {key:?}: probabilities sum to {mass}"));
            }
            row.sort_by_key(|&(id, _)| id);
            rows.insert(key.clone(), row);
        }
        Ok(Self {
            file,
            ids,
            eos,
            rows,
            identity: "tabular".into(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, LmError> {
        let file: TabularLmFile = serde_json::from_str(text).map_err(|e| LmError::Table(e.to_string()))?;
        Self::new(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LmError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut lm = Self::from_json_str(&text)?;
        lm.identity = format!("tabular:{}", path.display());
        Ok(lm)
    }

    pub fn file(&self) -> &TabularLmFile {
        &self.file
    }

    pub fn vocab_size(&self) -> usize {
        self.file.vocab.len()
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    fn token_str(&self, id: TokenId) -> Result<&str, LmError> {
        self.file
            .vocab
            .get(id as usize)
            .map(String::as_str)
            .ok_or(LmError::UnknownToken(id))
    }

    /// Probabilities (not logs) of the next token after `generated`.
    pub fn probabilities(&self, generated: &[TokenId]) -> Result<&[(TokenId, f64)], LmError> {
        let key = generated
            .iter()
            .map(|&t| self.token_str(t))
            .collect::<Result<Vec<_>, _>>()?
            .join(" ");
        let row = self
            .rows
            .get(&key)
            .or_else(|| self.rows.get(WILDCARD_KEY))
            .expect("wildcard entry checked at construction");
        Ok(row)
    }
}

impl<T: Real> LanguageModel<T> for TabularLm {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn eos_token(&self) -> TokenId {
        self.eos
    }

    fn next_log_probs(&self, _context: &[TokenId], generated: &[TokenId]) -> Result<Vec<(TokenId, T)>, LmError> {
        Ok(self
            .probabilities(generated)?
            .iter()
            .map(|&(t, p)| (t, T::lit(p.ln())))
            .collect())
    }

    /// Whitespace tokens found in the vocabulary; other words are dropped,
    /// since the table ignores context.
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        Ok(text.split_whitespace().filter_map(|w| self.token_id(w)).collect())
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, LmError> {
        Ok(tokens
            .iter()
            .map(|&t| self.token_str(t))
            .collect::<Result<Vec<_>, _>>()?
            .join(" "))
    }
}
