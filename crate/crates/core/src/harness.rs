//! One-dimensional ablation sweeps with deterministic report tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::decoder::{DecodeConfig, LanguageModel, Strategy};
use crate::generation::{
    align_records, evaluate_generation, generate_responses, references_from_corpus, GenerationError,
};
use crate::grounding::{
    evaluate_grounding, ground_corpus, GroundingConfig, GroundingError, GroundingMode, PersonaMode,
};
use crate::scalar::Real;
use crate::scorer::ScorerBackend;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sweep has no values")]
    NoValues,
    #[error("axis {axis}: invalid value {value}: {message}")]
    InvalidValue { axis: Axis, value: String, message: String },
    #[error("axis {0} needs a language model")]
    MissingLm(Axis),
    #[error("{axis} = {value}: {source}")]
    Cell {
        axis: Axis,
        value: String,
        #[source]
        source: CellError,
    },
}

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Threshold,
    GroundingMode,
    PersonaMode,
    BeamSize,
    MaxLength,
    MinLength,
    Alpha,
    Strategy,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Threshold => "threshold",
            Axis::GroundingMode => "grounding_mode",
            Axis::PersonaMode => "persona_mode",
            Axis::BeamSize => "beam_size",
            Axis::MaxLength => "max_length",
            Axis::MinLength => "min_length",
            Axis::Alpha => "alpha",
            Axis::Strategy => "strategy",
        }
    }

    /// Grounding axes are scored by retrieval accuracy, the rest by BLEU/ROUGE-L.
    pub fn is_grounding(self) -> bool {
        matches!(self, Axis::Threshold | Axis::GroundingMode | Axis::PersonaMode)
    }

    pub fn columns(self) -> Vec<String> {
        let names: &[&str] = if self.is_grounding() {
            &["knowledge_acc", "persona_acc", "grounding_avg"]
        } else {
            &["bleu", "rouge_l"]
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real"))]
pub struct BaseConfig<T: Real> {
    pub grounding: GroundingConfig<T>,
    pub decode: DecodeConfig<T>,
}

impl<T: Real> Default for BaseConfig<T> {
    fn default() -> Self {
        Self {
            grounding: GroundingConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

/// Sweep description as stored in a sweep spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real"))]
pub struct SweepSpec<T: Real> {
    pub axis: Axis,
    pub values: Vec<serde_json::Value>,
    #[serde(default)]
    pub base: BaseConfig<T>,
    pub corpus: String,
    #[serde(default = "default_scorer")]
    pub scorer: String,
    #[serde(default)]
    pub lm: Option<String>,
    pub out: String,
}

fn default_scorer() -> String {
    "mock".to_string()
}

/// One resolved sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell<T: Real> {
    pub label: String,
    pub grounding: GroundingConfig<T>,
    pub decode: DecodeConfig<T>,
}

fn value_label(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Applies each axis value to the base configuration and validates the result.
pub fn resolve_cells<T: Real>(
    axis: Axis,
    values: &[serde_json::Value],
    base: &BaseConfig<T>,
) -> Result<Vec<SweepCell<T>>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::NoValues);
    }
    values
        .iter()
        .map(|value| {
            let label = value_label(value);
            let invalid = |message: String| HarnessError::InvalidValue {
                axis,
                value: label.clone(),
                message,
            };
            let real = || {
                value
                    .as_f64()
                    .map(T::lit)
                    .ok_or_else(|| invalid("expected a number".into()))
            };
            let count = || {
                value
                    .as_u64()
                    .map(|v| v as usize)
                    .ok_or_else(|| invalid("expected a non-negative integer".into()))
            };
            let text = || value.as_str().ok_or_else(|| invalid("expected a string".into()));
            let mut g = base.grounding;
            let mut d = base.decode;
            match axis {
                Axis::Threshold => g.threshold = real()?,
                Axis::GroundingMode => g.mode = text()?.parse::<GroundingMode>().map_err(invalid)?,
                Axis::PersonaMode => g.persona_mode = text()?.parse::<PersonaMode>().map_err(invalid)?,
                Axis::BeamSize => d.beam_size = count()?,
                Axis::MaxLength => d.max_length = count()?,
                Axis::MinLength => d.min_length = count()?,
                Axis::Alpha => d.alpha = real()?,
                Axis::Strategy => d.strategy = text()?.parse::<Strategy>().map_err(invalid)?,
            }
            g.validate().map_err(|e| invalid(e.to_string()))?;
            if !axis.is_grounding() {
                d.validate().map_err(|e| invalid(e.to_string()))?;
            }
            Ok(SweepCell {
                label,
                grounding: g,
                decode: d,
            })
        })
        .collect()
}

/// Runs a single cell: grounding accuracy for grounding axes, otherwise
/// generation metrics against the corpus's gold responses.
pub fn run_cell<T, S, L>(
    axis: Axis,
    cell: &SweepCell<T>,
    corpus: &Corpus,
    scorer: &S,
    lm: Option<&L>,
) -> Result<Vec<f64>, HarnessError>
where
    T: Real,
    S: ScorerBackend<T> + ?Sized,
    L: LanguageModel<T> + ?Sized,
{
    let wrap = |source: CellError| HarnessError::Cell {
        axis,
        value: cell.label.clone(),
        source,
    };
    let predictions = ground_corpus(corpus, scorer, scorer, &cell.grounding).map_err(|e| wrap(e.into()))?;
    if axis.is_grounding() {
        let s = evaluate_grounding(&predictions, corpus).map_err(|e| wrap(e.into()))?;
        return Ok(vec![
            s.knowledge_accuracy.as_f64(),
            s.persona_accuracy.as_f64(),
            s.grounding_average.as_f64(),
        ]);
    }
    let lm = lm.ok_or(HarnessError::MissingLm(axis))?;
    let scores = (|| {
        let references = references_from_corpus(corpus)?;
        let hypotheses = generate_responses(corpus, &predictions, lm, &cell.decode)?;
        let pairs = align_records(&hypotheses, &references)?;
        evaluate_generation::<T>(&pairs)
    })()
    .map_err(|e| wrap(e.into()))?;
    Ok(vec![scores.bleu.as_f64(), scores.rouge_l.as_f64()])
}

/// Runs every cell (concurrently on the current rayon pool) and assembles
/// the table in axis-value order. Any failing cell aborts the sweep.
pub fn run_sweep<T, S, L>(
    axis: Axis,
    values: &[serde_json::Value],
    base: &BaseConfig<T>,
    corpus: &Corpus,
    scorer: &S,
    lm: Option<&L>,
) -> Result<ReportTable, HarnessError>
where
    T: Real,
    S: ScorerBackend<T> + ?Sized,
    L: LanguageModel<T> + ?Sized,
{
    let cells = resolve_cells(axis, values, base)?;
    if !axis.is_grounding() && lm.is_none() {
        return Err(HarnessError::MissingLm(axis));
    }
    let rows = cells
        .par_iter()
        .map(|cell| {
            Ok(ReportRow {
                value: cell.label.clone(),
                cells: run_cell(axis, cell, corpus, scorer, lm)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(ReportTable {
        axis: axis.as_str().to_string(),
        columns: axis.columns(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub value: String,
    pub cells: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub axis: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    #[serde(flatten)]
    table: &'a ReportTable,
    /// Row index of the best value per column.
    best: Vec<usize>,
}

impl ReportTable {
    /// First row holding the maximum of each column (as rendered to 2 decimals).
    pub fn best_rows(&self) -> Vec<usize> {
        (0..self.columns.len())
            .map(|c| {
                let mut best = 0;
                for (r, row) in self.rows.iter().enumerate() {
                    if round2(row.cells[c]) > round2(self.rows[best].cells[c]) {
                        best = r;
                    }
                }
                best
            })
            .collect()
    }

    /// Aligned plain text; cells use two decimals and `*` flags each column's best.
    pub fn render_text(&self) -> String {
        let best = self.best_rows();
        let mut grid: Vec<Vec<String>> = vec![std::iter::once(self.axis.clone())
            .chain(self.columns.iter().cloned())
            .collect()];
        for (r, row) in self.rows.iter().enumerate() {
            let mut line = vec![row.value.clone()];
            for (c, v) in row.cells.iter().enumerate() {
                let flag = if best[c] == r { "*" } else { " " };
                line.push(format!("{v:.2}{flag}"));
            }
            grid.push(line);
        }
        let widths: Vec<usize> = (0..=self.columns.len())
            .map(|c| grid.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &grid {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&ReportJson {
            table: self,
            best: self.best_rows(),
        })
        .expect("report serializes");
        s.push('\n');
        s
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round()
}
