//! Truth tables, retrieval files, per-model prediction dumps and metric
//! reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::eval::{average_precision, mean_average_precision, EvalError, GroundTruth};
use crate::model::{Modality, PredictionEntry, PredictionList, RetrievalResult, ScoredClip};
use crate::rankfusion::ModelPredictions;
use crate::router::PipelineOutput;

// ---------------------------------------------------------------------------
// Ground truth: one JSON record per label.

#[derive(Serialize, Deserialize)]
struct TruthLine {
    label: u32,
    positives: Vec<String>,
}

pub fn write_truth(truth: &GroundTruth, path: &Path) -> Result<(), IoError> {
    let mut writer = BufWriter::new(fs::File::create(path)?);
    for (label, positives) in &truth.positives {
        let line = TruthLine {
            label: *label,
            positives: positives.iter().cloned().collect(),
        };
        serde_json::to_writer(&mut writer, &line)
            .map_err(|e| IoError::MalformedRecord { line: 0, message: e.to_string() })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth, IoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut truth = GroundTruth::default();
    for (idx, line_result) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line_result?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: TruthLine =
            serde_json::from_str(&text).map_err(|e| IoError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        if truth.positives.contains_key(&parsed.label) {
            return Err(IoError::MalformedRecord {
                line: line_no,
                message: format!("label {} appears twice", parsed.label),
            });
        }
        truth
            .positives
            .insert(parsed.label, parsed.positives.into_iter().collect());
    }
    Ok(truth)
}

// ---------------------------------------------------------------------------
// Retrieval files: one whitespace-separated line per label.

/// Writes `label clip_id clip_id ...` per label in ascending label order.
pub fn write_retrieval(result: &RetrievalResult, path: &Path) -> Result<(), IoError> {
    let mut writer = BufWriter::new(fs::File::create(path)?);
    for (label, list) in &result.lists {
        write!(writer, "{label}")?;
        for scored in list {
            write!(writer, " {}", scored.clip_id)?;
        }
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a retrieval file back. Scores are synthesized as `1/rank`
/// placeholders; only the order is meaningful after a round trip.
pub fn read_retrieval(path: &Path) -> Result<RetrievalResult, IoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut result = RetrievalResult::default();
    for (idx, line_result) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line_result?;
        if text.trim().is_empty() {
            continue;
        }
        let mut tokens = text.split_whitespace();
        let label: u32 = tokens
            .next()
            .expect("non-empty line has a first token")
            .parse()
            .map_err(|e| IoError::MalformedRecord {
                line: line_no,
                message: format!("bad label: {e}"),
            })?;
        if result.lists.contains_key(&label) {
            return Err(IoError::MalformedRecord {
                line: line_no,
                message: format!("label {label} appears twice"),
            });
        }
        let list: Vec<ScoredClip> = tokens
            .enumerate()
            .map(|(rank, clip_id)| ScoredClip {
                clip_id: clip_id.to_owned(),
                weighted_score: 1.0 / (rank + 1) as f64,
            })
            .collect();
        result.lists.insert(label, list);
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// Per-model prediction lists: one JSON record per (model, label).

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    model: String,
    label: u32,
    entries: Vec<PredictionEntry>,
}

pub fn write_predictions(predictions: &ModelPredictions, path: &Path) -> Result<(), IoError> {
    let mut writer = BufWriter::new(fs::File::create(path)?);
    for (model, per_label) in predictions {
        for (label, list) in per_label {
            let line = PredictionLine {
                model: model.clone(),
                label: *label,
                entries: list.entries.clone(),
            };
            serde_json::to_writer(&mut writer, &line)
                .map_err(|e| IoError::MalformedRecord { line: 0, message: e.to_string() })?;
            writer.write_all(b"\n")?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<ModelPredictions, IoError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut predictions = ModelPredictions::new();
    for (idx, line_result) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line_result?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: PredictionLine =
            serde_json::from_str(&text).map_err(|e| IoError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        let list = PredictionList {
            label: parsed.label,
            entries: parsed.entries,
        };
        list.validate().map_err(|e| IoError::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        let per_label = predictions.entry(parsed.model).or_default();
        if per_label.contains_key(&parsed.label) {
            return Err(IoError::MalformedRecord {
                line: line_no,
                message: format!("duplicate (model, label {}) pair", parsed.label),
            });
        }
        per_label.insert(parsed.label, list);
    }
    Ok(predictions)
}

// ---------------------------------------------------------------------------
// Metric reports.

/// Machine-readable evaluation summary for one retrieval run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean average precision of the merged retrieval.
    pub map: f64,
    /// Ranking prefix length used throughout.
    pub cut: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub part_a_map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub part_b_map: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_modality_map: BTreeMap<Modality, f64>,
    pub per_label_ap: BTreeMap<u32, f64>,
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<(), IoError> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| IoError::MalformedRecord { line: 0, message: e.to_string() })?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport, IoError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::MalformedManifest(e.to_string()))
}

fn per_label_ap(
    result: &RetrievalResult,
    truth: &GroundTruth,
    cut: usize,
) -> Result<BTreeMap<u32, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for (label, positives) in &truth.positives {
        let list = result
            .lists
            .get(label)
            .ok_or(EvalError::MissingLabel { label: *label })?;
        let ids: Vec<&str> = list.iter().map(|s| s.clip_id.as_str()).collect();
        out.insert(
            *label,
            average_precision(&ids, positives, positives.len(), cut)?,
        );
    }
    Ok(out)
}

/// Summarizes a full pipeline run against ground truth: overall, per
/// side, per modality and per label.
pub fn build_report(
    output: &PipelineOutput,
    truth: &GroundTruth,
    cut: usize,
) -> Result<MetricsReport, EvalError> {
    let map = mean_average_precision(&output.fused, truth, cut)?;
    let part_a_map = mean_average_precision(&output.part_a, truth, cut)?;
    let part_b_map = mean_average_precision(&output.part_b, truth, cut)?;
    let mut per_modality_map = BTreeMap::new();
    for (modality, result) in &output.per_modality {
        per_modality_map.insert(*modality, mean_average_precision(result, truth, cut)?);
    }
    Ok(MetricsReport {
        map,
        cut,
        part_a_map: Some(part_a_map),
        part_b_map: Some(part_b_map),
        per_modality_map,
        per_label_ap: per_label_ap(&output.fused, truth, cut)?,
    })
}
