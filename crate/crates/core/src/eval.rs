//! Mean-average-precision scoring for per-label clip retrieval.
//!
//! A label's average precision credits each retrieved positive with
//! `j / r_j` — its index among the retrieved positives divided by its rank
//! in the list — normalized by the label's total positive count. Only a
//! fixed prefix of each ranking (100 entries by default) is scored.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::RetrievalResult;

/// Prefix length scored per ranking unless overridden.
pub const DEFAULT_EVAL_CUT: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("clip '{clip_id}' appears more than once in a ranking")]
    DuplicateInRanking { clip_id: String },
    #[error("truth label {label} is missing from the retrieval result")]
    MissingLabel { label: u32 },
    #[error("a label has no positive examples")]
    ZeroPositives,
}

/// Positive clip set per label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub positives: BTreeMap<u32, BTreeSet<String>>,
}

impl GroundTruth {
    /// Number of evaluated labels.
    pub fn q(&self) -> usize {
        self.positives.len()
    }

    /// Every label must have at least one positive example.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.positives.values().any(|set| set.is_empty()) {
            return Err(EvalError::ZeroPositives);
        }
        Ok(())
    }
}

/// Average precision of one ranking against a positive set.
///
/// `m` is the label's total positive count (the normalizer), which may
/// exceed the number of positives actually retrieved. Only the first
/// `cut` entries are scored; positives below the cut contribute nothing.
pub fn average_precision<S: AsRef<str>>(
    ranked: &[S],
    positives: &BTreeSet<String>,
    m: usize,
    cut: usize,
) -> Result<f64, EvalError> {
    if m == 0 {
        return Err(EvalError::ZeroPositives);
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for item in ranked {
        if !seen.insert(item.as_ref()) {
            return Err(EvalError::DuplicateInRanking {
                clip_id: item.as_ref().to_owned(),
            });
        }
    }

    let mut hits = 0usize;
    let mut sum = 0.0;
    for (index, item) in ranked.iter().take(cut).enumerate() {
        if positives.contains(item.as_ref()) {
            hits += 1;
            sum += hits as f64 / (index + 1) as f64;
        }
    }
    Ok(sum / m as f64)
}

/// Unweighted mean of per-label average precision over every truth label.
///
/// Labels whose list is empty score zero but still count in the mean; a
/// truth label absent from `result` (even as an empty list) is an error.
pub fn mean_average_precision(
    result: &RetrievalResult,
    truth: &GroundTruth,
    cut: usize,
) -> Result<f64, EvalError> {
    truth.validate()?;
    if truth.positives.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (label, positives) in &truth.positives {
        let list = result
            .lists
            .get(label)
            .ok_or(EvalError::MissingLabel { label: *label })?;
        let ids: Vec<&str> = list.iter().map(|s| s.clip_id.as_str()).collect();
        sum += average_precision(&ids, positives, positives.len(), cut)?;
    }
    Ok(sum / truth.positives.len() as f64)
}

/// Independent re-derivation of the same metric by prefix recounting.
///
/// For each scored position holding a positive, the precision of the
/// prefix ending there is recomputed from scratch by counting. Exists so
/// the fast path can be cross-checked; the two must agree within 1e-12.
pub fn oracle_map(
    result: &RetrievalResult,
    truth: &GroundTruth,
    cut: usize,
) -> Result<f64, EvalError> {
    truth.validate()?;
    if truth.positives.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (label, positives) in &truth.positives {
        let list = result
            .lists
            .get(label)
            .ok_or(EvalError::MissingLabel { label: *label })?;
        let ids: Vec<&str> = list.iter().map(|s| s.clip_id.as_str()).collect();
        for (i, a) in ids.iter().enumerate() {
            for b in ids.iter().skip(i + 1) {
                if a == b {
                    return Err(EvalError::DuplicateInRanking {
                        clip_id: (*a).to_owned(),
                    });
                }
            }
        }

        let scored = ids.len().min(cut);
        let mut ap = 0.0;
        for position in 1..=scored {
            if positives.contains(ids[position - 1]) {
                let prefix_hits = ids[..position]
                    .iter()
                    .filter(|id| positives.contains(**id))
                    .count();
                ap += prefix_hits as f64 / position as f64;
            }
        }
        total += ap / positives.len() as f64;
    }
    Ok(total / truth.positives.len() as f64)
}
