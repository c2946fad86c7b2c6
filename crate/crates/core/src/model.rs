//! Domain types shared across the pipeline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on per-label prediction lists; fusion always consumes lists cut
/// at this length, whatever the final retrieval cut is.
pub const PREDICTION_LIST_CAP: usize = 100;

/// A fixed-dimension real feature vector for one frame or clip in one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, ValidationError> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ValidationError::NonFiniteValue {
                field: "embedding",
                value: *v,
            });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One video frame's face embedding with its quality and detection scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub embedding: Embedding,
    /// L2-norm-derived face quality; nonnegative, working range 0..=200.
    pub quality_score: f64,
    /// Face detector confidence in `[0, 1]`.
    pub detection_score: f64,
}

impl FrameObservation {
    pub fn new(
        embedding: Embedding,
        quality_score: f64,
        detection_score: f64,
    ) -> Result<Self, ValidationError> {
        let frame = Self {
            embedding,
            quality_score,
            detection_score,
        };
        frame.check_scores()?;
        Ok(frame)
    }

    fn check_scores(&self) -> Result<(), ValidationError> {
        if !self.quality_score.is_finite() || self.quality_score < 0.0 {
            return Err(ValidationError::ScoreOutOfRange {
                field: "quality_score",
                value: self.quality_score,
            });
        }
        if !self.detection_score.is_finite()
            || !(0.0..=1.0).contains(&self.detection_score)
        {
            return Err(ValidationError::ScoreOutOfRange {
                field: "detection_score",
                value: self.detection_score,
            });
        }
        Ok(())
    }
}

/// Information channel an embedding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Head,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Face, Modality::Head, Modality::Audio];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Head => "head",
            Modality::Audio => "audio",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "face" => Ok(Modality::Face),
            "head" => Ok(Modality::Head),
            "audio" => Ok(Modality::Audio),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// One video clip: optional per-frame face observations, optional
/// per-modality clip embeddings, optional ground-truth identity.
///
/// Distractor clips (unknown identities) carry `label: None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameObservation>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub clip_embeddings: BTreeMap<Modality, Embedding>,
}

impl ClipRecord {
    pub fn has_modality(&self, modality: Modality) -> bool {
        self.clip_embeddings.contains_key(&modality)
    }
}

/// Expected embedding dimensions, per modality plus the frame stream.
///
/// Frames carry face embeddings, so `frame_dim` normally equals the face
/// entry; it is kept separate so frame-only corpora stay expressible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionConfig {
    pub frame_dim: usize,
    pub clip_dims: BTreeMap<Modality, usize>,
}

impl DimensionConfig {
    /// Single shared dimension for frames and all three modalities.
    pub fn uniform(dim: usize) -> Self {
        Self {
            frame_dim: dim,
            clip_dims: Modality::ALL.iter().map(|m| (*m, dim)).collect(),
        }
    }
}

/// One entry of a per-label ranked prediction list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub clip_id: String,
    /// Model confidence that the clip matches the list's label, in `[0, 1]`.
    pub result_score: f64,
    /// 1-indexed position of the entry within the list.
    pub rank_score: u32,
}

/// Ranked top-K clips one model predicts for one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionList {
    pub label: u32,
    pub entries: Vec<PredictionEntry>,
}

impl PredictionList {
    /// Builds a list from `(clip_id, result_score)` pairs already sorted by
    /// descending score, assigning rank scores 1..=K and cutting at
    /// [`PREDICTION_LIST_CAP`].
    pub fn from_ranked(label: u32, ranked: impl IntoIterator<Item = (String, f64)>) -> Self {
        let entries = ranked
            .into_iter()
            .take(PREDICTION_LIST_CAP)
            .enumerate()
            .map(|(i, (clip_id, result_score))| PredictionEntry {
                clip_id,
                result_score,
                rank_score: (i + 1) as u32,
            })
            .collect();
        Self { label, entries }
    }

    /// Checks the list invariants: rank scores are exactly 1..=K in order,
    /// result scores are non-increasing, no duplicate clip ids, length
    /// within the cap.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.entries.len() > PREDICTION_LIST_CAP {
            return Err(ValidationError::ListTooLong {
                label: self.label,
                len: self.entries.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.rank_score as usize != i + 1 {
                return Err(ValidationError::BadRankScore {
                    label: self.label,
                    rank: entry.rank_score,
                    position: i + 1,
                });
            }
            if !(0.0..=1.0).contains(&entry.result_score) {
                return Err(ValidationError::ScoreOutOfRange {
                    field: "result_score",
                    value: entry.result_score,
                });
            }
            if i > 0 && entry.result_score > self.entries[i - 1].result_score {
                return Err(ValidationError::ScoresNotSorted { label: self.label });
            }
            if !seen.insert(entry.clip_id.as_str()) {
                return Err(ValidationError::DuplicateClip {
                    label: self.label,
                    clip_id: entry.clip_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// A clip id with its fused weighted score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredClip {
    pub clip_id: String,
    pub weighted_score: f64,
}

/// Final per-identity ranked clip lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// label -> clips sorted by descending weighted score.
    pub lists: BTreeMap<u32, Vec<ScoredClip>>,
}

impl RetrievalResult {
    /// Ranked clip ids for one label, best first.
    pub fn ranked_ids(&self, label: u32) -> Vec<&str> {
        self.lists
            .get(&label)
            .map(|l| l.iter().map(|s| s.clip_id.as_str()).collect())
            .unwrap_or_default()
    }
}

/// Violation of a core type invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("{field}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("clip `{clip_id}` has neither frames nor clip embeddings")]
    EmptyClip { clip_id: String },
    #[error("{field} out of range: {value}")]
    ScoreOutOfRange { field: &'static str, value: f64 },
    #[error("{field} contains non-finite value {value}")]
    NonFiniteValue { field: &'static str, value: f64 },
    #[error("label {label}: rank_score {rank} at position {position}")]
    BadRankScore { label: u32, rank: u32, position: usize },
    #[error("label {label}: result scores not non-increasing")]
    ScoresNotSorted { label: u32 },
    #[error("label {label}: duplicate clip `{clip_id}`")]
    DuplicateClip { label: u32, clip_id: String },
    #[error("label {label}: prediction list has {len} entries (cap {cap})", cap = PREDICTION_LIST_CAP)]
    ListTooLong { label: u32, len: usize },
}

/// Checks every [`ClipRecord`] invariant against the configured dimensions.
pub fn validate_clip(clip: &ClipRecord, config: &DimensionConfig) -> Result<(), ValidationError> {
    if clip.frames.is_empty() && clip.clip_embeddings.is_empty() {
        return Err(ValidationError::EmptyClip {
            clip_id: clip.clip_id.clone(),
        });
    }
    for frame in &clip.frames {
        frame.check_scores()?;
        if !frame.embedding.is_finite() {
            return Err(ValidationError::NonFiniteValue {
                field: "frame embedding",
                value: f64::NAN,
            });
        }
        if frame.embedding.dim() != config.frame_dim {
            return Err(ValidationError::DimensionMismatch {
                field: "frame embedding",
                expected: config.frame_dim,
                actual: frame.embedding.dim(),
            });
        }
    }
    for (modality, embedding) in &clip.clip_embeddings {
        if !embedding.is_finite() {
            return Err(ValidationError::NonFiniteValue {
                field: "clip embedding",
                value: f64::NAN,
            });
        }
        let expected = config.clip_dims.get(modality).copied().unwrap_or(0);
        if embedding.dim() != expected {
            return Err(ValidationError::DimensionMismatch {
                field: match modality {
                    Modality::Face => "face clip embedding",
                    Modality::Head => "head clip embedding",
                    Modality::Audio => "audio clip embedding",
                },
                expected,
                actual: embedding.dim(),
            });
        }
    }
    Ok(())
}
