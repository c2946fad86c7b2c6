//! Flat TOML run configuration shared by every pipeline stage.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::mlp::TrainConfig;
use crate::model::Modality;
use crate::router::RoutingConfig;
use crate::synthdata::SynthConfig;

/// Every tunable knob in one file. All fields are optional in the TOML;
/// missing ones fall back to the built-in defaults, and unknown keys are
/// rejected so typos fail loudly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    // Training.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_keep_prob: f64,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Single seed feeding corpus generation, fold assignment and every
    /// per-cell training run.
    pub seed: u64,

    // Routing and the model grids.
    pub quality_bands: Vec<f64>,
    pub part_a_quality_threshold: f64,
    pub part_a_detection_threshold: f64,
    pub folds: usize,

    // Synthetic corpus shape.
    pub n_identities: usize,
    pub n_clips_per_identity: usize,
    pub n_distractor_clips: usize,
    pub dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub face_noise: f64,
    pub head_noise: f64,
    pub audio_noise: f64,
    pub face_dropout: f64,
    pub head_dropout: f64,
    pub audio_dropout: f64,
    pub quality_noise_coupling: f64,
}

impl Default for FileConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let routing = RoutingConfig::default();
        let synth = SynthConfig::default();
        Self {
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            dropout_keep_prob: train.dropout_keep_prob,
            epochs: train.epochs,
            hidden_dim: train.hidden_dim,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_epsilon: train.adam_epsilon,
            seed: synth.seed,
            quality_bands: routing.quality_bands,
            part_a_quality_threshold: routing.part_a_quality_threshold,
            part_a_detection_threshold: routing.part_a_detection_threshold,
            folds: routing.folds,
            n_identities: synth.n_identities,
            n_clips_per_identity: synth.n_clips_per_identity,
            n_distractor_clips: synth.n_distractor_clips,
            dim: synth.dim,
            frames_min: synth.frames_per_clip.0,
            frames_max: synth.frames_per_clip.1,
            face_noise: synth.modality_noise[&Modality::Face],
            head_noise: synth.modality_noise[&Modality::Head],
            audio_noise: synth.modality_noise[&Modality::Audio],
            face_dropout: synth.modality_dropout[&Modality::Face],
            head_dropout: synth.modality_dropout[&Modality::Head],
            audio_dropout: synth.modality_dropout[&Modality::Audio],
            quality_noise_coupling: synth.quality_noise_coupling,
        }
    }
}

impl FileConfig {
    /// Parses a TOML file, filling unspecified fields with defaults.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses TOML text, filling unspecified fields with defaults.
    pub fn parse(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::MalformedConfig(e.to_string()))
    }

    /// Serializes the full configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("flat config always serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            dropout_keep_prob: self.dropout_keep_prob,
            epochs: self.epochs,
            hidden_dim: self.hidden_dim,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            rng_seed: self.seed,
        }
    }

    pub fn routing_config(&self) -> RoutingConfig {
        RoutingConfig {
            quality_bands: self.quality_bands.clone(),
            part_a_quality_threshold: self.part_a_quality_threshold,
            part_a_detection_threshold: self.part_a_detection_threshold,
            folds: self.folds,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_identities: self.n_identities,
            n_clips_per_identity: self.n_clips_per_identity,
            n_distractor_clips: self.n_distractor_clips,
            dim: self.dim,
            frames_per_clip: (self.frames_min, self.frames_max),
            modality_noise: BTreeMap::from([
                (Modality::Face, self.face_noise),
                (Modality::Head, self.head_noise),
                (Modality::Audio, self.audio_noise),
            ]),
            modality_dropout: BTreeMap::from([
                (Modality::Face, self.face_dropout),
                (Modality::Head, self.head_dropout),
                (Modality::Audio, self.audio_dropout),
            ]),
            quality_noise_coupling: self.quality_noise_coupling,
            seed: self.seed,
        }
    }
}
