//! Deterministic synthetic corpus generator.
//!
//! Each identity gets one unit-norm prototype vector per modality; clips
//! observe those prototypes through Gaussian noise whose strength is set
//! per modality and, for face frames, additionally scaled by an inverse
//! quality coupling — low-quality frames are noisier. Distractor clips
//! draw fresh prototypes and carry no label, so they never appear in the
//! ground truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::aggregate::aggregate_clip;
use crate::eval::GroundTruth;
use crate::model::{ClipRecord, Embedding, FrameObservation, Modality};

pub const QUALITY_MAX: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
}

/// Controls corpus size, embedding dimension and per-modality difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub n_clips_per_identity: usize,
    pub n_distractor_clips: usize,
    /// Embedding dimension shared by frames and all clip-level modalities.
    pub dim: usize,
    /// Inclusive (min, max) range for the number of face frames per clip.
    pub frames_per_clip: (usize, usize),
    /// Gaussian noise standard deviation per modality.
    pub modality_noise: BTreeMap<Modality, f64>,
    /// Probability that a clip is missing each modality entirely.
    pub modality_dropout: BTreeMap<Modality, f64>,
    /// How strongly low frame quality amplifies face-frame noise.
    pub quality_noise_coupling: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_identities: 50,
            n_clips_per_identity: 10,
            n_distractor_clips: 100,
            dim: 64,
            frames_per_clip: (3, 8),
            modality_noise: BTreeMap::from([
                (Modality::Face, 0.2),
                (Modality::Head, 0.6),
                (Modality::Audio, 1.2),
            ]),
            modality_dropout: BTreeMap::from([
                (Modality::Face, 0.15),
                (Modality::Head, 0.10),
                (Modality::Audio, 0.05),
            ]),
            quality_noise_coupling: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.dim == 0 {
            return Err(SynthError::InvalidConfig("dimension must be positive".into()));
        }
        let (lo, hi) = self.frames_per_clip;
        if lo == 0 || lo > hi {
            return Err(SynthError::InvalidConfig(format!(
                "frame count range ({lo}, {hi}) must satisfy 1 <= min <= max"
            )));
        }
        for modality in Modality::ALL {
            let noise = self.modality_noise.get(&modality).ok_or_else(|| {
                SynthError::InvalidConfig(format!("missing noise level for {modality}"))
            })?;
            if !noise.is_finite() || *noise < 0.0 {
                return Err(SynthError::InvalidConfig(format!(
                    "noise level for {modality} must be finite and >= 0, got {noise}"
                )));
            }
            let dropout = self.modality_dropout.get(&modality).ok_or_else(|| {
                SynthError::InvalidConfig(format!("missing dropout probability for {modality}"))
            })?;
            if !(0.0..=1.0).contains(dropout) {
                return Err(SynthError::InvalidConfig(format!(
                    "dropout probability for {modality} must be in [0, 1], got {dropout}"
                )));
            }
        }
        if !self.quality_noise_coupling.is_finite() || self.quality_noise_coupling < 0.0 {
            return Err(SynthError::InvalidConfig(format!(
                "quality coupling must be finite and >= 0, got {}",
                self.quality_noise_coupling
            )));
        }
        Ok(())
    }
}

/// A generated corpus plus the per-identity prototypes behind it, mainly
/// for inspection and noise calibration in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub clips: Vec<ClipRecord>,
    pub truth: GroundTruth,
    pub prototypes: BTreeMap<(u32, Modality), Embedding>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        v[0] = 1.0;
    } else {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    v
}

fn noisy_copy(rng: &mut ChaCha8Rng, prototype: &[f64], std_dev: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std_dev).expect("validated standard deviation");
    prototype.iter().map(|&p| p + normal.sample(rng)).collect()
}

/// Detection confidence as a noisy increasing function of frame quality.
fn detection_from_quality(rng: &mut ChaCha8Rng, quality: f64) -> f64 {
    let noise: f64 = Normal::new(0.0, 0.08).unwrap().sample(rng);
    (0.25 + 0.6 * quality / QUALITY_MAX + noise).clamp(0.0, 1.0)
}

struct ClipBuilder<'a> {
    config: &'a SynthConfig,
    rng: &'a mut ChaCha8Rng,
}

impl ClipBuilder<'_> {
    /// One clip observing `prototypes`; `label` is `None` for distractors.
    fn build(
        &mut self,
        clip_id: String,
        label: Option<u32>,
        prototypes: &BTreeMap<Modality, Vec<f64>>,
    ) -> ClipRecord {
        let config = self.config;
        let mut present: BTreeMap<Modality, bool> = BTreeMap::new();
        for modality in Modality::ALL {
            let dropout = config.modality_dropout[&modality];
            present.insert(modality, !self.rng.random_bool(dropout));
        }
        if present.values().all(|p| !p) {
            // A clip with no modality at all is useless to every code path;
            // keep the hardest modality as a floor.
            present.insert(Modality::Audio, true);
        }

        let mut frames = Vec::new();
        let mut clip_embeddings = BTreeMap::new();
        if present[&Modality::Face] {
            let (lo, hi) = config.frames_per_clip;
            let n_frames = self.rng.random_range(lo..=hi);
            let base_noise = config.modality_noise[&Modality::Face];
            for _ in 0..n_frames {
                let quality = self.rng.random_range(0.0..=QUALITY_MAX);
                let std_dev = base_noise
                    * (1.0 + config.quality_noise_coupling * (1.0 - quality / QUALITY_MAX));
                let values = noisy_copy(self.rng, &prototypes[&Modality::Face], std_dev);
                let detection = detection_from_quality(self.rng, quality);
                frames.push(FrameObservation {
                    embedding: Embedding { values },
                    quality_score: quality,
                    detection_score: detection,
                });
            }
            let aggregated = aggregate_clip(&frames).expect("at least one frame");
            clip_embeddings.insert(Modality::Face, aggregated);
        }
        for modality in [Modality::Head, Modality::Audio] {
            if present[&modality] {
                let values = noisy_copy(
                    self.rng,
                    &prototypes[&modality],
                    config.modality_noise[&modality],
                );
                clip_embeddings.insert(modality, Embedding { values });
            }
        }

        ClipRecord {
            clip_id,
            label,
            frames,
            clip_embeddings,
        }
    }
}

/// Generates the corpus and returns prototypes alongside it.
pub fn generate_detailed(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut clips = Vec::new();
    let mut truth = GroundTruth::default();
    let mut prototypes = BTreeMap::new();

    for identity in 0..config.n_identities as u32 {
        let mut id_prototypes = BTreeMap::new();
        for modality in Modality::ALL {
            let proto = unit_vector(&mut rng, config.dim);
            prototypes.insert((identity, modality), Embedding { values: proto.clone() });
            id_prototypes.insert(modality, proto);
        }
        let mut positives = BTreeSet::new();
        for clip_index in 0..config.n_clips_per_identity {
            let clip_id = format!("id{identity:04}_clip{clip_index:03}");
            positives.insert(clip_id.clone());
            let mut builder = ClipBuilder {
                config,
                rng: &mut rng,
            };
            clips.push(builder.build(clip_id, Some(identity), &id_prototypes));
        }
        truth.positives.insert(identity, positives);
    }

    for distractor in 0..config.n_distractor_clips {
        let mut fresh = BTreeMap::new();
        for modality in Modality::ALL {
            fresh.insert(modality, unit_vector(&mut rng, config.dim));
        }
        let clip_id = format!("distractor_{distractor:04}");
        let mut builder = ClipBuilder {
            config,
            rng: &mut rng,
        };
        clips.push(builder.build(clip_id, None, &fresh));
    }

    Ok(SynthCorpus {
        clips,
        truth,
        prototypes,
    })
}

/// Generates a deterministic corpus of labeled clips plus distractors.
pub fn generate(config: &SynthConfig) -> Result<(Vec<ClipRecord>, GroundTruth), SynthError> {
    let corpus = generate_detailed(config)?;
    Ok((corpus.clips, corpus.truth))
}
