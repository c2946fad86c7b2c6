//! Quality-based routing, banded/fold model grids, probability ensembling
//! and the end-to-end retrieval pipeline.
//!
//! Clips whose face frames clear both quality and detection thresholds go
//! to Part A, where models trained per quality band and fold score their
//! aggregated frame features. Everything else goes to Part B, where
//! per-modality fold models score clip-level embeddings and the resulting
//! ranked lists are fused across modalities. The two sides are merged per
//! label after min-max normalizing each side's scores.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::aggregate::{aggregate_clip, AggregateError};
use crate::mlp::{train, MlpError, MlpParams, TrainConfig};
use crate::model::{
    ClipRecord, Embedding, FrameObservation, Modality, PredictionList, RetrievalResult,
    ScoredClip, PREDICTION_LIST_CAP,
};
use crate::rankfusion::{fuse_all, FuseError, ModelPredictions};
use crate::seed::derive_seed;

const PART_A_SEED_SALT: u64 = 0xA000_0000;
const PART_B_SEED_SALT: u64 = 0xB000_0000;
const FOLD_SEED_SALT: u64 = 0xF01D_0000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouterError {
    #[error("no training clips remain after filtering frames at quality >= {band}")]
    EmptyBand { band: f64 },
    #[error("fold {fold} received no training clips")]
    EmptyFold { fold: usize },
    #[error("modality {modality} is absent from every labeled training clip")]
    MissingModality { modality: Modality },
    #[error("no labeled clips available for training")]
    NoLabeledClips,
    #[error("model set is empty")]
    NoModels,
    #[error("invalid routing configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Fuse(#[from] FuseError),
}

/// Thresholds and grid shape for routing, band training and fold splits.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingConfig {
    /// Lower quality bounds of the Part A training bands (upper bound is
    /// the quality scale maximum).
    pub quality_bands: Vec<f64>,
    pub part_a_quality_threshold: f64,
    pub part_a_detection_threshold: f64,
    pub folds: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            quality_bands: vec![40.0, 60.0, 80.0, 100.0],
            part_a_quality_threshold: 40.0,
            part_a_detection_threshold: 0.5,
            folds: 5,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<(), RouterError> {
        if self.quality_bands.is_empty() {
            return Err(RouterError::InvalidConfig(
                "at least one quality band is required".into(),
            ));
        }
        if self.quality_bands.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RouterError::InvalidConfig(
                "quality bands must be strictly increasing".into(),
            ));
        }
        if self.quality_bands.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(RouterError::InvalidConfig(
                "quality bands must be finite and non-negative".into(),
            ));
        }
        if !self.part_a_quality_threshold.is_finite() || self.part_a_quality_threshold < 0.0 {
            return Err(RouterError::InvalidConfig(
                "quality threshold must be finite and non-negative".into(),
            ));
        }
        if !self.part_a_detection_threshold.is_finite() || self.part_a_detection_threshold < 0.0 {
            return Err(RouterError::InvalidConfig(
                "detection threshold must be finite and non-negative".into(),
            ));
        }
        if self.folds == 0 {
            return Err(RouterError::InvalidConfig("folds must be >= 1".into()));
        }
        Ok(())
    }
}

fn qualifies_for_part_a(clip: &ClipRecord, config: &RoutingConfig) -> bool {
    clip.frames.iter().any(|f| {
        f.quality_score >= config.part_a_quality_threshold
            && f.detection_score >= config.part_a_detection_threshold
    })
}

/// Splits clips into the high-confidence frame path (Part A) and the
/// fallback path (Part B). Exhaustive and disjoint by construction.
pub fn route<'a>(
    clips: &'a [ClipRecord],
    config: &RoutingConfig,
) -> (Vec<&'a ClipRecord>, Vec<&'a ClipRecord>) {
    let mut part_a = Vec::new();
    let mut part_b = Vec::new();
    for clip in clips {
        if qualifies_for_part_a(clip, config) {
            part_a.push(clip);
        } else {
            part_b.push(clip);
        }
    }
    (part_a, part_b)
}

/// Deterministic per-clip fold assignment, stratified by label: within
/// each label the clips are shuffled by a label-derived seed, then dealt
/// round-robin with a counter that runs across labels so fold sizes stay
/// balanced globally.
pub fn assign_folds(clips: &[ClipRecord], folds: usize, seed: u64) -> BTreeMap<String, usize> {
    let mut by_label: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for clip in clips {
        if let Some(label) = clip.label {
            by_label.entry(label).or_default().push(&clip.clip_id);
        }
    }
    let mut assignment = BTreeMap::new();
    let mut counter = 0usize;
    for (label, mut ids) in by_label {
        ids.sort_unstable();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, FOLD_SEED_SALT + u64::from(label)));
        ids.shuffle(&mut rng);
        for id in ids {
            assignment.insert(id.to_owned(), counter % folds);
            counter += 1;
        }
    }
    assignment
}

/// Band-by-fold grid of frame-feature classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct PartAGrid {
    pub bands: Vec<f64>,
    pub folds: usize,
    pub n_classes: usize,
    /// Keyed by (band index, fold index).
    pub models: BTreeMap<(usize, usize), MlpParams>,
}

/// Modality-by-fold grid of clip-embedding classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct PartBGrid {
    pub folds: usize,
    pub n_classes: usize,
    pub models: BTreeMap<(Modality, usize), MlpParams>,
}

struct TrainingExample {
    clip_id: String,
    label: u32,
    feature: Vec<f64>,
}

fn n_classes_of(clips: &[ClipRecord]) -> Result<usize, RouterError> {
    clips
        .iter()
        .filter_map(|c| c.label)
        .max()
        .map(|max| max as usize + 1)
        .ok_or(RouterError::NoLabeledClips)
}

fn to_matrix(examples: &[&TrainingExample]) -> Result<(Array2<f64>, Vec<u32>), RouterError> {
    let dim = examples[0].feature.len();
    let mut data = Vec::with_capacity(examples.len() * dim);
    for example in examples {
        if example.feature.len() != dim {
            return Err(MlpError::DimensionMismatch {
                expected: dim,
                actual: example.feature.len(),
            }
            .into());
        }
        data.extend_from_slice(&example.feature);
    }
    let matrix = Array2::from_shape_vec((examples.len(), dim), data).expect("shape matches");
    let labels = examples.iter().map(|e| e.label).collect();
    Ok((matrix, labels))
}

fn band_examples(clips: &[ClipRecord], band: f64) -> Result<Vec<TrainingExample>, RouterError> {
    let mut out = Vec::new();
    for clip in clips {
        let Some(label) = clip.label else { continue };
        let frames: Vec<FrameObservation> = clip
            .frames
            .iter()
            .filter(|f| f.quality_score >= band)
            .cloned()
            .collect();
        if frames.is_empty() {
            continue;
        }
        let feature = aggregate_clip(&frames)?;
        out.push(TrainingExample {
            clip_id: clip.clip_id.clone(),
            label,
            feature: feature.values,
        });
    }
    Ok(out)
}

type TrainCell<K> = (K, Array2<f64>, Vec<u32>, u64);

fn train_cells<K: Ord + Send + Copy>(
    cells: Vec<TrainCell<K>>,
    n_classes: usize,
    training: &TrainConfig,
) -> Result<BTreeMap<K, MlpParams>, RouterError> {
    let trained: Vec<(K, MlpParams)> = cells
        .into_par_iter()
        .map(|(key, features, labels, salt)| {
            let cell_config = TrainConfig {
                rng_seed: derive_seed(training.rng_seed, salt),
                ..training.clone()
            };
            let report = train(&features, &labels, n_classes, &cell_config)?;
            Ok((key, report.params))
        })
        .collect::<Result<_, RouterError>>()?;
    Ok(trained.into_iter().collect())
}

/// Trains one classifier per (quality band, fold) on quality-filtered,
/// weight-aggregated frame features.
pub fn train_part_a(
    clips: &[ClipRecord],
    routing: &RoutingConfig,
    training: &TrainConfig,
) -> Result<PartAGrid, RouterError> {
    routing.validate()?;
    training.validate()?;
    let n_classes = n_classes_of(clips)?;
    let fold_of = assign_folds(clips, routing.folds, training.rng_seed);

    let mut cells = Vec::new();
    for (band_idx, &band) in routing.quality_bands.iter().enumerate() {
        let examples = band_examples(clips, band)?;
        if examples.is_empty() {
            return Err(RouterError::EmptyBand { band });
        }
        for fold in 0..routing.folds {
            let subset: Vec<&TrainingExample> = examples
                .iter()
                .filter(|e| fold_of[&e.clip_id] == fold)
                .collect();
            if subset.is_empty() {
                return Err(RouterError::EmptyFold { fold });
            }
            let (features, labels) = to_matrix(&subset)?;
            let salt = PART_A_SEED_SALT + (band_idx * 64 + fold) as u64;
            cells.push(((band_idx, fold), features, labels, salt));
        }
    }

    let models = train_cells(cells, n_classes, training)?;
    Ok(PartAGrid {
        bands: routing.quality_bands.clone(),
        folds: routing.folds,
        n_classes,
        models,
    })
}

/// Trains one classifier per (modality, fold) on clip-level embeddings.
pub fn train_part_b(
    clips: &[ClipRecord],
    routing: &RoutingConfig,
    training: &TrainConfig,
) -> Result<PartBGrid, RouterError> {
    routing.validate()?;
    training.validate()?;
    let n_classes = n_classes_of(clips)?;
    let fold_of = assign_folds(clips, routing.folds, training.rng_seed);

    let mut cells = Vec::new();
    for (m_idx, modality) in Modality::ALL.into_iter().enumerate() {
        let examples: Vec<TrainingExample> = clips
            .iter()
            .filter_map(|clip| {
                let label = clip.label?;
                let embedding = clip.clip_embeddings.get(&modality)?;
                Some(TrainingExample {
                    clip_id: clip.clip_id.clone(),
                    label,
                    feature: embedding.values.clone(),
                })
            })
            .collect();
        if examples.is_empty() {
            return Err(RouterError::MissingModality { modality });
        }
        for fold in 0..routing.folds {
            let subset: Vec<&TrainingExample> = examples
                .iter()
                .filter(|e| fold_of[&e.clip_id] == fold)
                .collect();
            if subset.is_empty() {
                return Err(RouterError::EmptyFold { fold });
            }
            let (features, labels) = to_matrix(&subset)?;
            let salt = PART_B_SEED_SALT + (m_idx * 64 + fold) as u64;
            cells.push(((modality, fold), features, labels, salt));
        }
    }

    let models = train_cells(cells, n_classes, training)?;
    Ok(PartBGrid {
        folds: routing.folds,
        n_classes,
        models,
    })
}

/// Arithmetic mean of the models' inference-mode class probabilities.
pub fn ensemble_probs(models: &[&MlpParams], feature: &Embedding) -> Result<Vec<f64>, RouterError> {
    let first = models.first().ok_or(RouterError::NoModels)?;
    let n_classes = first.dims.classes;
    let mut acc = vec![0.0; n_classes];
    for model in models {
        if model.dims.classes != n_classes {
            return Err(MlpError::DimensionMismatch {
                expected: n_classes,
                actual: model.dims.classes,
            }
            .into());
        }
        let probs = model.infer_one(feature)?;
        for (slot, p) in acc.iter_mut().zip(probs.iter()) {
            *slot += p;
        }
    }
    let n = models.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Mean class probabilities for one Part A clip over every grid cell
/// whose band filter leaves at least one frame. If no band applies (the
/// routing threshold can sit below the lowest band), the lowest band's
/// fold models score the unfiltered aggregation instead.
fn part_a_probs(clip: &ClipRecord, grid: &PartAGrid) -> Result<Vec<f64>, RouterError> {
    let mut acc = vec![0.0; grid.n_classes];
    let mut contributors = 0usize;
    for (band_idx, &band) in grid.bands.iter().enumerate() {
        let frames: Vec<FrameObservation> = clip
            .frames
            .iter()
            .filter(|f| f.quality_score >= band)
            .cloned()
            .collect();
        if frames.is_empty() {
            continue;
        }
        let feature = aggregate_clip(&frames)?;
        for fold in 0..grid.folds {
            let probs = grid.models[&(band_idx, fold)].infer_one(&feature)?;
            for (slot, p) in acc.iter_mut().zip(probs.iter()) {
                *slot += p;
            }
            contributors += 1;
        }
    }
    if contributors == 0 {
        let feature = aggregate_clip(&clip.frames)?;
        for fold in 0..grid.folds {
            let probs = grid.models[&(0, fold)].infer_one(&feature)?;
            for (slot, p) in acc.iter_mut().zip(probs.iter()) {
                *slot += p;
            }
            contributors += 1;
        }
    }
    let n = contributors as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Ensembled probabilities for every clip carrying `modality`.
fn modality_probs(
    clips: &[&ClipRecord],
    modality: Modality,
    grid: &PartBGrid,
) -> Result<Vec<(String, Vec<f64>)>, RouterError> {
    let fold_models: Vec<&MlpParams> = (0..grid.folds)
        .map(|fold| &grid.models[&(modality, fold)])
        .collect();
    let present: Vec<&ClipRecord> = clips
        .iter()
        .copied()
        .filter(|c| c.clip_embeddings.contains_key(&modality))
        .collect();
    present
        .par_iter()
        .map(|clip| {
            let probs = ensemble_probs(&fold_models, &clip.clip_embeddings[&modality])?;
            Ok((clip.clip_id.clone(), probs))
        })
        .collect()
}

/// Per-label top-100 ranked lists from per-clip probability vectors.
fn label_lists(
    scored: &[(String, Vec<f64>)],
    n_labels: usize,
) -> BTreeMap<u32, PredictionList> {
    (0..n_labels as u32)
        .map(|label| {
            let mut ranked: Vec<(&String, f64)> = scored
                .iter()
                .map(|(id, probs)| (id, probs[label as usize]))
                .collect();
            ranked.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("probabilities are finite")
                    .then_with(|| a.0.cmp(b.0))
            });
            let list = PredictionList::from_ranked(
                label,
                ranked.into_iter().map(|(id, score)| (id.clone(), score)),
            );
            (label, list)
        })
        .collect()
}

fn retrieval_from_lists(
    lists: &BTreeMap<u32, PredictionList>,
    n_labels: usize,
    cut: usize,
) -> RetrievalResult {
    let mut result = RetrievalResult::default();
    for label in 0..n_labels as u32 {
        let scored: Vec<ScoredClip> = lists
            .get(&label)
            .map(|list| {
                list.entries
                    .iter()
                    .take(cut)
                    .map(|e| ScoredClip {
                        clip_id: e.clip_id.clone(),
                        weighted_score: e.result_score,
                    })
                    .collect()
            })
            .unwrap_or_default();
        result.lists.insert(label, scored);
    }
    result
}

/// Ranked per-label lists from the clip-modality models, one entry per
/// modality that appears in at least one clip. Each modality's fold
/// ensemble acts as one model, keyed by the modality name.
pub fn predict_modalities(
    clips: &[ClipRecord],
    grid: &PartBGrid,
) -> Result<ModelPredictions, RouterError> {
    let refs: Vec<&ClipRecord> = clips.iter().collect();
    let mut predictions = ModelPredictions::new();
    for modality in Modality::ALL {
        let scored = modality_probs(&refs, modality, grid)?;
        if scored.is_empty() {
            continue;
        }
        predictions.insert(
            modality.name().to_owned(),
            label_lists(&scored, grid.n_classes),
        );
    }
    Ok(predictions)
}

/// Maps scores onto [0, 1] per list; a constant list maps to all ones.
fn min_max_normalize(entries: &mut [(String, f64)]) {
    let Some(first) = entries.first() else { return };
    let mut min = first.1;
    let mut max = first.1;
    for (_, score) in entries.iter() {
        min = min.min(*score);
        max = max.max(*score);
    }
    for (_, score) in entries.iter_mut() {
        *score = if max > min { (*score - min) / (max - min) } else { 1.0 };
    }
}

/// Everything the pipeline produces: the merged ranking plus each side
/// and each single modality on its own, all truncated to the same cut.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub fused: RetrievalResult,
    pub part_a: RetrievalResult,
    pub part_b: RetrievalResult,
    pub per_modality: BTreeMap<Modality, RetrievalResult>,
}

/// Scores a gallery with both trained grids and merges the results.
pub fn run_pipeline_detailed(
    clips: &[ClipRecord],
    part_a: &PartAGrid,
    part_b: &PartBGrid,
    routing: &RoutingConfig,
    cut: usize,
) -> Result<PipelineOutput, RouterError> {
    routing.validate()?;
    let n_labels = part_a.n_classes.max(part_b.n_classes);
    let (clips_a, clips_b) = route(clips, routing);

    // Part A: per-clip grid-averaged probabilities, then per-label lists.
    let a_scored: Vec<(String, Vec<f64>)> = clips_a
        .par_iter()
        .map(|clip| Ok((clip.clip_id.clone(), part_a_probs(clip, part_a)?)))
        .collect::<Result<_, RouterError>>()?;
    let a_lists = label_lists(&a_scored, n_labels);

    // Part B: per-modality lists fused across whatever modalities exist.
    let mut b_predictions = ModelPredictions::new();
    for modality in Modality::ALL {
        let scored = modality_probs(&clips_b, modality, part_b)?;
        if scored.is_empty() {
            continue;
        }
        b_predictions.insert(modality.name().to_owned(), label_lists(&scored, n_labels));
    }
    let b_full = fuse_all(&b_predictions, n_labels as u32, PREDICTION_LIST_CAP)?;

    // Merge the two sides per label on a common [0, 1] score scale.
    let mut fused = RetrievalResult::default();
    for label in 0..n_labels as u32 {
        let mut a_entries: Vec<(String, f64)> = a_lists
            .get(&label)
            .map(|list| {
                list.entries
                    .iter()
                    .map(|e| (e.clip_id.clone(), e.result_score))
                    .collect()
            })
            .unwrap_or_default();
        let mut b_entries: Vec<(String, f64)> = b_full
            .lists
            .get(&label)
            .map(|list| {
                list.iter()
                    .map(|s| (s.clip_id.clone(), s.weighted_score))
                    .collect()
            })
            .unwrap_or_default();
        min_max_normalize(&mut a_entries);
        min_max_normalize(&mut b_entries);

        let mut merged = a_entries;
        merged.append(&mut b_entries);
        merged.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores are finite")
                .then_with(|| a.0.cmp(&b.0))
        });
        merged.truncate(cut);
        fused.lists.insert(
            label,
            merged
                .into_iter()
                .map(|(clip_id, weighted_score)| ScoredClip {
                    clip_id,
                    weighted_score,
                })
                .collect(),
        );
    }

    let part_a_result = retrieval_from_lists(&a_lists, n_labels, cut);
    let mut part_b_result = b_full;
    for list in part_b_result.lists.values_mut() {
        list.truncate(cut);
    }

    // Single-modality rankings over the whole gallery, for reporting.
    let all_clips: Vec<&ClipRecord> = clips.iter().collect();
    let mut per_modality = BTreeMap::new();
    for modality in Modality::ALL {
        let scored = modality_probs(&all_clips, modality, part_b)?;
        let lists = label_lists(&scored, n_labels);
        per_modality.insert(modality, retrieval_from_lists(&lists, n_labels, cut));
    }

    Ok(PipelineOutput {
        fused,
        part_a: part_a_result,
        part_b: part_b_result,
        per_modality,
    })
}

/// The merged retrieval result only.
pub fn run_pipeline(
    clips: &[ClipRecord],
    part_a: &PartAGrid,
    part_b: &PartBGrid,
    routing: &RoutingConfig,
    cut: usize,
) -> Result<RetrievalResult, RouterError> {
    Ok(run_pipeline_detailed(clips, part_a, part_b, routing, cut)?.fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Embedding;
    use crate::synthdata::{generate, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(quality: f64, detection: f64, values: Vec<f64>) -> FrameObservation {
        FrameObservation {
            embedding: Embedding { values },
            quality_score: quality,
            detection_score: detection,
        }
    }

    fn quick_training() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 64,
            hidden_dim: 8,
            learning_rate: 0.01,
            rng_seed: 5,
            ..TrainConfig::default()
        }
    }

    fn small_corpus() -> Vec<ClipRecord> {
        let config = SynthConfig {
            n_identities: 6,
            n_clips_per_identity: 8,
            n_distractor_clips: 10,
            dim: 8,
            seed: 21,
            ..SynthConfig::default()
        };
        generate(&config).unwrap().0
    }

    #[test]
    fn high_scoring_frames_route_to_part_a_and_frameless_clips_to_part_b() {
        let a_clip = ClipRecord {
            clip_id: "good".into(),
            label: Some(0),
            frames: vec![frame(150.0, 0.9, vec![0.0; 4])],
            clip_embeddings: BTreeMap::new(),
        };
        let b_clip = ClipRecord {
            clip_id: "audio_only".into(),
            label: Some(1),
            frames: vec![],
            clip_embeddings: BTreeMap::from([(
                Modality::Audio,
                Embedding { values: vec![0.0; 4] },
            )]),
        };
        let low = ClipRecord {
            clip_id: "blurry".into(),
            label: Some(2),
            frames: vec![frame(30.0, 0.9, vec![0.0; 4]), frame(90.0, 0.2, vec![0.0; 4])],
            clip_embeddings: BTreeMap::new(),
        };
        let clips = vec![a_clip, b_clip, low];
        let (part_a, part_b) = route(&clips, &RoutingConfig::default());
        assert_eq!(part_a.len(), 1);
        assert_eq!(part_a[0].clip_id, "good");
        assert_eq!(part_b.len(), 2);
    }

    #[test]
    fn routing_is_an_exhaustive_disjoint_partition() {
        let config = SynthConfig {
            n_identities: 40,
            n_clips_per_identity: 20,
            n_distractor_clips: 200,
            dim: 4,
            seed: 3,
            ..SynthConfig::default()
        };
        let (clips, _) = generate(&config).unwrap();
        assert_eq!(clips.len(), 1000);
        let (part_a, part_b) = route(&clips, &RoutingConfig::default());
        assert_eq!(part_a.len() + part_b.len(), 1000);
        let ids_a: std::collections::BTreeSet<&str> =
            part_a.iter().map(|c| c.clip_id.as_str()).collect();
        for clip in &part_b {
            assert!(!ids_a.contains(clip.clip_id.as_str()));
        }
    }

    #[test]
    fn band_filters_are_nested_by_construction() {
        let clips = small_corpus();
        let bands = [40.0, 60.0, 80.0, 100.0];
        for clip in &clips {
            let counts: Vec<usize> = bands
                .iter()
                .map(|&b| clip.frames.iter().filter(|f| f.quality_score >= b).count())
                .collect();
            for pair in counts.windows(2) {
                assert!(pair[0] >= pair[1]);
            }
        }
    }

    #[test]
    fn fold_assignment_is_deterministic_balanced_and_stratified() {
        let clips = small_corpus();
        let a = assign_folds(&clips, 4, 99);
        let b = assign_folds(&clips, 4, 99);
        assert_eq!(a, b);
        let c = assign_folds(&clips, 4, 100);
        assert_ne!(a, c);

        let labeled: Vec<&ClipRecord> = clips.iter().filter(|c| c.label.is_some()).collect();
        assert_eq!(a.len(), labeled.len());
        // 8 clips per label into 4 folds: exactly 2 per (label, fold).
        for label in 0..6u32 {
            let mut fold_counts = vec![0usize; 4];
            for clip in labeled.iter().filter(|c| c.label == Some(label)) {
                fold_counts[a[&clip.clip_id]] += 1;
            }
            assert_eq!(fold_counts, vec![2, 2, 2, 2]);
        }
    }

    #[test]
    fn part_a_training_fills_the_full_band_by_fold_grid() {
        let clips = small_corpus();
        let routing = RoutingConfig::default();
        let grid = train_part_a(&clips, &routing, &quick_training()).unwrap();
        assert_eq!(grid.models.len(), 20);
        assert_eq!(grid.n_classes, 6);
        for band_idx in 0..4 {
            for fold in 0..5 {
                assert!(grid.models.contains_key(&(band_idx, fold)));
            }
        }

        let single = RoutingConfig {
            quality_bands: vec![40.0],
            folds: 1,
            ..RoutingConfig::default()
        };
        let grid = train_part_a(&clips, &single, &quick_training()).unwrap();
        assert_eq!(grid.models.len(), 1);
    }

    #[test]
    fn a_band_above_every_frame_quality_is_rejected() {
        let clips: Vec<ClipRecord> = (0..4)
            .map(|i| ClipRecord {
                clip_id: format!("clip{i}"),
                label: Some(i % 2),
                frames: vec![frame(50.0, 0.9, vec![i as f64, 1.0])],
                clip_embeddings: BTreeMap::new(),
            })
            .collect();
        let routing = RoutingConfig {
            quality_bands: vec![80.0],
            folds: 1,
            ..RoutingConfig::default()
        };
        let err = train_part_a(&clips, &routing, &quick_training()).unwrap_err();
        assert!(matches!(err, RouterError::EmptyBand { band } if band == 80.0));
    }

    #[test]
    fn part_b_training_fills_the_modality_by_fold_grid() {
        let clips = small_corpus();
        let grid = train_part_b(&clips, &RoutingConfig::default(), &quick_training()).unwrap();
        assert_eq!(grid.models.len(), 15);
        for modality in Modality::ALL {
            for fold in 0..5 {
                assert!(grid.models.contains_key(&(modality, fold)));
            }
        }

        let single = RoutingConfig {
            folds: 1,
            ..RoutingConfig::default()
        };
        let grid = train_part_b(&clips, &single, &quick_training()).unwrap();
        assert_eq!(grid.models.len(), 3);
    }

    #[test]
    fn a_modality_absent_everywhere_is_rejected() {
        let clips: Vec<ClipRecord> = (0..4)
            .map(|i| ClipRecord {
                clip_id: format!("clip{i}"),
                label: Some(i % 2),
                frames: vec![],
                clip_embeddings: BTreeMap::from([(
                    Modality::Face,
                    Embedding {
                        values: vec![i as f64, 1.0],
                    },
                )]),
            })
            .collect();
        let routing = RoutingConfig {
            folds: 1,
            ..RoutingConfig::default()
        };
        let err = train_part_b(&clips, &routing, &quick_training()).unwrap_err();
        assert!(matches!(
            err,
            RouterError::MissingModality {
                modality: Modality::Head
            }
        ));
    }

    #[test]
    fn ensembling_averages_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dims = crate::mlp::MlpDims::new(4, 6, 3).unwrap();
        let m1 = MlpParams::init(dims, &mut rng);
        let m2 = MlpParams::init(dims, &mut rng);
        let feature = Embedding::new(vec![0.5, -0.2, 0.9, 0.1]).unwrap();

        let p1 = m1.infer_one(&feature).unwrap();
        let p2 = m2.infer_one(&feature).unwrap();
        let mean = ensemble_probs(&[&m1, &m2], &feature).unwrap();
        for i in 0..3 {
            assert!((mean[i] - 0.5 * (p1[i] + p2[i])).abs() < 1e-12);
        }
        let sum: f64 = mean.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);

        // Identical models reproduce the single-model output.
        let same = ensemble_probs(&[&m1, &m1, &m1], &feature).unwrap();
        for i in 0..3 {
            assert!((same[i] - p1[i]).abs() < 1e-12);
        }

        // Order does not matter.
        let forward = ensemble_probs(&[&m1, &m2], &feature).unwrap();
        let backward = ensemble_probs(&[&m2, &m1], &feature).unwrap();
        for (x, y) in forward.iter().zip(&backward) {
            assert!((x - y).abs() < 1e-12);
        }

        assert!(matches!(
            ensemble_probs(&[], &feature),
            Err(RouterError::NoModels)
        ));
    }

    #[test]
    fn random_model_ensembles_remain_probability_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let dims = crate::mlp::MlpDims::new(5, 7, 4).unwrap();
        for _ in 0..20 {
            let models: Vec<MlpParams> = (0..rng.random_range(1..=6))
                .map(|_| MlpParams::init(dims, &mut rng))
                .collect();
            let refs: Vec<&MlpParams> = models.iter().collect();
            let feature = Embedding::new(
                (0..5).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let probs = ensemble_probs(&refs, &feature).unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    fn trained_grids(clips: &[ClipRecord], routing: &RoutingConfig) -> (PartAGrid, PartBGrid) {
        let training = quick_training();
        (
            train_part_a(clips, routing, &training).unwrap(),
            train_part_b(clips, routing, &training).unwrap(),
        )
    }

    #[test]
    fn pipeline_is_deterministic() {
        let clips = small_corpus();
        let routing = RoutingConfig {
            folds: 2,
            ..RoutingConfig::default()
        };
        let (grid_a, grid_b) = trained_grids(&clips, &routing);
        let first = run_pipeline_detailed(&clips, &grid_a, &grid_b, &routing, 50).unwrap();
        let second = run_pipeline_detailed(&clips, &grid_a, &grid_b, &routing, 50).unwrap();
        assert_eq!(first, second);
        for list in first.fused.lists.values() {
            assert!(list.len() <= 50);
            for pair in list.windows(2) {
                assert!(pair[0].weighted_score >= pair[1].weighted_score);
            }
        }
    }

    #[test]
    fn permissive_thresholds_make_the_result_part_a_only() {
        let mut config = SynthConfig {
            n_identities: 5,
            n_clips_per_identity: 6,
            n_distractor_clips: 5,
            dim: 8,
            seed: 77,
            ..SynthConfig::default()
        };
        config.modality_dropout.insert(Modality::Face, 0.0);
        let (clips, _) = generate(&config).unwrap();
        let routing = RoutingConfig {
            part_a_quality_threshold: 0.0,
            part_a_detection_threshold: 0.0,
            folds: 2,
            ..RoutingConfig::default()
        };
        let (_, part_b_clips) = route(&clips, &routing);
        assert!(part_b_clips.is_empty());

        let (grid_a, grid_b) = trained_grids(&clips, &routing);
        let out = run_pipeline_detailed(&clips, &grid_a, &grid_b, &routing, 30).unwrap();
        for (label, fused_list) in &out.fused.lists {
            let fused_ids: Vec<&str> = fused_list.iter().map(|s| s.clip_id.as_str()).collect();
            let a_ids: Vec<&str> = out.part_a.lists[label]
                .iter()
                .map(|s| s.clip_id.as_str())
                .collect();
            assert_eq!(fused_ids, a_ids, "label {label}");
            assert!(out.part_b.lists[label].is_empty());
        }
    }

    #[test]
    fn impossible_thresholds_make_the_result_part_b_only() {
        let clips = small_corpus();
        let routing = RoutingConfig {
            part_a_quality_threshold: 1000.0,
            folds: 2,
            ..RoutingConfig::default()
        };
        let (part_a_clips, _) = route(&clips, &routing);
        assert!(part_a_clips.is_empty());

        let (grid_a, grid_b) = trained_grids(&clips, &RoutingConfig { folds: 2, ..RoutingConfig::default() });
        let out = run_pipeline_detailed(&clips, &grid_a, &grid_b, &routing, 30).unwrap();
        for (label, fused_list) in &out.fused.lists {
            let fused_ids: Vec<&str> = fused_list.iter().map(|s| s.clip_id.as_str()).collect();
            let b_ids: Vec<&str> = out.part_b.lists[label]
                .iter()
                .map(|s| s.clip_id.as_str())
                .collect();
            assert_eq!(fused_ids, b_ids, "label {label}");
            assert!(out.part_a.lists[label].is_empty());
        }
    }

    #[test]
    fn configuration_validation_rejects_bad_grids() {
        let mut config = RoutingConfig::default();
        config.quality_bands = vec![];
        assert!(config.validate().is_err());
        config.quality_bands = vec![40.0, 40.0];
        assert!(config.validate().is_err());
        config.quality_bands = vec![60.0, 40.0];
        assert!(config.validate().is_err());
        config.quality_bands = vec![40.0, 60.0];
        config.folds = 0;
        assert!(config.validate().is_err());
        config.folds = 5;
        assert!(config.validate().is_ok());
    }
}
