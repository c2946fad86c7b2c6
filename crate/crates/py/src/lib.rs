//! Python bindings for the identification pipeline.
//!
//! Everything crosses the boundary as plain Python structures — lists,
//! tuples and dicts — so the module needs no numpy and works at desk
//! scale. Ranked lists are `(clip_id, score)` pairs ordered best first.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pidfuse::io::FileConfig;
use pidfuse::model::{
    Embedding, FrameObservation, PredictionList, RetrievalResult, ScoredClip, PREDICTION_LIST_CAP,
};
use pidfuse::rankfusion::ModelPredictions;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_frames(frames: Vec<(Vec<f64>, f64, f64)>) -> Vec<FrameObservation> {
    frames
        .into_iter()
        .map(|(values, quality_score, detection_score)| FrameObservation {
            embedding: Embedding { values },
            quality_score,
            detection_score,
        })
        .collect()
}

/// Per-frame weights (quality x detection, scaled to sum to one).
///
/// Frames are `(embedding, quality_score, detection_score)` tuples.
#[pyfunction]
fn frame_weights(frames: Vec<(Vec<f64>, f64, f64)>) -> PyResult<Vec<f64>> {
    pidfuse::aggregate::frame_weights(&to_frames(frames)).map_err(value_err)
}

/// Weighted average of the frame embeddings — one clip-level feature.
#[pyfunction]
fn aggregate_clip(frames: Vec<(Vec<f64>, f64, f64)>) -> PyResult<Vec<f64>> {
    pidfuse::aggregate::aggregate_clip(&to_frames(frames))
        .map(|e| e.values)
        .map_err(value_err)
}

/// Average precision of one ranked list against a positive set.
///
/// `m` defaults to the size of `positives`; pass it explicitly when the
/// normalizer exceeds the retrievable positives. Only the first `cut`
/// entries are scored.
#[pyfunction]
#[pyo3(signature = (ranked, positives, m=None, cut=100))]
fn average_precision(
    ranked: Vec<String>,
    positives: Vec<String>,
    m: Option<usize>,
    cut: usize,
) -> PyResult<f64> {
    let m = m.unwrap_or(positives.len());
    let positives: BTreeSet<String> = positives.into_iter().collect();
    pidfuse::eval::average_precision(&ranked, &positives, m, cut).map_err(value_err)
}

/// Mean average precision over all labels in `truth`.
///
/// `result` maps each label to its ranked clip ids, `truth` maps each
/// label to its positive clip ids.
#[pyfunction]
#[pyo3(signature = (result, truth, cut=100))]
fn mean_average_precision(
    result: HashMap<u32, Vec<String>>,
    truth: HashMap<u32, Vec<String>>,
    cut: usize,
) -> PyResult<f64> {
    let mut retrieval = RetrievalResult::default();
    for (label, ids) in result {
        let list = ids
            .into_iter()
            .enumerate()
            .map(|(rank, clip_id)| ScoredClip {
                clip_id,
                weighted_score: 1.0 / (rank + 1) as f64,
            })
            .collect();
        retrieval.lists.insert(label, list);
    }
    let mut ground_truth = pidfuse::eval::GroundTruth::default();
    for (label, positives) in truth {
        ground_truth
            .positives
            .insert(label, positives.into_iter().collect());
    }
    pidfuse::eval::mean_average_precision(&retrieval, &ground_truth, cut).map_err(value_err)
}

fn to_prediction_lists(
    label: u32,
    lists: HashMap<String, Vec<(String, f64)>>,
) -> BTreeMap<String, PredictionList> {
    lists
        .into_iter()
        .map(|(model, ranked)| (model, PredictionList::from_ranked(label, ranked)))
        .collect()
}

/// Fuses one label's ranked lists from several models into a single
/// ranking by summed result-score / rank-score weight.
///
/// `lists` maps a model name to its ranked `(clip_id, score)` pairs with
/// scores non-increasing. Returns `(clip_id, weight)` pairs, best first.
#[pyfunction]
fn fuse_label(
    label: u32,
    lists: HashMap<String, Vec<(String, f64)>>,
) -> PyResult<Vec<(String, f64)>> {
    let owned = to_prediction_lists(label, lists);
    let refs: Vec<&PredictionList> = owned.values().collect();
    pidfuse::rankfusion::fuse_label(label, &refs)
        .map(|scored| {
            scored
                .into_iter()
                .map(|s| (s.clip_id, s.weighted_score))
                .collect()
        })
        .map_err(value_err)
}

/// Fuses every label across models: `predictions[model][label]` is a
/// ranked `(clip_id, score)` list. Returns `label -> ranked (clip_id,
/// weight)` truncated to `k`.
#[pyfunction]
#[pyo3(signature = (predictions, n_labels, k=100))]
fn fuse_all(
    predictions: HashMap<String, HashMap<u32, Vec<(String, f64)>>>,
    n_labels: u32,
    k: usize,
) -> PyResult<HashMap<u32, Vec<(String, f64)>>> {
    let mut model_predictions = ModelPredictions::new();
    for (model, per_label) in predictions {
        let lists: BTreeMap<u32, PredictionList> = per_label
            .into_iter()
            .map(|(label, ranked)| (label, PredictionList::from_ranked(label, ranked)))
            .collect();
        model_predictions.insert(model, lists);
    }
    let fused =
        pidfuse::rankfusion::fuse_all(&model_predictions, n_labels, k).map_err(value_err)?;
    Ok(fused
        .lists
        .into_iter()
        .map(|(label, scored)| {
            (
                label,
                scored
                    .into_iter()
                    .map(|s| (s.clip_id, s.weighted_score))
                    .collect(),
            )
        })
        .collect())
}

/// Sliding-window magnitude spectrogram (rows = frames, 257 columns).
#[pyfunction]
#[pyo3(signature = (samples, sample_rate=16000))]
fn spectrogram(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
    let waveform = pidfuse::audio::Waveform::new(samples, sample_rate).map_err(value_err)?;
    let spec = pidfuse::audio::spectrogram(&waveform).map_err(value_err)?;
    Ok(spec.outer_iter().map(|row| row.to_vec()).collect())
}

/// 512-dimensional audio embedding (per-bin spectral mean and spread).
#[pyfunction]
#[pyo3(signature = (samples, sample_rate=16000))]
fn embed_audio(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<f64>> {
    let waveform = pidfuse::audio::Waveform::new(samples, sample_rate).map_err(value_err)?;
    pidfuse::audio::embed_waveform(&waveform)
        .map(|e| e.values)
        .map_err(value_err)
}

/// A trained classifier: two hidden layers with batch norm and dropout,
/// softmax output.
#[pyclass]
struct Mlp {
    params: pidfuse::mlp::MlpParams,
}

#[pymethods]
impl Mlp {
    /// Trains on row-major `features` (one list per sample) and integer
    /// `labels` in `[0, n_classes)`.
    #[staticmethod]
    #[pyo3(signature = (
        features, labels, n_classes, hidden_dim=128, epochs=40,
        learning_rate=0.0008, batch_size=512, dropout_keep_prob=0.5, seed=0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        features: Vec<Vec<f64>>,
        labels: Vec<u32>,
        n_classes: usize,
        hidden_dim: usize,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        dropout_keep_prob: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let rows = features.len();
        let dim = features.first().map(|r| r.len()).unwrap_or(0);
        if features.iter().any(|r| r.len() != dim) {
            return Err(PyValueError::new_err("feature rows have differing lengths"));
        }
        let flat: Vec<f64> = features.into_iter().flatten().collect();
        let matrix = ndarray::Array2::from_shape_vec((rows, dim), flat)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let config = pidfuse::mlp::TrainConfig {
            learning_rate,
            batch_size,
            dropout_keep_prob,
            epochs,
            hidden_dim,
            rng_seed: seed,
            ..pidfuse::mlp::TrainConfig::default()
        };
        let report = pidfuse::mlp::train(&matrix, &labels, n_classes, &config).map_err(value_err)?;
        Ok(Self { params: report.params })
    }

    /// Class probabilities for one feature vector.
    fn probabilities(&self, feature: Vec<f64>) -> PyResult<Vec<f64>> {
        self.params
            .infer_one(&Embedding { values: feature })
            .map(|probs| probs.to_vec())
            .map_err(value_err)
    }

    /// The `k` most probable labels as `(label, probability)` pairs.
    fn predict_top_k(&self, feature: Vec<f64>, k: usize) -> PyResult<Vec<(u32, f64)>> {
        pidfuse::mlp::predict_top_k(&self.params, &Embedding { values: feature }, k)
            .map_err(value_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        pidfuse::mlp::save_checkpoint(&self.params, Path::new(path)).map_err(io_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        pidfuse::mlp::load_checkpoint(Path::new(path))
            .map(|params| Self { params })
            .map_err(io_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.params.dims.input
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.params.dims.hidden
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.params.dims.classes
    }

    fn __repr__(&self) -> String {
        format!(
            "Mlp({} -> {} -> {} -> {})",
            self.params.dims.input,
            self.params.dims.hidden,
            self.params.dims.hidden,
            self.params.dims.classes
        )
    }
}

fn load_config(config_path: Option<&str>, seed: Option<u64>) -> PyResult<FileConfig> {
    let mut config = match config_path {
        Some(path) => FileConfig::load(Path::new(path)).map_err(io_err)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Writes a synthetic corpus and its ground truth; returns the clip count.
#[pyfunction]
#[pyo3(signature = (corpus_path, truth_path, config_path=None, seed=None))]
fn generate_corpus(
    corpus_path: &str,
    truth_path: &str,
    config_path: Option<&str>,
    seed: Option<u64>,
) -> PyResult<usize> {
    let config = load_config(config_path, seed)?;
    let (clips, truth) =
        pidfuse::synthdata::generate(&config.synth_config()).map_err(value_err)?;
    pidfuse::io::write_corpus(
        &clips,
        Path::new(corpus_path),
        pidfuse::io::EmbeddingEncoding::Text,
    )
    .map_err(io_err)?;
    pidfuse::io::write_truth(&truth, Path::new(truth_path)).map_err(io_err)?;
    Ok(clips.len())
}

/// Runs the full pipeline — corpus generation, grid training, routing,
/// fusion, evaluation — writing every artifact into `out_dir`. Returns
/// the fused mean average precision.
#[pyfunction]
#[pyo3(signature = (out_dir, config_path=None, seed=None, cut=100))]
fn run_pipeline_files(
    out_dir: &str,
    config_path: Option<&str>,
    seed: Option<u64>,
    cut: usize,
) -> PyResult<f64> {
    let config = load_config(config_path, seed)?;
    let out = Path::new(out_dir);
    std::fs::create_dir_all(out).map_err(io_err)?;

    let (clips, truth) =
        pidfuse::synthdata::generate(&config.synth_config()).map_err(value_err)?;
    pidfuse::io::write_corpus(
        &clips,
        &out.join("corpus.jsonl"),
        pidfuse::io::EmbeddingEncoding::Text,
    )
    .map_err(io_err)?;
    pidfuse::io::write_truth(&truth, &out.join("truth.jsonl")).map_err(io_err)?;

    let routing = config.routing_config();
    let training = config.train_config();
    let part_a = pidfuse::router::train_part_a(&clips, &routing, &training).map_err(value_err)?;
    let part_b = pidfuse::router::train_part_b(&clips, &routing, &training).map_err(value_err)?;
    pidfuse::io::save_grids(&out.join("models"), &part_a, &part_b).map_err(io_err)?;

    let predictions =
        pidfuse::router::predict_modalities(&clips, &part_b).map_err(value_err)?;
    pidfuse::io::write_predictions(&predictions, &out.join("predictions.jsonl")).map_err(io_err)?;

    let output = pidfuse::router::run_pipeline_detailed(&clips, &part_a, &part_b, &routing, cut)
        .map_err(value_err)?;
    pidfuse::io::write_retrieval(&output.fused, &out.join("retrieval.txt")).map_err(io_err)?;
    let report = pidfuse::io::build_report(&output, &truth, cut).map_err(value_err)?;
    pidfuse::io::write_report(&report, &out.join("report.json")).map_err(io_err)?;
    Ok(report.map)
}

/// Prediction-list length cap shared with the retrieval cut default.
#[pymodule]
fn pidfuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PREDICTION_LIST_CAP", PREDICTION_LIST_CAP)?;
    m.add_function(wrap_pyfunction!(frame_weights, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_clip, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_label, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_all, m)?)?;
    m.add_function(wrap_pyfunction!(spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(embed_audio, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline_files, m)?)?;
    m.add_class::<Mlp>()?;
    Ok(())
}
