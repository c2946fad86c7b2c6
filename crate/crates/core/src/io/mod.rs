//! File formats: line-delimited corpora with sidecar manifests, truth and
//! retrieval tables, per-model prediction dumps, trained-model-grid
//! directories, metric reports, and the flat configuration file.
//!
//! Every writer produces canonical output — sorted keys, fixed field
//! order — so that a parse-then-write cycle is byte-identical and equal
//! runs produce equal files.

mod config;
mod corpus;
mod formats;
mod models;

pub use config::FileConfig;
pub use corpus::{read_corpus, write_corpus, CorpusManifest, EmbeddingEncoding, CORPUS_FORMAT_VERSION};
pub use formats::{
    build_report, read_predictions, read_report, read_retrieval, read_truth, write_predictions,
    write_report, write_retrieval, write_truth, MetricsReport,
};
pub use models::{
    load_grids, read_grid_manifest, save_grids, ModelGridManifest, PartAEntry, PartBEntry,
    MODEL_GRID_FORMAT_VERSION,
};

use thiserror::Error;

use crate::mlp::CheckpointError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("line {line}: dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("missing sidecar manifest at {path}")]
    MissingManifest { path: String },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("malformed configuration: {0}")]
    MalformedConfig(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model manifest does not match the files on disk: {0}")]
    ManifestMismatch(String),
}
