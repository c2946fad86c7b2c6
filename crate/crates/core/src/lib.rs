//! Multi-modal person identification pipeline.
//!
//! Pre-extracted face, head and audio embeddings flow through two paths:
//! high-score clips get quality-weighted frame aggregation and an MLP
//! classifier, low-score clips get per-modality classification followed by
//! rank-based decision fusion. Retrieval quality is scored with mean
//! average precision over per-identity ranked lists.
//!
//! The crate is deterministic end to end: every random choice is drawn from
//! a single seeded stream, so two runs with the same seed produce identical
//! corpora, models and rankings.

pub mod aggregate;
pub mod audio;
pub mod eval;
pub mod io;
pub mod mlp;
pub mod model;
pub mod rankfusion;
pub mod router;
pub mod synthdata;

mod seed;

pub use model::{
    ClipRecord, DimensionConfig, Embedding, FrameObservation, Modality, PredictionEntry,
    PredictionList, RetrievalResult, ScoredClip,
};
pub use seed::derive_seed;
