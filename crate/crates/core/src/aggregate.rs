//! Frame-to-clip aggregation for the high-score path.
//!
//! Each frame gets a weight `quality_score * detection_score`; the clip
//! feature is the weight-averaged frame embedding, so one feature stands in
//! for the whole video. Sums are Kahan-compensated so the result is stable
//! under frame reordering.

use thiserror::Error;

use crate::model::{Embedding, FrameObservation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("cannot aggregate an empty frame list")]
    EmptyFrameList,
    #[error("frame {index} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
}

/// Compensated accumulator; keeps the running error term alongside the sum.
#[derive(Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    fn add(&mut self, value: f64) {
        let y = value - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

fn raw_weights(frames: &[FrameObservation]) -> Vec<f64> {
    frames
        .iter()
        .map(|f| f.quality_score * f.detection_score)
        .collect()
}

/// Per-frame weights `quality * detection`, scaled to sum to 1.
///
/// When every raw weight is zero the frames are indistinguishable under the
/// scoring, so the weights fall back to uniform `1/n`.
pub fn frame_weights(frames: &[FrameObservation]) -> Result<Vec<f64>, AggregateError> {
    if frames.is_empty() {
        return Err(AggregateError::EmptyFrameList);
    }
    let raw = raw_weights(frames);
    let mut total = KahanSum::default();
    for w in &raw {
        total.add(*w);
    }
    let total = total.value();
    if total > 0.0 {
        Ok(raw.into_iter().map(|w| w / total).collect())
    } else {
        Ok(vec![1.0 / frames.len() as f64; frames.len()])
    }
}

/// Weighted average of the frame embeddings: `Σ f_i·a_i / Σ a_i` with
/// `a_i = quality_i * detection_i`, all-zero weights falling back to the
/// plain mean.
pub fn aggregate_clip(frames: &[FrameObservation]) -> Result<Embedding, AggregateError> {
    if frames.is_empty() {
        return Err(AggregateError::EmptyFrameList);
    }
    let dim = frames[0].embedding.dim();
    for (index, frame) in frames.iter().enumerate() {
        if frame.embedding.dim() != dim {
            return Err(AggregateError::DimensionMismatch {
                index,
                expected: dim,
                actual: frame.embedding.dim(),
            });
        }
    }

    let mut weights = raw_weights(frames);
    let mut denom = KahanSum::default();
    for w in &weights {
        denom.add(*w);
    }
    let mut denom = denom.value();
    if denom <= 0.0 {
        weights = vec![1.0; frames.len()];
        denom = frames.len() as f64;
    }

    let mut numerators = vec![KahanSum::default(); dim];
    for (frame, weight) in frames.iter().zip(&weights) {
        for (acc, value) in numerators.iter_mut().zip(&frame.embedding.values) {
            acc.add(value * weight);
        }
    }
    let values = numerators.into_iter().map(|acc| acc.value() / denom).collect();
    Ok(Embedding { values })
}
