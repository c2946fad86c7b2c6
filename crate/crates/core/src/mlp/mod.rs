//! Three-layer perceptron classifier with batch normalization and dropout.
//!
//! Layer order is FC -> BN -> ReLU -> Dropout twice, then FC -> softmax.
//! Forward, backward and the Adam trainer are written out explicitly; the
//! backward pass goes through the batch-statistics normalization graph, so
//! gradients are exact for whatever dropout masks were realized.

mod checkpoint;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{train, AdamState, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::Embedding;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlpError {
    #[error("input has {actual} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Layer sizes: `input -> hidden -> hidden -> classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpDims {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Result<Self, MlpError> {
        if input == 0 || hidden == 0 {
            return Err(MlpError::InvalidConfig("zero layer width".into()));
        }
        if classes < 2 {
            return Err(MlpError::InvalidConfig(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        Ok(Self {
            input,
            hidden,
            classes,
        })
    }
}

/// Scale/shift plus running statistics for one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNormParams {
    fn identity(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    fn update_running(&mut self, batch_mean: &Array1<f64>, batch_var: &Array1<f64>) {
        self.running_mean = BN_MOMENTUM * &self.running_mean + (1.0 - BN_MOMENTUM) * batch_mean;
        self.running_var = BN_MOMENTUM * &self.running_var + (1.0 - BN_MOMENTUM) * batch_var;
    }
}

/// Full parameter set of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub dims: MlpDims,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub bn1: BatchNormParams,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub bn2: BatchNormParams,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

fn he_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / rows as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

impl MlpParams {
    /// Fan-in-scaled uniform init for the weights, zero biases, identity
    /// batch-norm.
    pub fn init(dims: MlpDims, rng: &mut ChaCha8Rng) -> Self {
        Self {
            dims,
            w1: he_uniform(rng, dims.input, dims.hidden),
            b1: Array1::zeros(dims.hidden),
            bn1: BatchNormParams::identity(dims.hidden),
            w2: he_uniform(rng, dims.hidden, dims.hidden),
            b2: Array1::zeros(dims.hidden),
            bn2: BatchNormParams::identity(dims.hidden),
            w3: he_uniform(rng, dims.hidden, dims.classes),
            b3: Array1::zeros(dims.classes),
        }
    }

    /// All-zero parameters; useful as a neutral model (uniform outputs).
    pub fn zeros(dims: MlpDims) -> Self {
        Self {
            dims,
            w1: Array2::zeros((dims.input, dims.hidden)),
            b1: Array1::zeros(dims.hidden),
            bn1: BatchNormParams::identity(dims.hidden),
            w2: Array2::zeros((dims.hidden, dims.hidden)),
            b2: Array1::zeros(dims.hidden),
            bn2: BatchNormParams::identity(dims.hidden),
            w3: Array2::zeros((dims.hidden, dims.classes)),
            b3: Array1::zeros(dims.classes),
        }
    }

    fn check_input(&self, batch: &Array2<f64>) -> Result<(), MlpError> {
        if batch.ncols() != self.dims.input {
            return Err(MlpError::DimensionMismatch {
                expected: self.dims.input,
                actual: batch.ncols(),
            });
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFiniteInput);
        }
        Ok(())
    }

    /// Inference-mode class probabilities: running-statistics batch norm,
    /// no dropout. Each output row sums to 1.
    pub fn infer(&self, batch: &Array2<f64>) -> Result<Array2<f64>, MlpError> {
        self.check_input(batch)?;
        let h1 = bn_infer(&(batch.dot(&self.w1) + &self.b1), &self.bn1).mapv(relu);
        let h2 = bn_infer(&(h1.dot(&self.w2) + &self.b2), &self.bn2).mapv(relu);
        let logits = h2.dot(&self.w3) + &self.b3;
        Ok(softmax(&logits))
    }

    /// Training-mode forward pass: batch-statistics batch norm and freshly
    /// drawn inverted-scaling dropout masks. Returns the class
    /// probabilities only; the trainer uses [`train_step`] internally.
    pub fn forward_train(
        &self,
        batch: &Array2<f64>,
        keep_prob: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<f64>, MlpError> {
        self.check_input(batch)?;
        let masks = DropoutMasks::draw(batch.nrows(), self.dims.hidden, keep_prob, rng);
        let cache = forward_full(self, batch, Some(&masks));
        Ok(cache.probs)
    }

    /// Convenience single-vector inference.
    pub fn infer_one(&self, feature: &Embedding) -> Result<Array1<f64>, MlpError> {
        let batch = Array2::from_shape_vec((1, feature.dim()), feature.values.clone())
            .expect("shape matches data length");
        Ok(self.infer(&batch)?.row(0).to_owned())
    }
}

/// Gradients for every learnable tensor (running statistics are not
/// learnable and have no entry).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub bn1_gamma: Array1<f64>,
    pub bn1_beta: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub bn2_gamma: Array1<f64>,
    pub bn2_beta: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl MlpParams {
    /// Learnable tensors as flat slices, in a fixed order shared with
    /// [`MlpGrads::tensor_slices`] and the Adam state.
    pub(crate) fn tensor_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.bn1.gamma.as_slice_mut().expect("standard layout"),
            self.bn1.beta.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.bn2.gamma.as_slice_mut().expect("standard layout"),
            self.bn2.beta.as_slice_mut().expect("standard layout"),
            self.w3.as_slice_mut().expect("standard layout"),
            self.b3.as_slice_mut().expect("standard layout"),
        ]
    }
}

impl MlpGrads {
    pub(crate) fn tensor_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.bn1_gamma.as_slice().expect("standard layout"),
            self.bn1_beta.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.bn2_gamma.as_slice().expect("standard layout"),
            self.bn2_beta.as_slice().expect("standard layout"),
            self.w3.as_slice().expect("standard layout"),
            self.b3.as_slice().expect("standard layout"),
        ]
    }
}

/// Inverted-scaling dropout masks for the two hidden layers. Kept entries
/// carry `1/keep_prob`, dropped entries 0, so inference needs no rescale.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub layer1: Array2<f64>,
    pub layer2: Array2<f64>,
}

impl DropoutMasks {
    pub fn draw(batch: usize, hidden: usize, keep_prob: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut sample = || {
            let data: Vec<f64> = (0..batch * hidden)
                .map(|_| {
                    if rng.random::<f64>() < keep_prob {
                        1.0 / keep_prob
                    } else {
                        0.0
                    }
                })
                .collect();
            Array2::from_shape_vec((batch, hidden), data).expect("shape matches data length")
        };
        let layer1 = sample();
        let layer2 = sample();
        Self { layer1, layer2 }
    }

    /// All-ones masks; dropout becomes the identity.
    pub fn disabled(batch: usize, hidden: usize) -> Self {
        Self {
            layer1: Array2::ones((batch, hidden)),
            layer2: Array2::ones((batch, hidden)),
        }
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Row-wise softmax with log-sum-exp stabilization.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn bn_infer(z: &Array2<f64>, bn: &BatchNormParams) -> Array2<f64> {
    let invstd = bn.running_var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
    let centered = z - &bn.running_mean;
    centered * &invstd * &bn.gamma + &bn.beta
}

struct BnCache {
    xhat: Array2<f64>,
    invstd: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

fn bn_train(z: &Array2<f64>, bn: &BatchNormParams) -> (Array2<f64>, BnCache) {
    let n = z.nrows() as f64;
    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = z - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let invstd = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
    let xhat = &centered * &invstd;
    let out = &xhat * &bn.gamma + &bn.beta;
    (
        out,
        BnCache {
            xhat,
            invstd,
            mean,
            var,
        },
    )
}

/// Gradient through batch-statistics normalization.
///
/// Returns `(dx, dgamma, dbeta)` for upstream gradient `dy`.
fn bn_backward(
    dy: &Array2<f64>,
    cache: &BnCache,
    gamma: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = dy.nrows() as f64;
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let dx = (&dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &cache.invstd / n;
    (dx, dgamma, dbeta)
}

pub(crate) struct ForwardCache {
    pub probs: Array2<f64>,
    input: Array2<f64>,
    bn1: BnCache,
    y1: Array2<f64>,
    d1: Array2<f64>,
    bn2: BnCache,
    y2: Array2<f64>,
    d2: Array2<f64>,
    mask1: Array2<f64>,
    mask2: Array2<f64>,
    pub bn1_stats: (Array1<f64>, Array1<f64>),
    pub bn2_stats: (Array1<f64>, Array1<f64>),
}

/// Training-graph forward pass with cached intermediates. `masks: None`
/// disables dropout.
pub(crate) fn forward_full(
    params: &MlpParams,
    batch: &Array2<f64>,
    masks: Option<&DropoutMasks>,
) -> ForwardCache {
    let owned_identity;
    let masks = match masks {
        Some(m) => m,
        None => {
            owned_identity = DropoutMasks::disabled(batch.nrows(), params.dims.hidden);
            &owned_identity
        }
    };

    let z1 = batch.dot(&params.w1) + &params.b1;
    let (bn1_out, bn1) = bn_train(&z1, &params.bn1);
    let y1 = bn1_out.mapv(relu);
    let d1 = &y1 * &masks.layer1;

    let z2 = d1.dot(&params.w2) + &params.b2;
    let (bn2_out, bn2) = bn_train(&z2, &params.bn2);
    let y2 = bn2_out.mapv(relu);
    let d2 = &y2 * &masks.layer2;

    let logits = d2.dot(&params.w3) + &params.b3;
    let probs = softmax(&logits);

    let bn1_stats = (bn1.mean.clone(), bn1.var.clone());
    let bn2_stats = (bn2.mean.clone(), bn2.var.clone());
    ForwardCache {
        probs,
        input: batch.clone(),
        bn1,
        y1,
        d1,
        bn2,
        y2,
        d2,
        mask1: masks.layer1.clone(),
        mask2: masks.layer2.clone(),
        bn1_stats,
        bn2_stats,
    }
}

/// Mean cross-entropy of the training-graph forward pass plus its exact
/// gradients, for the provided (or disabled) dropout masks.
pub fn loss_and_grad(
    params: &MlpParams,
    batch: &Array2<f64>,
    labels: &[u32],
    masks: Option<&DropoutMasks>,
) -> Result<(f64, MlpGrads), MlpError> {
    let (loss, grads, _) = train_step(params, batch, labels, masks)?;
    Ok((loss, grads))
}

type BnStats = ((Array1<f64>, Array1<f64>), (Array1<f64>, Array1<f64>));

/// Like [`loss_and_grad`] but also returns the batch-norm batch statistics
/// so the trainer can update the running estimates.
pub(crate) fn train_step(
    params: &MlpParams,
    batch: &Array2<f64>,
    labels: &[u32],
    masks: Option<&DropoutMasks>,
) -> Result<(f64, MlpGrads, BnStats), MlpError> {
    params.check_input(batch)?;
    if batch.nrows() != labels.len() {
        return Err(MlpError::DimensionMismatch {
            expected: batch.nrows(),
            actual: labels.len(),
        });
    }
    for &label in labels {
        if label as usize >= params.dims.classes {
            return Err(MlpError::LabelOutOfRange {
                label,
                classes: params.dims.classes,
            });
        }
    }

    let cache = forward_full(params, batch, masks);
    let n = batch.nrows() as f64;

    let mut loss = 0.0;
    let mut dlogits = cache.probs.clone();
    for (row, &label) in labels.iter().enumerate() {
        let p = cache.probs[[row, label as usize]];
        loss -= p.max(f64::MIN_POSITIVE).ln();
        dlogits[[row, label as usize]] -= 1.0;
    }
    loss /= n;
    dlogits /= n;

    // FC3
    let w3 = cache.d2.t().dot(&dlogits);
    let b3 = dlogits.sum_axis(Axis(0));
    let dd2 = dlogits.dot(&params.w3.t());

    // Dropout2 + ReLU2 + BN2
    let dy2 = &dd2 * &cache.mask2;
    let dbn2_out = dy2 * cache.y2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let (dz2, bn2_gamma, bn2_beta) = bn_backward(&dbn2_out, &cache.bn2, &params.bn2.gamma);

    // FC2
    let w2 = cache.d1.t().dot(&dz2);
    let b2 = dz2.sum_axis(Axis(0));
    let dd1 = dz2.dot(&params.w2.t());

    // Dropout1 + ReLU1 + BN1
    let dy1 = &dd1 * &cache.mask1;
    let dbn1_out = dy1 * cache.y1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let (dz1, bn1_gamma, bn1_beta) = bn_backward(&dbn1_out, &cache.bn1, &params.bn1.gamma);

    // FC1
    let w1 = cache.input.t().dot(&dz1);
    let b1 = dz1.sum_axis(Axis(0));

    let grads = MlpGrads {
        w1,
        b1,
        bn1_gamma,
        bn1_beta,
        w2,
        b2,
        bn2_gamma,
        bn2_beta,
        w3,
        b3,
    };
    Ok((loss, grads, (cache.bn1_stats, cache.bn2_stats)))
}

/// The `k` most probable labels for one feature, ties broken toward the
/// lower label index. `k` is clamped to the class count.
pub fn predict_top_k(
    params: &MlpParams,
    feature: &Embedding,
    k: usize,
) -> Result<Vec<(u32, f64)>, MlpError> {
    if feature.dim() != params.dims.input {
        return Err(MlpError::DimensionMismatch {
            expected: params.dims.input,
            actual: feature.dim(),
        });
    }
    let probs = params.infer_one(feature)?;
    let mut ranked: Vec<(u32, f64)> = probs
        .iter()
        .enumerate()
        .map(|(label, &p)| (label as u32, p))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(k.min(params.dims.classes));
    Ok(ranked)
}

#[cfg(test)]
mod tests;
