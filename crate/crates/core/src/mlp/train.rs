//! Minibatch Adam training loop for the classifier.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{train_step, DropoutMasks, MlpDims, MlpError, MlpGrads, MlpParams};

/// Optimizer and schedule settings. Defaults follow the reference setup
/// except for `hidden_dim` and `epochs`, which are sized for fast runs and
/// can be raised through configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_keep_prob: f64,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0008,
            batch_size: 512,
            dropout_keep_prob: 0.5,
            epochs: 40,
            hidden_dim: 128,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if !(self.dropout_keep_prob > 0.0 && self.dropout_keep_prob <= 1.0) {
            return Err(MlpError::InvalidConfig(format!(
                "dropout keep probability must be in (0, 1], got {}",
                self.dropout_keep_prob
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(MlpError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(MlpError::InvalidConfig("batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(MlpError::InvalidConfig("epoch count must be positive".into()));
        }
        if self.hidden_dim == 0 {
            return Err(MlpError::InvalidConfig("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(MlpError::InvalidConfig(
                "Adam decay rates must be in [0, 1)".into(),
            ));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(MlpError::InvalidConfig(
                "Adam epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

struct AdamTensor {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second-moment estimates for every learnable tensor.
pub struct AdamState {
    step: u64,
    tensors: Vec<AdamTensor>,
}

impl AdamState {
    pub fn new(params: &mut MlpParams) -> Self {
        let tensors = params
            .tensor_slices_mut()
            .iter()
            .map(|slice| AdamTensor {
                m: vec![0.0; slice.len()],
                v: vec![0.0; slice.len()],
            })
            .collect();
        Self { step: 0, tensors }
    }

    /// One bias-corrected Adam update over all learnable tensors.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &MlpGrads, config: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - config.adam_beta1.powi(t);
        let bc2 = 1.0 - config.adam_beta2.powi(t);
        let param_slices = params.tensor_slices_mut();
        let grad_slices = grads.tensor_slices();
        debug_assert_eq!(param_slices.len(), self.tensors.len());
        for ((param, grad), state) in param_slices
            .into_iter()
            .zip(grad_slices)
            .zip(self.tensors.iter_mut())
        {
            for i in 0..param.len() {
                let g = grad[i];
                state.m[i] = config.adam_beta1 * state.m[i] + (1.0 - config.adam_beta1) * g;
                state.v[i] = config.adam_beta2 * state.v[i] + (1.0 - config.adam_beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                param[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
            }
        }
    }
}

/// Trained parameters plus the loss trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: MlpParams,
    /// Sample-weighted mean cross-entropy per epoch, in epoch order.
    pub epoch_loss: Vec<f64>,
}

/// Trains a fresh classifier on `(features, labels)`.
///
/// Each epoch reshuffles the sample order with the run's seeded generator,
/// walks contiguous minibatches, and applies one Adam update per batch.
/// Batch-norm running statistics decay toward each batch's statistics.
pub fn train(
    features: &Array2<f64>,
    labels: &[u32],
    n_classes: usize,
    config: &TrainConfig,
) -> Result<TrainReport, MlpError> {
    config.validate()?;
    if features.nrows() == 0 {
        return Err(MlpError::EmptyTrainingSet);
    }
    if features.nrows() != labels.len() {
        return Err(MlpError::DimensionMismatch {
            expected: features.nrows(),
            actual: labels.len(),
        });
    }
    let dims = MlpDims::new(features.ncols(), config.hidden_dim, n_classes)?;
    for &label in labels {
        if label as usize >= n_classes {
            return Err(MlpError::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut params = MlpParams::init(dims, &mut rng);
    let mut adam = AdamState::new(&mut params);
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = gather_rows(features, chunk);
            let batch_labels: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            let masks = if config.dropout_keep_prob < 1.0 {
                Some(DropoutMasks::draw(
                    chunk.len(),
                    dims.hidden,
                    config.dropout_keep_prob,
                    &mut rng,
                ))
            } else {
                None
            };
            let (loss, grads, (bn1_stats, bn2_stats)) =
                train_step(&params, &batch, &batch_labels, masks.as_ref())?;
            params.bn1.update_running(&bn1_stats.0, &bn1_stats.1);
            params.bn2.update_running(&bn2_stats.0, &bn2_stats.1);
            adam.apply(&mut params, &grads, config);
            loss_sum += loss * chunk.len() as f64;
        }
        epoch_loss.push(loss_sum / features.nrows() as f64);
    }

    Ok(TrainReport { params, epoch_loss })
}

fn gather_rows(features: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), features.ncols()));
    for (row, &i) in indices.iter().enumerate() {
        out.row_mut(row).assign(&features.row(i));
    }
    out
}
