use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::Embedding;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Array2::from_shape_vec((rows, cols), data).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> Vec<u32> {
    (0..rows).map(|_| rng.random_range(0..classes as u32)).collect()
}

/// Training-graph loss recomputed from scratch, used as the reference for
/// the finite-difference probes.
fn loss_only(
    params: &MlpParams,
    batch: &Array2<f64>,
    labels: &[u32],
    masks: Option<&DropoutMasks>,
) -> f64 {
    let cache = forward_full(params, batch, masks);
    let mut loss = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        loss -= cache.probs[[row, label as usize]].ln();
    }
    loss / labels.len() as f64
}

fn check_gradients(masks: Option<&DropoutMasks>, seed: u64) {
    let dims = MlpDims::new(4, 8, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::init(dims, &mut rng);
    let batch = random_batch(&mut rng, 6, 4);
    let labels = random_labels(&mut rng, 6, 3);

    let (_, grads) = loss_and_grad(&params, &batch, &labels, masks).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensor_slices().iter().map(|s| s.to_vec()).collect();

    let h = 1e-5;
    for (tensor_idx, tensor) in analytic.iter().enumerate() {
        for i in 0..tensor.len() {
            let original = params.tensor_slices_mut()[tensor_idx][i];
            params.tensor_slices_mut()[tensor_idx][i] = original + h;
            let plus = loss_only(&params, &batch, &labels, masks);
            params.tensor_slices_mut()[tensor_idx][i] = original - h;
            let minus = loss_only(&params, &batch, &labels, masks);
            params.tensor_slices_mut()[tensor_idx][i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = tensor[i];
            let denom = a.abs().max(numeric.abs());
            if denom < 1e-8 {
                assert!(
                    (a - numeric).abs() < 1e-8,
                    "tensor {tensor_idx} entry {i}: analytic {a}, numeric {numeric}"
                );
            } else {
                assert!(
                    (a - numeric).abs() / denom < 1e-4,
                    "tensor {tensor_idx} entry {i}: analytic {a}, numeric {numeric}"
                );
            }
        }
    }
}

#[test]
fn gradients_match_central_differences_without_dropout() {
    check_gradients(None, 11);
    check_gradients(None, 12);
}

#[test]
fn gradients_match_central_differences_with_frozen_dropout_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let masks = DropoutMasks::draw(6, 8, 0.5, &mut rng);
    check_gradients(Some(&masks), 13);
}

#[test]
fn zero_parameters_give_uniform_probabilities_and_log_class_count_loss() {
    let dims = MlpDims::new(5, 7, 4).unwrap();
    let params = MlpParams::zeros(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = random_batch(&mut rng, 9, 5);
    let probs = params.infer(&batch).unwrap();
    for row in probs.rows() {
        for &p in row {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }
    let labels = random_labels(&mut rng, 9, 4);
    let loss = loss_only(&params, &batch, &labels, None);
    // Zero weights keep the logits identical across classes even through
    // batch normalization, so the loss is exactly ln(4).
    assert!((loss - 4.0_f64.ln()).abs() < 1e-9);
}

#[test]
fn softmax_rows_sum_to_one_even_for_large_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for scale in [1.0, 10.0, 1e3] {
        let logits = random_batch(&mut rng, 8, 6).mapv(|v| v * scale);
        let probs = softmax(&logits);
        for row in probs.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-12, "scale {scale}: row sum {sum}");
            assert!(row.iter().all(|p| p.is_finite() && *p >= 0.0));
        }
    }
    // Shifted copies of the same logits give identical probabilities.
    let logits = random_batch(&mut rng, 4, 5);
    let shifted = logits.mapv(|v| v + 1000.0);
    let a = softmax(&logits);
    let b = softmax(&shifted);
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn batch_statistics_normalize_to_zero_mean_unit_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = random_batch(&mut rng, 64, 6).mapv(|v| v * 3.0 + 2.0);
    let bn = BatchNormParams::identity(6);
    let (out, cache) = bn_train(&z, &bn);
    let n = out.nrows() as f64;
    for col in 0..6 {
        let mean: f64 = out.column(col).sum() / n;
        let var: f64 = out.column(col).mapv(|v| (v - mean) * (v - mean)).sum() / n;
        assert!(mean.abs() < 1e-10, "column {col} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "column {col} variance {var}");
    }
    assert_eq!(cache.xhat.dim(), (64, 6));
}

#[test]
fn inference_uses_running_statistics_not_batch_statistics() {
    let dims = MlpDims::new(3, 4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let params = MlpParams::init(dims, &mut rng);
    let batch = random_batch(&mut rng, 5, 3);
    let single = params
        .infer(&batch.row(0).to_owned().insert_axis(ndarray::Axis(0)))
        .unwrap();
    let full = params.infer(&batch).unwrap();
    // Running statistics make each row's output independent of the rest of
    // the batch.
    for (a, b) in single.row(0).iter().zip(full.row(0).iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn training_forward_is_deterministic_for_a_fixed_seed() {
    let dims = MlpDims::new(4, 6, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = MlpParams::init(dims, &mut rng);
    let batch = random_batch(&mut rng, 7, 4);
    let mut r1 = ChaCha8Rng::seed_from_u64(400);
    let mut r2 = ChaCha8Rng::seed_from_u64(400);
    let a = params.forward_train(&batch, 0.5, &mut r1).unwrap();
    let b = params.forward_train(&batch, 0.5, &mut r2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_is_bitwise_deterministic_per_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let features = random_batch(&mut rng, 30, 6);
    let labels = random_labels(&mut rng, 30, 3);
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        hidden_dim: 10,
        rng_seed: 1234,
        ..TrainConfig::default()
    };
    let a = train(&features, &labels, 3, &config).unwrap();
    let b = train(&features, &labels, 3, &config).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.epoch_loss, b.epoch_loss);
    assert_eq!(a.epoch_loss.len(), 3);

    let c = train(
        &features,
        &labels,
        3,
        &TrainConfig {
            rng_seed: 1235,
            ..config
        },
    )
    .unwrap();
    assert_ne!(a.params.w1, c.params.w1);
}

#[test]
fn zero_learning_rate_leaves_weights_at_initialization() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let features = random_batch(&mut rng, 20, 5);
    let labels = random_labels(&mut rng, 20, 2);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 2,
        batch_size: 10,
        hidden_dim: 6,
        rng_seed: 9,
        ..TrainConfig::default()
    };
    let report = train(&features, &labels, 2, &config).unwrap();

    let mut init_rng = ChaCha8Rng::seed_from_u64(9);
    let expected = MlpParams::init(MlpDims::new(5, 6, 2).unwrap(), &mut init_rng);
    assert_eq!(report.params.w1, expected.w1);
    assert_eq!(report.params.w2, expected.w2);
    assert_eq!(report.params.w3, expected.w3);
    assert_eq!(report.params.bn1.gamma, expected.bn1.gamma);
    // Running statistics still track the data even with no optimizer step.
    assert_ne!(report.params.bn1.running_mean, expected.bn1.running_mean);
}

#[test]
fn loss_decreases_on_separable_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in 0..3u32 {
        for _ in 0..40 {
            let mut row = vec![0.0; 6];
            // Well-separated class centers with small spherical noise.
            row[class as usize * 2] = 4.0;
            for value in row.iter_mut() {
                *value += rng.random_range(-0.3..0.3);
            }
            rows.extend_from_slice(&row);
            labels.push(class);
        }
    }
    let features = Array2::from_shape_vec((120, 6), rows).unwrap();
    let config = TrainConfig {
        epochs: 25,
        batch_size: 32,
        hidden_dim: 16,
        learning_rate: 0.01,
        rng_seed: 2,
        ..TrainConfig::default()
    };
    let report = train(&features, &labels, 3, &config).unwrap();
    assert!(report.epoch_loss[0] > *report.epoch_loss.last().unwrap());

    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let feature = Embedding::new(features.row(i).to_vec()).unwrap();
        let top = predict_top_k(&report.params, &feature, 1).unwrap();
        if top[0].0 == label {
            correct += 1;
        }
    }
    assert!(
        correct as f64 / labels.len() as f64 >= 0.99,
        "accuracy {}/{}",
        correct,
        labels.len()
    );
}

#[test]
fn predict_top_k_matches_a_full_sort_and_clamps_k() {
    let dims = MlpDims::new(4, 5, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let params = MlpParams::init(dims, &mut rng);
    let feature = Embedding::new(vec![0.3, -0.7, 1.1, 0.2]).unwrap();

    let probs = params.infer_one(&feature).unwrap();
    let mut oracle: Vec<(u32, f64)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as u32, p))
        .collect();
    oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let top = predict_top_k(&params, &feature, 4).unwrap();
    assert_eq!(top, oracle[..4].to_vec());

    let all = predict_top_k(&params, &feature, 100).unwrap();
    assert_eq!(all.len(), 6);
    assert_eq!(all, oracle);

    assert!(predict_top_k(&params, &feature, 0).unwrap().is_empty());
}

#[test]
fn tied_probabilities_rank_lower_labels_first() {
    let params = MlpParams::zeros(MlpDims::new(3, 4, 5).unwrap());
    let feature = Embedding::new(vec![1.0, 2.0, 3.0]).unwrap();
    let top = predict_top_k(&params, &feature, 3).unwrap();
    assert_eq!(
        top.iter().map(|(label, _)| *label).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
    for (_, p) in top {
        assert!((p - 0.2).abs() < 1e-12);
    }
}

#[test]
fn input_validation_reports_shape_and_value_errors() {
    let params = MlpParams::zeros(MlpDims::new(3, 4, 2).unwrap());
    let wrong = Array2::zeros((2, 5));
    assert!(matches!(
        params.infer(&wrong),
        Err(MlpError::DimensionMismatch {
            expected: 3,
            actual: 5
        })
    ));

    let mut bad = Array2::zeros((2, 3));
    bad[[1, 2]] = f64::NAN;
    assert!(matches!(params.infer(&bad), Err(MlpError::NonFiniteInput)));

    let batch = Array2::zeros((2, 3));
    assert!(matches!(
        loss_and_grad(&params, &batch, &[0, 7], None),
        Err(MlpError::LabelOutOfRange {
            label: 7,
            classes: 2
        })
    ));

    let empty = Array2::zeros((0, 3));
    assert!(matches!(
        train(&empty, &[], 2, &TrainConfig::default()),
        Err(MlpError::EmptyTrainingSet)
    ));
}

#[test]
fn config_validation_rejects_bad_settings() {
    let mut config = TrainConfig::default();
    config.dropout_keep_prob = 0.0;
    assert!(config.validate().is_err());
    config.dropout_keep_prob = 1.5;
    assert!(config.validate().is_err());
    config.dropout_keep_prob = 1.0;
    assert!(config.validate().is_ok());
    config.learning_rate = -0.1;
    assert!(config.validate().is_err());
    config.learning_rate = 0.0;
    assert!(config.validate().is_ok());
    config.batch_size = 0;
    assert!(config.validate().is_err());
}

#[test]
fn dropout_masks_scale_kept_entries_by_reciprocal_keep_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let masks = DropoutMasks::draw(50, 40, 0.25, &mut rng);
    let mut kept = 0usize;
    for &v in masks.layer1.iter().chain(masks.layer2.iter()) {
        assert!(v == 0.0 || (v - 4.0).abs() < 1e-12);
        if v != 0.0 {
            kept += 1;
        }
    }
    let frac = kept as f64 / (2.0 * 50.0 * 40.0);
    assert!((frac - 0.25).abs() < 0.05, "kept fraction {frac}");
}

#[test]
fn checkpoint_write_read_write_is_byte_identical() {
    let dims = MlpDims::new(6, 9, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut params = MlpParams::init(dims, &mut rng);
    params.bn1.running_mean.fill(0.125);
    params.bn2.running_var.fill(2.5);

    let mut first = Vec::new();
    write_checkpoint(&params, &mut first).unwrap();
    let reloaded = read_checkpoint(&mut first.as_slice()).unwrap();
    assert_eq!(reloaded.dims, dims);

    let mut second = Vec::new();
    write_checkpoint(&reloaded, &mut second).unwrap();
    assert_eq!(first, second);
}

#[test]
fn checkpoint_files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let dims = MlpDims::new(3, 4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let params = MlpParams::init(dims, &mut rng);
    save_checkpoint(&params, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    let mut a = Vec::new();
    let mut b = Vec::new();
    write_checkpoint(&params, &mut a).unwrap();
    write_checkpoint(&loaded, &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_rejects_foreign_and_damaged_files() {
    let err = read_checkpoint(&mut &b"NOTAMODL\x01\x00\x00\x00"[..]).unwrap_err();
    assert!(matches!(err, CheckpointError::BadMagic));

    let mut versioned = Vec::new();
    versioned.extend_from_slice(&CHECKPOINT_MAGIC);
    versioned.extend_from_slice(&99u32.to_le_bytes());
    let err = read_checkpoint(&mut versioned.as_slice()).unwrap_err();
    assert!(matches!(
        err,
        CheckpointError::VersionMismatch {
            found: 99,
            expected: 1
        }
    ));

    let params = MlpParams::zeros(MlpDims::new(3, 4, 2).unwrap());
    let mut bytes = Vec::new();
    write_checkpoint(&params, &mut bytes).unwrap();
    bytes.truncate(bytes.len() - 5);
    let err = read_checkpoint(&mut bytes.as_slice()).unwrap_err();
    assert!(matches!(err, CheckpointError::Truncated));
}
