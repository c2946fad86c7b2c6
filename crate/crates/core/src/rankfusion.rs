//! Decision-layer fusion of per-model ranked prediction lists.
//!
//! Each contributing model scores a clip as `result_score / rank_score`;
//! a clip's fused weight is the sum of those quotients over every model
//! that ranked it. Per label, clips are ordered by fused weight
//! descending, ties broken by clip identifier.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{PredictionList, RetrievalResult, ScoredClip, ValidationError};

/// Predictions grouped as model name -> label -> ranked list.
pub type ModelPredictions = BTreeMap<String, BTreeMap<u32, PredictionList>>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuseError {
    #[error("label {label}: clip '{clip_id}' appears twice within one model's list")]
    DuplicateClipWithinList { label: u32, clip_id: String },
    #[error("label {label}: prediction list is invalid: {source}")]
    InvalidList { label: u32, source: ValidationError },
    #[error("list registered under label {expected} carries label {actual}")]
    LabelMismatch { expected: u32, actual: u32 },
}

/// Fuses one label's per-model lists into a single ranking.
///
/// Every clip that appears in at least one list receives the weight
/// `Σ result_score / rank_score` over the models containing it; models
/// that did not rank the clip contribute nothing. The result is sorted by
/// weight descending, then clip identifier ascending.
pub fn fuse_label(label: u32, lists: &[&PredictionList]) -> Result<Vec<ScoredClip>, FuseError> {
    let mut weights: BTreeMap<&str, f64> = BTreeMap::new();
    for list in lists {
        if list.label != label {
            return Err(FuseError::LabelMismatch {
                expected: label,
                actual: list.label,
            });
        }
        list.validate().map_err(|err| match err {
            ValidationError::DuplicateClip { label, clip_id } => {
                FuseError::DuplicateClipWithinList { label, clip_id }
            }
            other => FuseError::InvalidList {
                label,
                source: other,
            },
        })?;
        for entry in &list.entries {
            *weights.entry(entry.clip_id.as_str()).or_insert(0.0) +=
                entry.result_score / f64::from(entry.rank_score);
        }
    }

    let mut fused: Vec<ScoredClip> = weights
        .into_iter()
        .map(|(clip_id, weighted_score)| ScoredClip {
            clip_id: clip_id.to_owned(),
            weighted_score,
        })
        .collect();
    fused.sort_by(|a, b| {
        b.weighted_score
            .partial_cmp(&a.weighted_score)
            .expect("weights are finite")
            .then_with(|| a.clip_id.cmp(&b.clip_id))
    });
    Ok(fused)
}

/// Fuses every label across all models and truncates each list to `k`.
///
/// The output contains an entry for every label in `0..n_labels` plus any
/// extra label present in a model's map; labels no model predicted get an
/// empty list. Model iteration follows the map's sorted order, so the
/// result does not depend on insertion order.
pub fn fuse_all(
    predictions: &ModelPredictions,
    n_labels: u32,
    k: usize,
) -> Result<RetrievalResult, FuseError> {
    let mut labels: BTreeSet<u32> = (0..n_labels).collect();
    for per_label in predictions.values() {
        labels.extend(per_label.keys().copied());
    }
    let labels: Vec<u32> = labels.into_iter().collect();

    let fused: Vec<Vec<ScoredClip>> = labels
        .par_iter()
        .map(|&label| {
            let lists: Vec<&PredictionList> = predictions
                .values()
                .filter_map(|per_label| per_label.get(&label))
                .collect();
            let mut ranking = fuse_label(label, &lists)?;
            ranking.truncate(k);
            Ok(ranking)
        })
        .collect::<Result<_, FuseError>>()?;

    Ok(RetrievalResult {
        lists: labels.into_iter().zip(fused).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PredictionEntry;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn list(label: u32, entries: &[(&str, f64)]) -> PredictionList {
        PredictionList::from_ranked(
            label,
            entries
                .iter()
                .map(|(id, score)| (id.to_string(), *score)),
        )
    }

    /// Straight-line re-evaluation of the fusion formula using different
    /// containers and a different sort, for cross-checking.
    fn brute_force_label(label: u32, lists: &[&PredictionList]) -> Vec<ScoredClip> {
        let mut weights: HashMap<String, f64> = HashMap::new();
        // Sum per clip in a fixed order: walk lists left to right.
        let mut seen_order: Vec<String> = Vec::new();
        for l in lists {
            assert_eq!(l.label, label);
            for e in &l.entries {
                if !weights.contains_key(&e.clip_id) {
                    seen_order.push(e.clip_id.clone());
                }
                *weights.entry(e.clip_id.clone()).or_insert(0.0) +=
                    e.result_score / e.rank_score as f64;
            }
        }
        // Selection-sort style extraction of the maximum each round.
        let mut remaining: Vec<String> = seen_order;
        remaining.sort();
        let mut out = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0usize;
            for i in 1..remaining.len() {
                if weights[&remaining[i]] > weights[&remaining[best]] {
                    best = i;
                }
            }
            let id = remaining.remove(best);
            out.push(ScoredClip {
                clip_id: id.clone(),
                weighted_score: weights[&id],
            });
        }
        out
    }

    fn random_list(rng: &mut ChaCha8Rng, label: u32, pool: &[String], max_len: usize) -> PredictionList {
        let mut ids = pool.to_vec();
        ids.shuffle(rng);
        let len = rng.random_range(1..=max_len.min(ids.len()));
        let mut scores: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        PredictionList::from_ranked(
            label,
            ids.into_iter().take(len).zip(scores),
        )
    }

    #[test]
    fn two_model_hand_example() {
        let face = list(4, &[("clip_a", 0.9), ("clip_b", 0.5)]);
        let audio = list(4, &[("clip_x", 0.8), ("clip_y", 0.7), ("clip_a", 0.6)]);
        let fused = fuse_label(4, &[&face, &audio]).unwrap();
        let by_id: BTreeMap<&str, f64> = fused
            .iter()
            .map(|s| (s.clip_id.as_str(), s.weighted_score))
            .collect();
        assert!((by_id["clip_a"] - (0.9 / 1.0 + 0.6 / 3.0)).abs() < 1e-15);
        assert!((by_id["clip_a"] - 1.1).abs() < 1e-12);
        assert!((by_id["clip_b"] - 0.25).abs() < 1e-15);
        assert!((by_id["clip_x"] - 0.8).abs() < 1e-15);
        assert_eq!(fused[0].clip_id, "clip_a");
    }

    #[test]
    fn single_list_weight_is_score_over_rank() {
        let l = list(0, &[("u", 0.9), ("v", 0.6), ("w", 0.3)]);
        let fused = fuse_label(0, &[&l]).unwrap();
        assert!((fused[0].weighted_score - 0.9).abs() < 1e-15);
        assert!((fused[1].weighted_score - 0.3).abs() < 1e-15);
        assert!((fused[2].weighted_score - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_model_preserves_input_rank_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pool: Vec<String> = (0..30).map(|i| format!("clip{i:02}")).collect();
        for _ in 0..50 {
            let l = random_list(&mut rng, 1, &pool, 20);
            let fused = fuse_label(1, &[&l]).unwrap();
            let input_order: Vec<&str> = l.entries.iter().map(|e| e.clip_id.as_str()).collect();
            let fused_order: Vec<&str> = fused.iter().map(|s| s.clip_id.as_str()).collect();
            // Non-increasing scores over increasing ranks keep s/r in input
            // order (ties are measure-zero with random scores).
            assert_eq!(fused_order, input_order);
            let oracle = brute_force_label(1, &[&l]);
            assert_eq!(
                fused_order,
                oracle.iter().map(|s| s.clip_id.as_str()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn empty_inputs_produce_empty_rankings() {
        assert!(fuse_label(0, &[]).unwrap().is_empty());
        let result = fuse_all(&ModelPredictions::new(), 3, 100).unwrap();
        assert_eq!(result.lists.len(), 3);
        assert!(result.lists.values().all(|l| l.is_empty()));
    }

    #[test]
    fn single_model_fuse_all_is_identity_up_to_truncation() {
        let mut per_label = BTreeMap::new();
        per_label.insert(0, list(0, &[("a", 0.9), ("b", 0.8), ("c", 0.7)]));
        per_label.insert(1, list(1, &[("d", 0.6)]));
        let mut predictions = ModelPredictions::new();
        predictions.insert("only".into(), per_label);

        let result = fuse_all(&predictions, 2, 2).unwrap();
        let label0: Vec<&str> = result.lists[&0].iter().map(|s| s.clip_id.as_str()).collect();
        assert_eq!(label0, vec!["a", "b"]);
        assert_eq!(result.lists[&1].len(), 1);
    }

    #[test]
    fn multi_model_fusion_matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pool: Vec<String> = (0..20).map(|i| format!("vid{i:02}")).collect();
        for round in 0..100 {
            let n_models = rng.random_range(1..=4usize);
            let mut predictions = ModelPredictions::new();
            for m in 0..n_models {
                let mut per_label = BTreeMap::new();
                for label in 0..5u32 {
                    if rng.random_range(0.0..1.0) < 0.8 {
                        per_label.insert(label, random_list(&mut rng, label, &pool, 12));
                    }
                }
                predictions.insert(format!("model{m}"), per_label);
            }
            let fused = fuse_all(&predictions, 5, 100).unwrap();
            for label in 0..5u32 {
                let lists: Vec<&PredictionList> = predictions
                    .values()
                    .filter_map(|p| p.get(&label))
                    .collect();
                let oracle = brute_force_label(label, &lists);
                let got = &fused.lists[&label];
                assert_eq!(got.len(), oracle.len(), "round {round} label {label}");
                for (g, o) in got.iter().zip(&oracle) {
                    assert_eq!(g.clip_id, o.clip_id, "round {round} label {label}");
                    assert!((g.weighted_score - o.weighted_score).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn truncation_is_consistent_between_label_and_all() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pool: Vec<String> = (0..25).map(|i| format!("c{i:02}")).collect();
        let mut predictions = ModelPredictions::new();
        for m in 0..3 {
            let mut per_label = BTreeMap::new();
            per_label.insert(2, random_list(&mut rng, 2, &pool, 18));
            predictions.insert(format!("m{m}"), per_label);
        }
        let lists: Vec<&PredictionList> = predictions.values().filter_map(|p| p.get(&2)).collect();
        let mut full = fuse_label(2, &lists).unwrap();
        full.truncate(5);
        let all = fuse_all(&predictions, 3, 5).unwrap();
        assert_eq!(all.lists[&2], full);
    }

    #[test]
    fn model_insertion_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let pool: Vec<String> = (0..15).map(|i| format!("p{i:02}")).collect();
        let named: Vec<(String, PredictionList)> = (0..4)
            .map(|m| (format!("model{m}"), random_list(&mut rng, 0, &pool, 10)))
            .collect();

        let mut forward = ModelPredictions::new();
        for (name, l) in &named {
            forward.insert(name.clone(), BTreeMap::from([(0, l.clone())]));
        }
        let mut backward = ModelPredictions::new();
        for (name, l) in named.iter().rev() {
            backward.insert(name.clone(), BTreeMap::from([(0, l.clone())]));
        }
        assert_eq!(
            fuse_all(&forward, 1, 100).unwrap(),
            fuse_all(&backward, 1, 100).unwrap()
        );
    }

    #[test]
    fn duplicate_clip_inside_one_list_is_rejected() {
        let mut l = list(3, &[("dup", 0.9), ("other", 0.8)]);
        l.entries.push(PredictionEntry {
            clip_id: "dup".into(),
            result_score: 0.7,
            rank_score: 3,
        });
        let err = fuse_label(3, &[&l]).unwrap_err();
        assert!(matches!(
            err,
            FuseError::DuplicateClipWithinList { label: 3, .. }
        ));
    }

    #[test]
    fn mismatched_label_is_rejected() {
        let l = list(3, &[("a", 0.5)]);
        assert!(matches!(
            fuse_label(4, &[&l]),
            Err(FuseError::LabelMismatch {
                expected: 4,
                actual: 3
            })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        /// Raising the top-ranked score of one list never lowers that
        /// clip's fused weight.
        #[test]
        fn raising_a_result_score_never_lowers_the_weight(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool: Vec<String> = (0..12).map(|i| format!("w{i:02}")).collect();
            let a = random_list(&mut rng, 0, &pool, 8);
            let b = random_list(&mut rng, 0, &pool, 8);
            let target = a.entries[0].clip_id.clone();

            let weight_of = |lists: &[&PredictionList]| -> f64 {
                fuse_label(0, lists)
                    .unwrap()
                    .into_iter()
                    .find(|s| s.clip_id == target)
                    .map(|s| s.weighted_score)
                    .unwrap_or(0.0)
            };
            let before = weight_of(&[&a, &b]);

            let mut boosted = a.clone();
            // The rank-1 entry can always move to 1.0 without breaking the
            // non-increasing score invariant.
            boosted.entries[0].result_score = 1.0;
            let after = weight_of(&[&boosted, &b]);
            prop_assert!(after >= before - 1e-15);
        }

        /// Weight over the union of models equals the sum of weights over
        /// disjoint subsets.
        #[test]
        fn weights_add_across_model_subsets(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
            let a = random_list(&mut rng, 0, &pool, 7);
            let b = random_list(&mut rng, 0, &pool, 7);
            let c = random_list(&mut rng, 0, &pool, 7);

            let weights = |lists: &[&PredictionList]| -> BTreeMap<String, f64> {
                fuse_label(0, lists)
                    .unwrap()
                    .into_iter()
                    .map(|s| (s.clip_id, s.weighted_score))
                    .collect()
            };
            let union = weights(&[&a, &b, &c]);
            let first = weights(&[&a]);
            let rest = weights(&[&b, &c]);
            for (clip, w) in &union {
                let split = first.get(clip).copied().unwrap_or(0.0)
                    + rest.get(clip).copied().unwrap_or(0.0);
                prop_assert!((w - split).abs() <= 1e-12, "clip {clip}: {w} vs {split}");
            }
        }
    }
}
