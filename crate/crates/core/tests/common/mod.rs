#![allow(dead_code)]

use keyguide::dataset::Dataset;
use keyguide::eval::{recall_at_k, RankedPrediction};
use keyguide::grounding::Grounding;
use keyguide::matcher::{MatcherConfig, MatcherModel};
use keyguide::numerics::ParamStore;
use keyguide::predictor::{PredictorConfig, PredictorModel};
use keyguide::synthetic::{planted_corpus, PlantedShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn shipped() -> Dataset {
    planted_corpus(&PlantedShape::shipped(), 0).prepare().unwrap()
}

pub fn toy() -> Dataset {
    planted_corpus(&PlantedShape::toy(), 1).prepare().unwrap()
}

/// Moves every parameter to a uniform draw in `[-0.5, 0.5)`, away from the
/// near-zero initialization where many units sit at a kink of nothing.
pub fn shake(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
}

pub fn predictor(g: &Grounding, dim: usize, use_concepts: bool, seed: u64) -> PredictorModel {
    PredictorModel::new(
        PredictorConfig {
            embed_dim: dim,
            hidden: dim,
            relation_buckets: 2,
            use_concepts,
            seed,
        },
        g,
    )
    .unwrap()
}

pub fn matcher(g: &Grounding, dim: usize, seed: u64) -> MatcherModel {
    MatcherModel::new(
        MatcherConfig {
            dim,
            relation_buckets: 2,
            seed,
            ..MatcherConfig::default()
        },
        g,
    )
    .unwrap()
}

pub fn mean_r1(preds: &[RankedPrediction]) -> f64 {
    preds.iter().map(|p| recall_at_k(p, 1)).sum::<f64>() / preds.len() as f64
}

pub fn mean_recall(preds: &[RankedPrediction], k: usize) -> f64 {
    preds.iter().map(|p| recall_at_k(p, k)).sum::<f64>() / preds.len() as f64
}
