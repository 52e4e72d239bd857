mod common;

use common::{mean_recall, predictor, shipped};
use keyguide::numerics::AdamConfig;
use keyguide::pmi::PmiTable;
use keyguide::predictor::{evaluate_predictor, KeywordPredictor, PredictorModel};
use keyguide::train::TrainConfig;

fn overfit_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 8,
        adam: AdamConfig {
            lr: 0.02,
            ..AdamConfig::default()
        },
        patience: 5,
        seed,
    }
}

#[test]
fn distribution_lives_on_the_mask() {
    let ds = shipped();
    let g = &ds.grounding;
    let m = predictor(g, 6, true, 3);
    for ex in ds.prediction.train.iter().take(40) {
        let out = m.forward(g, &ex.context_refs(), &ex.context_keywords, &ex.candidate_mask).unwrap();
        assert_eq!(out.mask, ex.candidate_mask);
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for k in g.keywords.ids() {
            if ex.candidate_mask.binary_search(&k).is_err() {
                assert_eq!(out.prob(k), 0.0);
            }
        }
        let (top, short) = out.top_k(out.mask.len() + 4);
        assert!(short);
        assert_eq!(top.len(), out.mask.len());
        assert_eq!(out.top_k(1).0[0].0, out.argmax().unwrap());
        let best = out.probs.iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(out.prob(out.argmax().unwrap()), best);
    }
}

#[test]
fn concept_ablation_keeps_parameters_and_changes_output() {
    let ds = shipped();
    let g = &ds.grounding;
    let full = predictor(g, 6, true, 9);
    let ablated = predictor(g, 6, false, 9);
    assert_eq!(full.store.total_parameters(), ablated.store.total_parameters());
    let ex = &ds.prediction.train[5];
    let a = full.forward(g, &ex.context_refs(), &ex.context_keywords, &ex.candidate_mask).unwrap();
    let b = ablated.forward(g, &ex.context_refs(), &ex.context_keywords, &ex.candidate_mask).unwrap();
    assert_eq!(a.mask, b.mask);
    assert_ne!(a.probs, b.probs);
}

#[test]
fn training_is_deterministic_and_decreasing() {
    let ds = shipped();
    let g = &ds.grounding;
    let config = TrainConfig {
        epochs: 3,
        ..overfit_config(4)
    };
    let run = || {
        let mut m = predictor(g, 8, true, 4);
        m.train(g, &ds.prediction.train, &[], &config).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.epochs[0].mean_loss.to_bits(), b.epochs[0].mean_loss.to_bits());
    let losses: Vec<f64> = a.epochs.iter().map(|e| e.mean_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn overfit_puts_gold_in_top_three() {
    let ds = shipped();
    let g = &ds.grounding;
    let mut m = predictor(g, 16, true, 0);
    m.train(g, &ds.prediction.train, &[], &overfit_config(0)).unwrap();
    let preds = evaluate_predictor(&m, g, &ds.prediction.train).unwrap();
    let hits = preds.iter().filter(|p| p.ranking[..3.min(p.ranking.len())].iter().any(|r| p.gold.contains(r))).count();
    assert!(hits as f64 >= 0.95 * preds.len() as f64, "{hits}/{}", preds.len());
    assert!(mean_recall(&preds, 1) >= 0.9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    m.save(&path, 30).unwrap();
    let (back, meta) = PredictorModel::load(&path, g).unwrap();
    assert_eq!(meta.epoch, 30);
    let again = evaluate_predictor(&back, g, &ds.prediction.train).unwrap();
    assert_eq!(preds, again);
}

#[test]
fn pmi_uses_the_same_mask() {
    let ds = shipped();
    let g = &ds.grounding;
    let pmi = PmiTable::fit(&ds.conversations.train, 1.0).unwrap();
    let m = predictor(g, 4, true, 0);
    for ex in ds.prediction.test.iter().take(20) {
        let a = pmi.predict(g, &ex.context_refs(), None).unwrap().unwrap();
        let b = m.predict(g, &ex.context_refs(), None).unwrap().unwrap();
        assert_eq!(a.mask, b.mask);
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
