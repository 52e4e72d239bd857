//! Mini-batch Adam loop shared by the predictor and the matcher.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, GradSink, ParamStore, ParamView, Tensor};

/// Examples per gradient shard. Shards are summed in a fixed order so the
/// result does not depend on the number of worker threads.
const SHARD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_score: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_score: Option<f64>,
    pub stopped_early: bool,
}

/// Trains `store` in place. `grad` adds one example's gradient into the sink
/// and returns its loss; `validate` scores the current parameters (higher is
/// better). The best-scoring parameters are restored at the end; without a
/// validation score the last epoch is kept.
pub fn fit<E: Sync>(
    store: &mut ParamStore,
    examples: &[E],
    config: &TrainConfig,
    grad: impl Fn(ParamView<'_>, &mut GradSink<'_>, &E) -> Result<f64> + Sync,
    mut validate: impl FnMut(&ParamStore) -> Result<Option<f64>>,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = AdamState::new(config.adam, store);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_score: None,
        stopped_early: false,
    };
    let mut best_values: Option<Vec<Tensor>> = None;
    let mut since_best = 0;
    let mut batch_id = 0usize;
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            batch_id += 1;
            store.zero_grads();
            let view = store.view();
            let shards: Vec<Result<(f64, crate::numerics::GradBuffer)>> = batch
                .par_chunks(SHARD)
                .map(|shard| {
                    let mut buf = store.grad_buffer();
                    let mut loss = 0.0;
                    {
                        let mut sink = buf.sink();
                        for i in shard {
                            loss += grad(view, &mut sink, &examples[*i])?;
                        }
                    }
                    Ok((loss, buf))
                })
                .collect();
            let mut batch_loss = 0.0;
            for s in shards {
                let (loss, buf) = s?;
                batch_loss += loss;
                store.add_grads(&buf);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { batch: batch_id });
            }
            total += batch_loss;
            store.scale_grads(1.0 / batch.len() as f64);
            adam_step(store, &mut adam)?;
        }
        let lr = adam.lr();
        adam.end_epoch();
        let valid_score = validate(store)?;
        let mean_loss = total / examples.len() as f64;
        info!(epoch, mean_loss, ?valid_score, "epoch finished");
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            valid_score,
            lr,
        });
        match valid_score {
            Some(v) if report.best_score.is_none_or(|b| v > b) => {
                report.best_score = Some(v);
                report.best_epoch = epoch;
                best_values = Some(store.ids().map(|id| store.value(id).clone()).collect());
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= config.patience {
                    report.stopped_early = true;
                    break;
                }
            }
            None => report.best_epoch = epoch,
        }
    }
    if let Some(values) = best_values {
        let ids: Vec<_> = store.ids().collect();
        for (id, v) in ids.into_iter().zip(values) {
            store.set_value(id, v)?;
        }
    }
    Ok(report)
}
