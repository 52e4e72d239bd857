//! Turn-level ranking metrics.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Item ids in descending score order together with the gold set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub ranking: Vec<u32>,
    pub gold: Vec<u32>,
}

impl RankedPrediction {
    pub fn new(ranking: Vec<u32>, gold: Vec<u32>) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::Contract("gold set is empty".into()));
        }
        let mut seen = ranking.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("ranking contains duplicates".into()));
        }
        Ok(Self { ranking, gold })
    }

    /// Ranks ids by descending score; equal scores keep the order given.
    pub fn from_scores(scored: &[(u32, f64)], gold: Vec<u32>) -> Result<Self> {
        let mut order: Vec<(u32, f64)> = scored.to_vec();
        order.sort_by(|a, b| b.1.total_cmp(&a.1));
        Self::new(order.into_iter().map(|(id, _)| id).collect(), gold)
    }
}

pub fn recall_at_k(pred: &RankedPrediction, k: usize) -> f64 {
    let top = &pred.ranking[..k.min(pred.ranking.len())];
    let hit = pred.gold.iter().filter(|g| top.contains(g)).count();
    hit as f64 / pred.gold.len() as f64
}

pub fn precision_at_1(pred: &RankedPrediction) -> f64 {
    match pred.ranking.first() {
        Some(top) if pred.gold.contains(top) => 1.0,
        _ => 0.0,
    }
}

/// Reciprocal rank of the first gold item.
pub fn mrr(pred: &RankedPrediction) -> Result<f64> {
    pred.ranking
        .iter()
        .position(|id| pred.gold.contains(id))
        .map(|p| 1.0 / (p + 1) as f64)
        .ok_or_else(|| Error::Contract("gold item missing from ranking".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub n_examples: usize,
}

/// Dataset means of R@1/3/5 and P@1, plus MRR when `with_mrr`.
pub fn summarize(preds: &[RankedPrediction], with_mrr: bool) -> Result<Vec<MetricRow>> {
    let n = preds.len();
    let mean = |f: &dyn Fn(&RankedPrediction) -> f64| {
        if n == 0 {
            0.0
        } else {
            preds.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let mut rows = Vec::new();
    for k in [1, 3, 5] {
        rows.push(MetricRow {
            metric: format!("R@{k}"),
            value: mean(&|p| recall_at_k(p, k)),
            n_examples: n,
        });
    }
    rows.push(MetricRow {
        metric: "P@1".into(),
        value: mean(&precision_at_1),
        n_examples: n,
    });
    if with_mrr {
        let mut total = 0.0;
        for p in preds {
            total += mrr(p)?;
        }
        rows.push(MetricRow {
            metric: "MRR".into(),
            value: if n == 0 { 0.0 } else { total / n as f64 },
            n_examples: n,
        });
    }
    Ok(rows)
}

pub fn write_metrics_tsv(mut w: impl Write, rows: &[MetricRow]) -> Result<()> {
    writeln!(w, "metric\tvalue\tn_examples")?;
    for r in rows {
        writeln!(w, "{}\t{:.6}\t{}", r.metric, r.value, r.n_examples)?;
    }
    Ok(())
}

pub fn metrics_map(rows: &[MetricRow]) -> BTreeMap<String, f64> {
    rows.iter().map(|r| (r.metric.clone(), r.value)).collect()
}
