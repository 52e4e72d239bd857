//! Target-directed choice of the next keyword.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ckg::DistanceMap;
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::grounding::Grounding;
use crate::ids::KeywordId;
use crate::numerics::{dot, Tensor};
use crate::predictor::PredictorOutput;

/// Distance from a keyword to the current target; `+∞` when unrelated.
pub trait KeywordDistance: Send + Sync {
    fn distance(&self, kw: KeywordId) -> f64;
}

/// Weighted shortest-path length on the graph.
#[derive(Debug, Clone)]
pub struct GraphDistance<'a> {
    grounding: &'a Grounding,
    dmap: Arc<DistanceMap>,
}

impl<'a> GraphDistance<'a> {
    pub fn new(grounding: &'a Grounding, dmap: Arc<DistanceMap>) -> Self {
        Self { grounding, dmap }
    }

    pub fn map(&self) -> &DistanceMap {
        &self.dmap
    }
}

impl KeywordDistance for GraphDistance<'_> {
    fn distance(&self, kw: KeywordId) -> f64 {
        self.grounding
            .keyword_node(kw)
            .map_or(f64::INFINITY, |n| self.dmap.get_or_inf(n))
    }
}

/// `1 - cos(e_k, e_target)` over word embeddings, the ordering used by
/// embedding-based strategies.
#[derive(Debug, Clone)]
pub struct EmbeddingDistance {
    dist: Vec<f64>,
}

impl EmbeddingDistance {
    pub fn new(grounding: &Grounding, table: &Tensor, target: KeywordId) -> Self {
        let row = |k: KeywordId| table.row(grounding.keywords.token(k).index());
        let norm = |v: &[f64]| dot(v, v).sqrt();
        let t = row(target);
        let tn = norm(t);
        let dist = grounding
            .keywords
            .ids()
            .map(|k| {
                if k == target {
                    return 0.0;
                }
                let v = row(k);
                let denom = norm(v) * tn;
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot(v, t) / denom
                }
            })
            .collect();
        Self { dist }
    }
}

impl KeywordDistance for EmbeddingDistance {
    fn distance(&self, kw: KeywordId) -> f64 {
        self.dist.get(kw.index()).copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    Strict,
    RelaxedEq,
    FallbackArgmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonSet {
    /// Keywords of the latest utterance that has any.
    #[default]
    MostRecent,
    /// Union over the last two utterances.
    LastTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub comparison: ComparisonSet,
    /// Take the target whenever it is strictly closer, regardless of probability.
    pub force_target_when_adjacent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionDecision {
    pub chosen: KeywordId,
    pub probability: f64,
    #[serde(with = "crate::serde_inf")]
    pub dist_to_target: f64,
    #[serde(with = "crate::serde_inf")]
    pub current_best_dist: f64,
    pub relaxation_level: Relaxation,
}

pub fn current_keywords(context: &[&Utterance], comparison: ComparisonSet) -> Vec<KeywordId> {
    match comparison {
        ComparisonSet::MostRecent => context
            .iter()
            .rev()
            .find(|u| !u.keywords.is_empty())
            .map(|u| u.keywords.clone())
            .unwrap_or_default(),
        ComparisonSet::LastTwo => {
            crate::corpus::union_keywords(context.iter().rev().take(2).rev().copied())
        }
    }
}

pub fn current_best(current: &[KeywordId], dist: &dyn KeywordDistance) -> f64 {
    current.iter().map(|k| dist.distance(*k)).fold(f64::INFINITY, f64::min)
}

fn argmax_where(output: &PredictorOutput, keep: impl Fn(KeywordId) -> bool) -> Option<(KeywordId, f64)> {
    let mut best: Option<(KeywordId, f64)> = None;
    for (k, p) in output.mask.iter().zip(&output.probs) {
        if *p <= 0.0 || !keep(*k) {
            continue;
        }
        // mask is sorted, so a strict comparison keeps the smaller id on ties
        if best.is_none_or(|(_, bp)| *p > bp) {
            best = Some((*k, *p));
        }
    }
    best
}

/// Most probable keyword strictly closer to the target than the current
/// keywords, relaxing to "no farther" and then to the plain argmax.
pub fn select_keyword(
    output: &PredictorOutput,
    current: &[KeywordId],
    target: KeywordId,
    dist: &dyn KeywordDistance,
    config: &StrategyConfig,
) -> Result<TransitionDecision> {
    let best = current_best(current, dist);
    let decide = |(chosen, probability): (KeywordId, f64), level| TransitionDecision {
        chosen,
        probability,
        dist_to_target: dist.distance(chosen),
        current_best_dist: best,
        relaxation_level: level,
    };
    if config.force_target_when_adjacent && dist.distance(target) < best {
        let p = output.prob(target);
        if p > 0.0 {
            return Ok(decide((target, p), Relaxation::Strict));
        }
    }
    if let Some(c) = argmax_where(output, |k| dist.distance(k) < best) {
        return Ok(decide(c, Relaxation::Strict));
    }
    if let Some(c) = argmax_where(output, |k| {
        let d = dist.distance(k);
        d.is_finite() && d <= best
    }) {
        return Ok(decide(c, Relaxation::RelaxedEq));
    }
    argmax_where(output, |_| true)
        .map(|c| decide(c, Relaxation::FallbackArgmax))
        .ok_or_else(|| Error::Contract("predicted distribution has empty support".into()))
}
