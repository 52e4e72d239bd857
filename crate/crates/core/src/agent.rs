//! The target-driving agent and the simulated users it talks to.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{ResponsePool, Utterance};
use crate::error::{Error, Result};
use crate::grounding::Grounding;
use crate::ids::{KeywordId, UtteranceId};
use crate::matcher::{EncodedPool, MatchScore, MatcherModel, PREDICTED_KEYWORDS};
use crate::predictor::KeywordPredictor;
use crate::strategy::{current_best, current_keywords, select_keyword, KeywordDistance, StrategyConfig, TransitionDecision};

pub const DEFAULT_POOL_SIZE: usize = 100;

/// Which rule picked the response: 1 mentions the selected keyword, 2 has a
/// keyword closer to the target, 3 is the best-scoring candidate.
pub type Tier = u8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseChoice {
    pub id: UtteranceId,
    pub tier: Tier,
    /// Position in the score order, starting at 0.
    pub rank: usize,
    pub score: MatchScore,
}

/// Picks a response among the `pool_size` best-scoring candidates not in
/// `exclude`, preferring tier 1, then tier 2, then the top score.
#[allow(clippy::too_many_arguments)]
pub fn agent_respond(
    scores: &[MatchScore],
    pool: &ResponsePool,
    grounding: &Grounding,
    selected: Option<KeywordId>,
    current_best_dist: f64,
    dist: &dyn KeywordDistance,
    pool_size: usize,
    exclude: &HashSet<UtteranceId>,
) -> Result<ResponseChoice> {
    if pool.is_empty() {
        return Err(Error::Config("response pool is empty".into()));
    }
    if pool_size == 0 {
        return Err(Error::Config("pool size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|i| !exclude.contains(&UtteranceId::from_index(*i)))
        .collect();
    order.sort_by(|a, b| scores[*b].s.total_cmp(&scores[*a].s).then(a.cmp(b)));
    order.truncate(pool_size);
    let Some(&top) = order.first() else {
        return Err(Error::Config("every pool response has been used".into()));
    };
    let label = selected.map(|k| grounding.keyword_label(k));
    let tier1 = label.and_then(|l| order.iter().position(|i| pool.get(UtteranceId::from_index(*i)).mentions(l)));
    let tier2 = || {
        order.iter().position(|i| {
            pool.get(UtteranceId::from_index(*i))
                .keywords
                .iter()
                .any(|k| dist.distance(*k) < current_best_dist)
        })
    };
    let (rank, tier) = match tier1 {
        Some(r) => (r, 1),
        None => match tier2() {
            Some(r) => (r, 2),
            None => (0, 3),
        },
    };
    let i = if tier == 3 { top } else { order[rank] };
    Ok(ResponseChoice {
        id: UtteranceId::from_index(i),
        tier,
        rank,
        score: scores[i],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub pool_size: usize,
    pub strategy: StrategyConfig,
    /// Utterances of history fed to the matcher.
    pub max_context: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            pool_size: DEFAULT_POOL_SIZE,
            strategy: StrategyConfig::default(),
            max_context: crate::corpus::MAX_CONTEXT_UTTERANCES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub reply: Utterance,
    pub choice: ResponseChoice,
    pub decision: Option<TransitionDecision>,
    pub predicted: Vec<(KeywordId, f64)>,
}

/// A participant that answers the dialogue so far. `used` lists pool entries
/// already spoken in this dialogue.
pub trait Responder: Send + Sync {
    fn respond(
        &self,
        history: &[Utterance],
        target: KeywordId,
        dist: &dyn KeywordDistance,
        used: &HashSet<UtteranceId>,
    ) -> Result<AgentTurn>;
}

/// Predictor, keyword strategy and keyword-augmented matcher combined.
pub struct CkcAgent<'a> {
    pub grounding: &'a Grounding,
    pub predictor: &'a dyn KeywordPredictor,
    pub matcher: &'a MatcherModel,
    pub pool: &'a ResponsePool,
    pub encoded: &'a EncodedPool,
    pub config: AgentConfig,
}

impl Responder for CkcAgent<'_> {
    fn respond(
        &self,
        history: &[Utterance],
        target: KeywordId,
        dist: &dyn KeywordDistance,
        used: &HashSet<UtteranceId>,
    ) -> Result<AgentTurn> {
        let refs: Vec<&Utterance> = history.iter().collect();
        let tail = &refs[refs.len().saturating_sub(2)..];
        let output = self.predictor.predict(self.grounding, tail, Some(target))?;
        let current = current_keywords(&refs, self.config.strategy.comparison);
        let best = current_best(&current, dist);
        let (decision, predicted) = match &output {
            Some(out) => (
                Some(select_keyword(out, &current, target, dist, &self.config.strategy)?),
                out.top_k(PREDICTED_KEYWORDS).0,
            ),
            None => (None, Vec::new()),
        };
        let kws: Vec<KeywordId> = predicted.iter().map(|(k, _)| *k).collect();
        let context = &refs[refs.len().saturating_sub(self.config.max_context)..];
        let (x, kx) = self.matcher.encode_context(self.grounding, context, &kws)?;
        let scores = self.matcher.score_pool(&x, &kx, self.encoded);
        let choice = agent_respond(
            &scores,
            self.pool,
            self.grounding,
            decision.map(|d| d.chosen),
            best,
            dist,
            self.config.pool_size,
            used,
        )?;
        Ok(AgentTurn {
            reply: self.pool.get(choice.id).clone(),
            choice,
            decision,
            predicted,
        })
    }
}

/// Passive partner: the best utterance-channel match from its pool, with
/// no keyword guidance.
pub struct RetrievalUser<'a> {
    pub grounding: &'a Grounding,
    pub matcher: &'a MatcherModel,
    pub pool: &'a ResponsePool,
    pub encoded: &'a EncodedPool,
    pub max_context: usize,
}

impl Responder for RetrievalUser<'_> {
    fn respond(
        &self,
        history: &[Utterance],
        _target: KeywordId,
        _dist: &dyn KeywordDistance,
        used: &HashSet<UtteranceId>,
    ) -> Result<AgentTurn> {
        let refs: Vec<&Utterance> = history.iter().collect();
        let context = &refs[refs.len().saturating_sub(self.max_context)..];
        let (x, kx) = self.matcher.encode_context(self.grounding, context, &[])?;
        let scores: Vec<MatchScore> = self
            .matcher
            .score_pool(&x, &kx, self.encoded)
            .into_iter()
            .map(|s| MatchScore::new(s.s_u, s.s_k, 0.0))
            .collect();
        let mut best: Option<usize> = None;
        for (i, s) in scores.iter().enumerate() {
            if used.contains(&UtteranceId::from_index(i)) {
                continue;
            }
            if best.is_none_or(|b| s.s_u > scores[b].s_u) {
                best = Some(i);
            }
        }
        let i = best.ok_or_else(|| Error::Config("every pool response has been used".into()))?;
        Ok(AgentTurn {
            reply: self.pool.get(UtteranceId::from_index(i)).clone(),
            choice: ResponseChoice {
                id: UtteranceId::from_index(i),
                tier: 3,
                rank: 0,
                score: scores[i],
            },
            decision: None,
            predicted: Vec::new(),
        })
    }
}

/// Repeats the previous utterance back.
pub struct EchoUser;

impl Responder for EchoUser {
    fn respond(
        &self,
        history: &[Utterance],
        _target: KeywordId,
        _dist: &dyn KeywordDistance,
        _used: &HashSet<UtteranceId>,
    ) -> Result<AgentTurn> {
        let last = history
            .last()
            .ok_or_else(|| Error::Contract("cannot echo an empty dialogue".into()))?;
        Ok(AgentTurn {
            reply: last.clone(),
            choice: ResponseChoice {
                id: UtteranceId::from_index(0),
                tier: 3,
                rank: 0,
                score: MatchScore::new(0.0, 0.0, 0.0),
            },
            decision: None,
            predicted: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckg::{CkgGraph, CkgTriplet};
    use crate::ids::TokenId;
    use crate::text::{KeywordVocab, Vocab};
    use proptest::prelude::*;

    struct Table(Vec<f64>);

    impl KeywordDistance for Table {
        fn distance(&self, kw: KeywordId) -> f64 {
            self.0.get(kw.index()).copied().unwrap_or(f64::INFINITY)
        }
    }

    fn world() -> Grounding {
        let words = ["apple", "pear", "plum", "fig", "the"];
        let vocab = Vocab::from_tokens(words).unwrap();
        let kv = KeywordVocab::from_entries(
            ["apple", "pear", "plum", "fig"]
                .iter()
                .map(|w| (vocab.get(w).unwrap(), w.to_string(), 1)),
        )
        .unwrap();
        let g = CkgGraph::from_triplets([
            CkgTriplet::new("apple", "R", "pear", 1.0),
            CkgTriplet::new("pear", "R", "plum", 1.0),
            CkgTriplet::new("plum", "R", "fig", 1.0),
        ])
        .unwrap();
        Grounding::new(vocab, kv, g)
    }

    fn utt(g: &Grounding, words: &[&str]) -> Utterance {
        Utterance {
            text: words.join(" "),
            words: words.iter().map(|w| w.to_string()).collect(),
            tokens: words.iter().map(|w| g.vocab.encode(w)).collect::<Vec<TokenId>>(),
            keywords: words.iter().filter_map(|w| g.keyword_by_label(w)).collect(),
            concepts: g.graph.extract_concepts(words),
        }
    }

    fn scores(v: &[f64]) -> Vec<MatchScore> {
        v.iter().map(|s| MatchScore::new(*s, 0.0, 0.0)).collect()
    }

    #[test]
    fn single_keyword_candidate_wins_tier_one() {
        let g = world();
        let pool = ResponsePool::from_utterances([
            utt(&g, &["the"]),
            utt(&g, &["the", "plum"]),
            utt(&g, &["the", "apple"]),
        ]);
        let plum = g.keyword_by_label("plum").unwrap();
        let d = Table(vec![3.0, 2.0, 1.0, 0.0]);
        let c = agent_respond(&scores(&[3.0, 1.0, 2.0]), &pool, &g, Some(plum), 2.0, &d, 100, &HashSet::new()).unwrap();
        assert_eq!((c.id, c.tier), (UtteranceId(1), 1));
    }

    #[test]
    fn nothing_closer_falls_back_to_top_score() {
        let g = world();
        let pool = ResponsePool::from_utterances([utt(&g, &["the", "apple"]), utt(&g, &["the"])]);
        let fig = g.keyword_by_label("fig").unwrap();
        let d = Table(vec![3.0, 2.0, 1.0, 0.0]);
        let c = agent_respond(&scores(&[1.0, 2.0]), &pool, &g, Some(fig), 2.0, &d, 100, &HashSet::new()).unwrap();
        assert_eq!((c.id, c.tier), (UtteranceId(1), 3));
        let used: HashSet<UtteranceId> = [UtteranceId(1)].into();
        let c = agent_respond(&scores(&[1.0, 2.0]), &pool, &g, Some(fig), 2.0, &d, 100, &used).unwrap();
        assert_eq!(c.id, UtteranceId(0));
        assert!(agent_respond(&scores(&[]), &ResponsePool::default(), &g, None, 1.0, &d, 1, &used).is_err());
    }

    proptest! {
        #[test]
        fn larger_pool_never_demotes_tier(
            raw in prop::collection::vec((0.0f64..1.0, 0usize..5), 1..30),
            small in 1usize..10,
            extra in 0usize..20,
            sel in 0u32..4,
        ) {
            let g = world();
            let names = ["apple", "pear", "plum", "fig", "the"];
            let mut utts = Vec::new();
            for (i, (_, w)) in raw.iter().enumerate() {
                let tag = i.to_string();
                utts.push(utt(&g, &["the", names[*w], &tag]));
            }
            let pool = ResponsePool::from_utterances(utts);
            let s: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let d = Table(vec![3.0, 2.0, 1.0, 0.0]);
            let a = agent_respond(&scores(&s), &pool, &g, Some(KeywordId(sel)), 1.5, &d, small, &HashSet::new()).unwrap();
            let b = agent_respond(&scores(&s), &pool, &g, Some(KeywordId(sel)), 1.5, &d, small + extra, &HashSet::new()).unwrap();
            prop_assert!(b.tier <= a.tier);
        }
    }
}
