//! Pointwise-mutual-information reference predictor over adjacent-turn
//! keyword transitions.

use std::collections::HashMap;

use crate::corpus::{Conversation, Utterance};
use crate::error::{Error, Result};
use crate::grounding::Grounding;
use crate::ids::KeywordId;
use crate::numerics::masked_softmax;
use crate::predictor::{KeywordPredictor, PredictorOutput};

pub const DEFAULT_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PmiTable {
    pairs: HashMap<(KeywordId, KeywordId), u32>,
    sources: HashMap<KeywordId, u32>,
    targets: HashMap<KeywordId, u32>,
    total: u64,
    pub alpha: f64,
}

impl PmiTable {
    /// Counts every keyword pair `(a, b)` with `a` in one utterance and `b`
    /// in the next one of the same conversation.
    pub fn fit<'a>(convs: impl IntoIterator<Item = &'a Conversation>, alpha: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::Config("PMI smoothing must be positive".into()));
        }
        let mut t = Self {
            pairs: HashMap::new(),
            sources: HashMap::new(),
            targets: HashMap::new(),
            total: 0,
            alpha,
        };
        for conv in convs {
            for w in conv.utterances.windows(2) {
                for a in &w[0].keywords {
                    for b in &w[1].keywords {
                        t.observe(*a, *b);
                    }
                }
            }
        }
        if t.total == 0 {
            return Err(Error::Config("no keyword transitions to fit PMI on".into()));
        }
        Ok(t)
    }

    pub fn observe(&mut self, a: KeywordId, b: KeywordId) {
        *self.pairs.entry((a, b)).or_default() += 1;
        *self.sources.entry(a).or_default() += 1;
        *self.targets.entry(b).or_default() += 1;
        self.total += 1;
    }

    pub fn count(&self, a: KeywordId, b: KeywordId) -> u32 {
        self.pairs.get(&(a, b)).copied().unwrap_or(0)
    }

    /// `ln[(c(a→b)+α)·T / ((c_src(a)+α)·(c_tgt(b)+α))]`.
    pub fn pmi(&self, a: KeywordId, b: KeywordId) -> f64 {
        let c = self.count(a, b) as f64;
        let s = self.sources.get(&a).copied().unwrap_or(0) as f64;
        let g = self.targets.get(&b).copied().unwrap_or(0) as f64;
        ((c + self.alpha) * self.total as f64 / ((s + self.alpha) * (g + self.alpha))).ln()
    }

    pub fn predict_keywords(&self, context_keywords: &[KeywordId], mask: &[KeywordId]) -> Result<PredictorOutput> {
        if mask.is_empty() {
            return Err(Error::Contract("prediction mask is empty".into()));
        }
        let scores: Vec<f64> = mask
            .iter()
            .map(|b| {
                if context_keywords.is_empty() {
                    0.0
                } else {
                    context_keywords.iter().map(|a| self.pmi(*a, *b)).sum::<f64>() / context_keywords.len() as f64
                }
            })
            .collect();
        Ok(PredictorOutput {
            mask: mask.to_vec(),
            probs: masked_softmax(&scores, &vec![true; mask.len()])?,
        })
    }
}

impl KeywordPredictor for PmiTable {
    fn name(&self) -> &str {
        "pmi"
    }

    fn predict_masked(
        &self,
        _grounding: &Grounding,
        _context: &[&Utterance],
        context_keywords: &[KeywordId],
        mask: &[KeywordId],
        _target: Option<KeywordId>,
    ) -> Result<PredictorOutput> {
        self.predict_keywords(context_keywords, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(i: u32) -> KeywordId {
        KeywordId(i)
    }

    fn table(pairs: &[(u32, u32, usize)]) -> PmiTable {
        let mut t = PmiTable {
            pairs: HashMap::new(),
            sources: HashMap::new(),
            targets: HashMap::new(),
            total: 0,
            alpha: DEFAULT_SMOOTHING,
        };
        for (a, b, n) in pairs {
            for _ in 0..*n {
                t.observe(k(*a), k(*b));
            }
        }
        t
    }

    #[test]
    fn formula_by_hand() {
        let t = table(&[(0, 1, 3), (0, 2, 1), (3, 1, 2)]);
        // c=3, T=6, src(0)=4, tgt(1)=5
        let want = ((3.0 + 1.0) * 6.0 / ((4.0 + 1.0) * (5.0 + 1.0)) as f64).ln();
        assert!((t.pmi(k(0), k(1)) - want).abs() < 1e-15);
    }

    #[test]
    fn unseen_pair_scores_below_seen_pair_with_same_marginals() {
        // 0→1 seen, 2→3 unseen, all marginals equal to 1
        let t = table(&[(0, 1, 1), (2, 4, 1), (5, 3, 1)]);
        assert!(t.pmi(k(2), k(3)) < t.pmi(k(0), k(1)));
    }

    #[test]
    fn planted_transition_ranks_first() {
        let mut pairs = vec![(0, 1, 90)];
        for j in 2..12 {
            pairs.push((0, j, 1));
            pairs.push((j, j + 1, 3));
        }
        let t = table(&pairs);
        let mask: Vec<KeywordId> = (1..12).map(k).collect();
        let out = t.predict_keywords(&[k(0)], &mask).unwrap();
        assert_eq!(out.argmax(), Some(k(1)));
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(out.prob(k(0)), 0.0);
    }
}
