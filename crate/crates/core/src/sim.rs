//! Self-play between the agent and a simulated user.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Responder, Tier};
use crate::ckg::DistanceCache;
use crate::corpus::{ResponsePool, Utterance};
use crate::error::{Error, Result};
use crate::grounding::Grounding;
use crate::ids::KeywordId;
use crate::numerics::Tensor;
use crate::strategy::{EmbeddingDistance, GraphDistance, KeywordDistance, Relaxation, TransitionDecision};

pub const DEFAULT_MAX_AGENT_TURNS: usize = 8;
pub const DEFAULT_DIALOGUES: usize = 1000;
const MAX_SAMPLING_TRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Start,
    Agent,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Uniform over keywords reachable in the graph from the start keywords.
    #[default]
    Reachable,
    /// Uniform over every grounded keyword.
    AnyGrounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub max_agent_turns: usize,
    pub n_dialogues: usize,
    pub seed: u64,
    pub target_policy: TargetPolicy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            max_agent_turns: DEFAULT_MAX_AGENT_TURNS,
            n_dialogues: DEFAULT_DIALOGUES,
            seed: 0,
            target_policy: TargetPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub index: usize,
    pub seed: u64,
    pub target: String,
    pub success: bool,
    /// Agent turn in effect when the target was first mentioned (0 if never).
    pub agent_turns_used: usize,
    pub aborted: Option<String>,
    pub transcript: Vec<TranscriptLine>,
    pub keyword_trace: Vec<TransitionDecision>,
    pub distance_trace: Vec<f64>,
    pub tiers: Vec<Tier>,
    pub relaxations: usize,
    /// Whether `distance_trace` decreases strictly.
    pub monotone: bool,
}

/// Exact word-level mention of the target label; no stemming or synonyms.
pub fn success_check(utterance: &Utterance, target_label: &str) -> bool {
    utterance.mentions(target_label)
}

pub fn run_dialogue(
    agent: &dyn Responder,
    user: &dyn Responder,
    grounding: &Grounding,
    pool: &ResponsePool,
    start: &Utterance,
    target: KeywordId,
    dist: &dyn KeywordDistance,
    max_agent_turns: usize,
) -> SimulationResult {
    let label = grounding.keyword_label(target);
    let mut result = SimulationResult {
        index: 0,
        seed: 0,
        target: label.to_string(),
        success: false,
        agent_turns_used: 0,
        aborted: None,
        transcript: vec![TranscriptLine {
            speaker: Speaker::Start,
            text: start.text.clone(),
        }],
        keyword_trace: Vec::new(),
        distance_trace: Vec::new(),
        tiers: Vec::new(),
        relaxations: 0,
        monotone: true,
    };
    let mut history = vec![start.clone()];
    let mut used: HashSet<_> = pool.id_of(start).into_iter().collect();
    for turn in 1..=max_agent_turns {
        let a = match agent.respond(&history, target, dist, &used) {
            Ok(a) => a,
            Err(e) => {
                result.aborted = Some(e.to_string());
                break;
            }
        };
        if let Some(d) = a.decision {
            if d.relaxation_level != Relaxation::Strict {
                result.relaxations += 1;
            }
            if result.distance_trace.last().is_some_and(|prev| d.dist_to_target >= *prev) {
                result.monotone = false;
            }
            result.keyword_trace.push(d);
            result.distance_trace.push(d.dist_to_target);
        }
        result.tiers.push(a.choice.tier);
        used.extend(pool.id_of(&a.reply));
        result.transcript.push(TranscriptLine {
            speaker: Speaker::Agent,
            text: a.reply.text.clone(),
        });
        let hit = success_check(&a.reply, label);
        history.push(a.reply);
        if hit {
            result.success = true;
            result.agent_turns_used = turn;
            break;
        }
        let u = match user.respond(&history, target, dist, &used) {
            Ok(u) => u,
            Err(e) => {
                result.aborted = Some(e.to_string());
                break;
            }
        };
        used.extend(pool.id_of(&u.reply));
        result.transcript.push(TranscriptLine {
            speaker: Speaker::User,
            text: u.reply.text.clone(),
        });
        let hit = success_check(&u.reply, label);
        history.push(u.reply);
        if hit {
            result.success = true;
            result.agent_turns_used = turn;
            break;
        }
    }
    result
}

/// How keyword-to-target distances are measured.
pub enum DistanceSource<'a> {
    Graph(&'a DistanceCache),
    /// Cosine over rows of an embedding table.
    Embedding(&'a Tensor),
}

impl DistanceSource<'_> {
    pub fn for_target<'g>(&'g self, grounding: &'g Grounding, target: KeywordId) -> Result<Box<dyn KeywordDistance + 'g>> {
        match self {
            DistanceSource::Graph(cache) => {
                let node = grounding
                    .keyword_node(target)
                    .ok_or_else(|| Error::Contract(format!("target `{}` is not in the graph", grounding.keyword_label(target))))?;
                let dmap: Arc<_> = cache.get(&grounding.graph, node)?;
                Ok(Box::new(GraphDistance::new(grounding, dmap)))
            }
            DistanceSource::Embedding(table) => Ok(Box::new(EmbeddingDistance::new(grounding, table, target))),
        }
    }
}

/// Start utterance and target for dialogue `index`, drawn from a generator
/// seeded with `seed + index`.
pub fn sample_episode<'s>(
    grounding: &Grounding,
    cache: &DistanceCache,
    starts: &'s [Utterance],
    policy: TargetPolicy,
    seed: u64,
    index: usize,
) -> Result<(&'s Utterance, KeywordId)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let grounded: Vec<KeywordId> = grounding.keywords.ids().filter(|k| grounding.keyword_node(*k).is_some()).collect();
    if starts.is_empty() || grounded.is_empty() {
        return Err(Error::Config("self-play needs start utterances and grounded keywords".into()));
    }
    for _ in 0..MAX_SAMPLING_TRIES {
        let start = &starts[rng.random_range(0..starts.len())];
        let candidates: Vec<KeywordId> = match policy {
            TargetPolicy::AnyGrounded => grounded.clone(),
            TargetPolicy::Reachable => {
                let mut reach = Vec::new();
                for k in &grounded {
                    let node = grounding.keyword_node(*k).expect("grounded");
                    let dmap = cache.get(&grounding.graph, node)?;
                    if start
                        .keywords
                        .iter()
                        .filter_map(|s| grounding.keyword_node(*s))
                        .any(|s| dmap.get(s).is_some())
                    {
                        reach.push(*k);
                    }
                }
                reach
            }
        };
        let candidates: Vec<KeywordId> = candidates
            .into_iter()
            .filter(|k| !start.keywords.contains(k) && !success_check(start, grounding.keyword_label(*k)))
            .collect();
        if !candidates.is_empty() {
            return Ok((start, candidates[rng.random_range(0..candidates.len())]));
        }
    }
    Err(Error::Config("could not sample a start utterance with a valid target".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfPlaySummary {
    pub n_dialogues: usize,
    pub n_success: usize,
    pub n_aborted: usize,
    /// Fraction of non-aborted dialogues that reached the target.
    pub success_rate: f64,
    /// Mean agent turns over successful dialogues; absent if none succeeded.
    pub mean_turns: Option<f64>,
    pub relaxations: usize,
    pub non_monotone: usize,
    pub max_agent_turns: usize,
}

pub fn summarize(results: &[SimulationResult], max_agent_turns: usize) -> SelfPlaySummary {
    let done: Vec<&SimulationResult> = results.iter().filter(|r| r.aborted.is_none()).collect();
    let wins: Vec<&SimulationResult> = done.iter().copied().filter(|r| r.success).collect();
    SelfPlaySummary {
        n_dialogues: results.len(),
        n_success: wins.len(),
        n_aborted: results.len() - done.len(),
        success_rate: if done.is_empty() { 0.0 } else { wins.len() as f64 / done.len() as f64 },
        mean_turns: if wins.is_empty() {
            None
        } else {
            Some(wins.iter().map(|r| r.agent_turns_used as f64).sum::<f64>() / wins.len() as f64)
        },
        relaxations: results.iter().map(|r| r.relaxations).sum(),
        non_monotone: results.iter().filter(|r| !r.monotone).count(),
        max_agent_turns,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_selfplay(
    agent: &dyn Responder,
    user: &dyn Responder,
    grounding: &Grounding,
    pool: &ResponsePool,
    starts: &[Utterance],
    cache: &DistanceCache,
    distances: &DistanceSource<'_>,
    config: &SimulationConfig,
) -> Result<(Vec<SimulationResult>, SelfPlaySummary)> {
    if config.max_agent_turns == 0 {
        return Err(Error::Config("max_agent_turns must be at least 1".into()));
    }
    let results: Vec<SimulationResult> = (0..config.n_dialogues)
        .into_par_iter()
        .map(|index| {
            let (start, target) = sample_episode(grounding, cache, starts, config.target_policy, config.seed, index)?;
            let dist = distances.for_target(grounding, target)?;
            let mut r = run_dialogue(agent, user, grounding, pool, start, target, dist.as_ref(), config.max_agent_turns);
            r.index = index;
            r.seed = config.seed.wrapping_add(index as u64);
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let summary = summarize(&results, config.max_agent_turns);
    Ok((results, summary))
}

pub fn write_summary_tsv(mut w: impl std::io::Write, s: &SelfPlaySummary) -> Result<()> {
    writeln!(w, "# turns are agent turns; max_agent_turns={}", s.max_agent_turns)?;
    writeln!(w, "Succ.(%)\t#Turns\tn_dialogues\tn_aborted")?;
    let turns = s.mean_turns.map_or_else(|| "-".to_string(), |t| format!("{t:.2}"));
    writeln!(w, "{:.1}\t{}\t{}\t{}", 100.0 * s.success_rate, turns, s.n_dialogues, s.n_aborted)?;
    Ok(())
}
