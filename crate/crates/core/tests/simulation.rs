mod common;

use common::matcher;
use keyguide::agent::{AgentConfig, CkcAgent, EchoUser};
use keyguide::ckg::{CkgTriplet, DistanceCache};
use keyguide::corpus::{RawConversation, ResponsePool, Split};
use keyguide::dataset::Dataset;
use keyguide::predictor::OraclePredictor;
use keyguide::sim::{
    run_dialogue, run_selfplay, success_check, summarize, write_summary_tsv, DistanceSource, SimulationConfig,
    TargetPolicy,
};
use keyguide::synthetic::{chain_corpus, fixture_corpus, KEYWORD_RELATION};
use keyguide::text::PosTag;

fn with_oracle_agent(ds: &Dataset, pool: &ResponsePool, f: impl FnOnce(&CkcAgent<'_>)) {
    let m = matcher(&ds.grounding, 4, 0);
    let encoded = m.encode_pool(&ds.grounding, pool).unwrap();
    let oracle = OraclePredictor::new();
    let agent = CkcAgent {
        grounding: &ds.grounding,
        predictor: &oracle,
        matcher: &m,
        pool,
        encoded: &encoded,
        config: AgentConfig::default(),
    };
    f(&agent);
}

#[test]
fn success_is_an_exact_mention() {
    let ds = fixture_corpus(0).prepare().unwrap();
    assert!(success_check(&ds.utterance("my favorite is country music"), "music"));
    assert!(!success_check(&ds.utterance("I love musicals"), "music"));
    assert!(success_check(&ds.utterance("they said ice cream is great"), "ice_cream"));
    assert!(!success_check(&ds.utterance("cream and ice"), "ice_cream"));
}

#[test]
fn adjacent_target_takes_one_turn() {
    let ds = chain_corpus(3, 2).prepare().unwrap();
    let g = &ds.grounding;
    let cache = DistanceCache::new();
    let source = DistanceSource::Graph(&cache);
    let start = ds.utterance("we talked about apple yesterday");
    let target = g.keyword_by_label("river").unwrap();
    let dist = source.for_target(g, target).unwrap();
    with_oracle_agent(&ds, &ds.pool, |agent| {
        let r = run_dialogue(agent, &EchoUser, g, &ds.pool, &start, target, dist.as_ref(), 8);
        assert!(r.success);
        assert_eq!(r.agent_turns_used, 1);
        assert_eq!(r.transcript.len(), 2);
        assert_eq!(r.tiers, [1]);
    });
}

#[test]
fn unreachable_unmentionable_target_fails_at_the_cap() {
    let mut corpus = chain_corpus(3, 2);
    corpus.raw.train.push(RawConversation {
        utterances: vec!["pizza again".into(), "soccer again".into()],
    });
    corpus.triplets.push(CkgTriplet::new("pizza", KEYWORD_RELATION, "soccer", 2.0));
    corpus.pos.insert("pizza", PosTag::Noun);
    corpus.pos.insert("soccer", PosTag::Noun);
    let ds = corpus.prepare().unwrap();
    let g = &ds.grounding;
    let target = g.keyword_by_label("soccer").unwrap();
    let pool = ResponsePool::from_utterances(
        ds.pool.iter().map(|(_, u)| u.clone()).filter(|u| !success_check(u, "soccer")),
    );
    let cache = DistanceCache::new();
    let source = DistanceSource::Graph(&cache);
    let dist = source.for_target(g, target).unwrap();
    let start = ds.utterance("we talked about apple yesterday");
    with_oracle_agent(&ds, &pool, |agent| {
        let r = run_dialogue(agent, &EchoUser, g, &pool, &start, target, dist.as_ref(), 3);
        assert!(!r.success);
        assert!(r.aborted.is_none());
        assert_eq!(r.agent_turns_used, 0);
        assert_eq!(r.transcript.len(), 1 + 2 * 3);
        assert!(r.distance_trace.iter().all(|d| d.is_infinite()));
    });
}

#[test]
fn failed_runs_have_no_turn_count() {
    let ds = chain_corpus(3, 2).prepare().unwrap();
    let g = &ds.grounding;
    let cache = DistanceCache::new();
    let source = DistanceSource::Graph(&cache);
    let start = ds.utterance("we talked about apple yesterday");
    let target = g.keyword_by_label("garden").unwrap();
    let dist = source.for_target(g, target).unwrap();
    let pool = ResponsePool::from_utterances(
        ds.pool.iter().map(|(_, u)| u.clone()).filter(|u| !success_check(u, "garden")),
    );
    with_oracle_agent(&ds, &pool, |agent| {
        let r = run_dialogue(agent, &EchoUser, g, &pool, &start, target, dist.as_ref(), 2);
        let s = summarize(&[r.clone(), r], 2);
        assert_eq!(s.success_rate, 0.0);
        assert_eq!(s.mean_turns, None);
        let mut tsv = Vec::new();
        write_summary_tsv(&mut tsv, &s).unwrap();
        let tsv = String::from_utf8(tsv).unwrap();
        assert_eq!(tsv.lines().nth(2).unwrap(), "0.0\t-\t2\t0");
    });
}

#[test]
fn selfplay_is_seeded() {
    let ds = chain_corpus(4, 5).prepare().unwrap();
    let g = &ds.grounding;
    let starts = ds.openers(Split::Test);
    let cache = DistanceCache::new();
    let source = DistanceSource::Graph(&cache);
    let config = SimulationConfig {
        n_dialogues: 20,
        seed: 11,
        target_policy: TargetPolicy::Reachable,
        ..SimulationConfig::default()
    };
    with_oracle_agent(&ds, &ds.pool, |agent| {
        let a = run_selfplay(agent, &EchoUser, g, &ds.pool, &starts, &cache, &source, &config).unwrap();
        let b = run_selfplay(agent, &EchoUser, g, &ds.pool, &starts, &cache, &source, &config).unwrap();
        assert_eq!(serde_json::to_string(&a.0).unwrap(), serde_json::to_string(&b.0).unwrap());
        assert_eq!(a.1, b.1);
        assert_eq!(a.1.success_rate, 1.0);
        for r in &a.0 {
            let last = r.transcript.last().unwrap();
            assert!(r.transcript[1..r.transcript.len() - 1]
                .iter()
                .all(|l| !success_check(&ds.utterance(&l.text), &r.target)));
            assert!(success_check(&ds.utterance(&last.text), &r.target));
        }
    });
}
