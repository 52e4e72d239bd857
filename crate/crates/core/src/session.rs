//! Live chat sessions: state machine, idempotent mutations and an
//! append-only event log that is replayed on startup.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Responder, Tier};
use crate::corpus::{ResponsePool, TextPipeline, Utterance};
use crate::error::{Error, Result};
use crate::grounding::Grounding;
use crate::ids::KeywordId;
use crate::sim::{success_check, DistanceSource, Speaker, TranscriptLine};
use crate::strategy::{Relaxation, TransitionDecision};

pub const MIN_RATING: u8 = 1;
pub const MAX_RATING: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Success,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedKeyword {
    pub keyword: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionView {
    pub chosen: String,
    pub probability: f64,
    #[serde(with = "crate::serde_inf")]
    pub distance: f64,
    #[serde(with = "crate::serde_inf")]
    pub current_best: f64,
    pub relaxation: Relaxation,
}

/// What the agent saw and chose on one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub predicted: Vec<PredictedKeyword>,
    pub decision: Option<DecisionView>,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub id: String,
    pub target: String,
    pub transcript: Vec<TranscriptLine>,
    pub keyword_trace: Vec<TransitionDecision>,
    #[serde(with = "crate::serde_inf::vec")]
    pub distance_trace: Vec<f64>,
    pub diagnostics: Vec<Diagnostics>,
    pub status: SessionStatus,
    pub smoothness_rating: Option<u8>,
    pub agent_turns: usize,
    pub max_agent_turns: usize,
}

impl ChatSession {
    /// JSON form for clients; the target is dropped unless `reveal`.
    pub fn view(&self, reveal: bool) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("session serializes");
        if !reveal {
            v.as_object_mut().expect("object").remove("target");
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageOutcome {
    pub session: String,
    pub reply: Option<String>,
    pub diagnostics: Option<Diagnostics>,
    pub status: SessionStatus,
    pub agent_turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Create {
        session: String,
        target: String,
        key: Option<String>,
    },
    Message {
        session: String,
        text: String,
        key: Option<String>,
        reply: Option<String>,
    },
    Rating {
        session: String,
        smoothness: u8,
        key: Option<String>,
    },
    End {
        session: String,
        key: Option<String>,
    },
}

/// Everything a session needs from the loaded models.
pub struct SessionEngine<'a> {
    pub grounding: &'a Grounding,
    pub pipeline: &'a TextPipeline,
    pub agent: &'a dyn Responder,
    pub distances: &'a DistanceSource<'a>,
    pub pool: &'a ResponsePool,
    pub max_agent_turns: usize,
    pub seed: u64,
}

impl SessionEngine<'_> {
    fn grounded_target(&self, label: &str) -> Result<KeywordId> {
        self.grounding
            .keyword_by_label(label)
            .filter(|k| self.grounding.keyword_node(*k).is_some())
            .ok_or_else(|| Error::Validation(format!("`{label}` is not a keyword in the graph")))
    }

    fn sample_target(&self, index: u64) -> Result<KeywordId> {
        let grounded: Vec<KeywordId> = self
            .grounding
            .keywords
            .ids()
            .filter(|k| self.grounding.keyword_node(*k).is_some())
            .collect();
        if grounded.is_empty() {
            return Err(Error::Config("no grounded keywords to use as targets".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(index));
        Ok(grounded[rng.random_range(0..grounded.len())])
    }
}

enum Cached {
    Message(MessageOutcome),
    Rating,
    End,
}

struct Entry {
    session: ChatSession,
    target: KeywordId,
    history: Vec<Utterance>,
    done: HashMap<String, Cached>,
}

impl Entry {
    fn message(&mut self, engine: &SessionEngine<'_>, text: &str) -> Result<MessageOutcome> {
        if self.session.status != SessionStatus::Active {
            return Err(Error::State(format!("session {} is {:?}", self.session.id, self.session.status)));
        }
        if text.trim().is_empty() {
            return Err(Error::Validation("message text is empty".into()));
        }
        let s = &mut self.session;
        let label = engine.grounding.keyword_label(self.target);
        let user = engine.pipeline.utterance(text, engine.grounding);
        s.transcript.push(TranscriptLine {
            speaker: Speaker::User,
            text: text.to_string(),
        });
        let hit = success_check(&user, label);
        self.history.push(user);
        let mut outcome = MessageOutcome {
            session: s.id.clone(),
            reply: None,
            diagnostics: None,
            status: s.status,
            agent_turns: s.agent_turns,
        };
        if hit {
            s.status = SessionStatus::Success;
            outcome.status = s.status;
            return Ok(outcome);
        }
        let dist = engine.distances.for_target(engine.grounding, self.target)?;
        let used: HashSet<_> = self.history.iter().filter_map(|u| engine.pool.id_of(u)).collect();
        let turn = engine.agent.respond(&self.history, self.target, dist.as_ref(), &used)?;
        let g = engine.grounding;
        let diagnostics = Diagnostics {
            predicted: turn
                .predicted
                .iter()
                .map(|(k, p)| PredictedKeyword {
                    keyword: g.keyword_label(*k).to_string(),
                    probability: *p,
                })
                .collect(),
            decision: turn.decision.map(|d| DecisionView {
                chosen: g.keyword_label(d.chosen).to_string(),
                probability: d.probability,
                distance: d.dist_to_target,
                current_best: d.current_best_dist,
                relaxation: d.relaxation_level,
            }),
            tier: turn.choice.tier,
        };
        if let Some(d) = turn.decision {
            s.keyword_trace.push(d);
            s.distance_trace.push(d.dist_to_target);
        }
        s.diagnostics.push(diagnostics.clone());
        s.agent_turns += 1;
        s.transcript.push(TranscriptLine {
            speaker: Speaker::Agent,
            text: turn.reply.text.clone(),
        });
        if success_check(&turn.reply, label) {
            s.status = SessionStatus::Success;
        } else if s.agent_turns >= s.max_agent_turns {
            s.status = SessionStatus::Ended;
        }
        outcome.reply = Some(turn.reply.text.clone());
        outcome.diagnostics = Some(diagnostics);
        outcome.status = s.status;
        outcome.agent_turns = s.agent_turns;
        self.history.push(turn.reply);
        Ok(outcome)
    }

    fn rate(&mut self, smoothness: u8) -> Result<()> {
        if !(MIN_RATING..=MAX_RATING).contains(&smoothness) {
            return Err(Error::Validation(format!(
                "smoothness must be in [{MIN_RATING}, {MAX_RATING}], got {smoothness}"
            )));
        }
        if self.session.status == SessionStatus::Active {
            return Err(Error::State("rating is only accepted once the session is over".into()));
        }
        self.session.smoothness_rating = Some(smoothness);
        Ok(())
    }

    fn end(&mut self) -> Result<()> {
        if self.session.status != SessionStatus::Active {
            return Err(Error::State(format!("session {} is already over", self.session.id)));
        }
        self.session.status = SessionStatus::Ended;
        Ok(())
    }
}

/// In-memory session index backed by an optional JSONL event log.
/// Mutations on one session are serialized by its own lock.
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
    created: Mutex<CreateState>,
    log: Mutex<Option<BufWriter<File>>>,
    log_path: Option<PathBuf>,
}

#[derive(Default)]
struct CreateState {
    count: u64,
    by_key: HashMap<String, String>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self {
            sessions: RwLock::default(),
            created: Mutex::default(),
            log: Mutex::new(None),
            log_path: None,
        }
    }

    /// Replays `path` if it exists, then appends new events to it. A replayed
    /// agent reply that differs from the logged one is an error.
    pub fn open(path: &Path, engine: &SessionEngine<'_>) -> Result<Self> {
        let mut store = Self::in_memory();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: LogEvent =
                    serde_json::from_str(&line).map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
                store.apply(engine, &event)?;
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        store.log = Mutex::new(Some(BufWriter::new(f)));
        store.log_path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    fn apply(&self, engine: &SessionEngine<'_>, event: &LogEvent) -> Result<()> {
        match event {
            LogEvent::Create { session, target, key } => {
                let k = engine.grounded_target(target)?;
                let mut c = lock(&self.created);
                self.insert(engine, session.clone(), k);
                c.count += 1;
                if let Some(key) = key {
                    c.by_key.insert(key.clone(), session.clone());
                }
            }
            LogEvent::Message { session, text, key, reply } => {
                let entry = self.entry(session)?;
                let mut e = lock(&entry);
                let out = e.message(engine, text)?;
                if out.reply != *reply {
                    return Err(Error::Contract(format!("replay of session {session} produced a different reply")));
                }
                if let Some(key) = key {
                    e.done.insert(key.clone(), Cached::Message(out));
                }
            }
            LogEvent::Rating { session, smoothness, key } => {
                let entry = self.entry(session)?;
                let mut e = lock(&entry);
                e.rate(*smoothness)?;
                if let Some(key) = key {
                    e.done.insert(key.clone(), Cached::Rating);
                }
            }
            LogEvent::End { session, key } => {
                let entry = self.entry(session)?;
                let mut e = lock(&entry);
                e.end()?;
                if let Some(key) = key {
                    e.done.insert(key.clone(), Cached::End);
                }
            }
        }
        Ok(())
    }

    fn append(&self, event: &LogEvent) -> Result<()> {
        if let Some(w) = lock(&self.log).as_mut() {
            serde_json::to_writer(&mut *w, event)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }

    fn insert(&self, engine: &SessionEngine<'_>, id: String, target: KeywordId) {
        let session = ChatSession {
            id: id.clone(),
            target: engine.grounding.keyword_label(target).to_string(),
            transcript: Vec::new(),
            keyword_trace: Vec::new(),
            distance_trace: Vec::new(),
            diagnostics: Vec::new(),
            status: SessionStatus::Active,
            smoothness_rating: None,
            agent_turns: 0,
            max_agent_turns: engine.max_agent_turns,
        };
        let entry = Entry {
            session,
            target,
            history: Vec::new(),
            done: HashMap::new(),
        };
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::new(Mutex::new(entry)));
    }

    fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    /// Starts a session; `target` is sampled when absent. Retrying with the
    /// same key returns the session created first.
    pub fn create(&self, engine: &SessionEngine<'_>, target: Option<&str>, key: Option<&str>) -> Result<ChatSession> {
        if engine.max_agent_turns == 0 {
            return Err(Error::Config("max_agent_turns must be at least 1".into()));
        }
        let mut c = lock(&self.created);
        if let Some(id) = key.and_then(|k| c.by_key.get(k)) {
            return self.get(id);
        }
        let k = match target {
            Some(label) => engine.grounded_target(label)?,
            None => engine.sample_target(c.count)?,
        };
        let id = format!("s{:06}", c.count + 1);
        self.append(&LogEvent::Create {
            session: id.clone(),
            target: engine.grounding.keyword_label(k).to_string(),
            key: key.map(str::to_string),
        })?;
        self.insert(engine, id.clone(), k);
        c.count += 1;
        if let Some(key) = key {
            c.by_key.insert(key.to_string(), id.clone());
        }
        drop(c);
        self.get(&id)
    }

    pub fn message(&self, engine: &SessionEngine<'_>, id: &str, text: &str, key: Option<&str>) -> Result<MessageOutcome> {
        let entry = self.entry(id)?;
        let mut e = lock(&entry);
        if let Some(Cached::Message(out)) = key.and_then(|k| e.done.get(k)) {
            return Ok(out.clone());
        }
        let before = (e.session.clone(), e.history.len());
        let out = match e.message(engine, text) {
            Ok(out) => out,
            Err(err) => {
                e.session = before.0;
                e.history.truncate(before.1);
                return Err(err);
            }
        };
        self.append(&LogEvent::Message {
            session: id.to_string(),
            text: text.to_string(),
            key: key.map(str::to_string),
            reply: out.reply.clone(),
        })?;
        if let Some(k) = key {
            e.done.insert(k.to_string(), Cached::Message(out.clone()));
        }
        Ok(out)
    }

    pub fn rate(&self, id: &str, smoothness: u8, key: Option<&str>) -> Result<ChatSession> {
        let entry = self.entry(id)?;
        let mut e = lock(&entry);
        if let Some(Cached::Rating) = key.and_then(|k| e.done.get(k)) {
            return Ok(e.session.clone());
        }
        e.rate(smoothness)?;
        self.append(&LogEvent::Rating {
            session: id.to_string(),
            smoothness,
            key: key.map(str::to_string),
        })?;
        if let Some(k) = key {
            e.done.insert(k.to_string(), Cached::Rating);
        }
        Ok(e.session.clone())
    }

    pub fn end(&self, id: &str, key: Option<&str>) -> Result<ChatSession> {
        let entry = self.entry(id)?;
        let mut e = lock(&entry);
        if let Some(Cached::End) = key.and_then(|k| e.done.get(k)) {
            return Ok(e.session.clone());
        }
        e.end()?;
        self.append(&LogEvent::End {
            session: id.to_string(),
            key: key.map(str::to_string),
        })?;
        if let Some(k) = key {
            e.done.insert(k.to_string(), Cached::End);
        }
        Ok(e.session.clone())
    }

    pub fn get(&self, id: &str) -> Result<ChatSession> {
        let entry = self.entry(id)?;
        let s = lock(&entry).session.clone();
        Ok(s)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut v: Vec<String> = self.sessions.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect();
        v.sort();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentTurn, ResponseChoice};
    use crate::ckg::DistanceCache;
    use crate::ids::UtteranceId;
    use crate::matcher::MatchScore;
    use crate::strategy::KeywordDistance;
    use crate::synthetic::chain_corpus;

    /// Replies with the pool entry after the last one spoken.
    struct Next<'a>(&'a ResponsePool);

    impl Responder for Next<'_> {
        fn respond(
            &self,
            _history: &[Utterance],
            _target: KeywordId,
            _dist: &dyn KeywordDistance,
            used: &HashSet<UtteranceId>,
        ) -> Result<AgentTurn> {
            let (id, u) = self
                .0
                .iter()
                .find(|(id, _)| !used.contains(id))
                .ok_or_else(|| Error::Config("pool exhausted".into()))?;
            Ok(AgentTurn {
                reply: u.clone(),
                choice: ResponseChoice {
                    id,
                    tier: 3,
                    rank: 0,
                    score: MatchScore::new(0.0, 0.0, 0.0),
                },
                decision: None,
                predicted: Vec::new(),
            })
        }
    }

    fn with_engine(f: impl FnOnce(&SessionEngine<'_>)) {
        let ds = chain_corpus(6, 3).prepare().unwrap();
        let cache = DistanceCache::new();
        let distances = DistanceSource::Graph(&cache);
        let pipeline = ds.pipeline();
        let agent = Next(&ds.pool);
        let engine = SessionEngine {
            grounding: &ds.grounding,
            pipeline: &pipeline,
            agent: &agent,
            distances: &distances,
            pool: &ds.pool,
            max_agent_turns: 2,
            seed: 7,
        };
        f(&engine);
    }

    #[test]
    fn target_in_message_succeeds_and_unlocks_rating() {
        with_engine(|e| {
            let store = SessionStore::in_memory();
            let s = store.create(e, Some("river"), None).unwrap();
            assert!(matches!(store.rate(&s.id, 3, None), Err(Error::State(_))));
            let out = store.message(e, &s.id, "what about the river", None).unwrap();
            assert_eq!(out.status, SessionStatus::Success);
            assert!(out.reply.is_none());
            assert!(matches!(store.message(e, &s.id, "hi", None), Err(Error::State(_))));
            assert!(matches!(store.rate(&s.id, 6, None), Err(Error::Validation(_))));
            assert!(matches!(store.rate(&s.id, 0, None), Err(Error::Validation(_))));
            assert_eq!(store.rate(&s.id, 5, None).unwrap().smoothness_rating, Some(5));
        });
    }

    #[test]
    fn turn_cap_ends_session() {
        with_engine(|e| {
            let store = SessionStore::in_memory();
            let s = store.create(e, Some("winter"), None).unwrap();
            let a = store.message(e, &s.id, "hello there", None).unwrap();
            assert_eq!((a.status, a.agent_turns), (SessionStatus::Active, 1));
            let b = store.message(e, &s.id, "go on", None).unwrap();
            assert_eq!((b.status, b.agent_turns), (SessionStatus::Ended, 2));
            assert_eq!(store.get(&s.id).unwrap().transcript.len(), 4);
        });
    }

    #[test]
    fn unknown_ids_and_targets() {
        with_engine(|e| {
            let store = SessionStore::in_memory();
            assert!(matches!(store.get("nope"), Err(Error::NotFound(_))));
            assert!(matches!(store.create(e, Some("unicorn"), None), Err(Error::Validation(_))));
            assert!(matches!(store.message(e, "s000001", "x", None), Err(Error::NotFound(_))));
        });
    }

    #[test]
    fn idempotency_keys_dedupe_retries() {
        with_engine(|e| {
            let store = SessionStore::in_memory();
            let a = store.create(e, None, Some("k1")).unwrap();
            let b = store.create(e, None, Some("k1")).unwrap();
            assert_eq!(a.id, b.id);
            assert_eq!(store.ids().len(), 1);
            let m1 = store.message(e, &a.id, "hello there", Some("m1")).unwrap();
            let m2 = store.message(e, &a.id, "hello there", Some("m1")).unwrap();
            assert_eq!(m1, m2);
            assert_eq!(store.get(&a.id).unwrap().agent_turns, 1);
        });
    }

    #[test]
    fn failed_message_leaves_no_trace() {
        with_engine(|e| {
            let store = SessionStore::in_memory();
            let s = store.create(e, Some("winter"), None).unwrap();
            assert!(matches!(store.message(e, &s.id, "   ", None), Err(Error::Validation(_))));
            assert!(store.get(&s.id).unwrap().transcript.is_empty());
        });
    }

    #[test]
    fn log_replay_restores_sessions() {
        with_engine(|e| {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("sessions.jsonl");
            let (id, before) = {
                let store = SessionStore::open(&path, e).unwrap();
                let s = store.create(e, None, Some("c")).unwrap();
                store.message(e, &s.id, "hello there", Some("m")).unwrap();
                store.end(&s.id, None).unwrap();
                store.rate(&s.id, 4, Some("r")).unwrap();
                (s.id.clone(), store.get(&s.id).unwrap())
            };
            let store = SessionStore::open(&path, e).unwrap();
            assert_eq!(store.get(&id).unwrap(), before);
            assert_eq!(store.create(e, None, Some("c")).unwrap().id, id);
            let next = store.create(e, None, None).unwrap();
            assert_ne!(next.id, id);
        });
    }

    #[test]
    fn hidden_target_is_dropped_from_view() {
        with_engine(|e| {
            let store = SessionStore::in_memory();
            let s = store.create(e, Some("river"), None).unwrap();
            assert!(s.view(false).get("target").is_none());
            assert_eq!(s.view(true)["target"], "river");
        });
    }
}
