//! Conversation ingestion and example generation for both learning tasks.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::Grounding;
use crate::ids::{KeywordId, NodeId, TokenId, UtteranceId};
use crate::text::{self, PosTagger, Stopwords, TfIdfStats};

pub const MAX_UTTERANCE_TOKENS: usize = 30;
pub const MAX_CONTEXT_UTTERANCES: usize = 8;
pub const RETRIEVAL_CANDIDATES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    /// Lowercased surface tokens after truncation.
    pub words: Vec<String>,
    pub tokens: Vec<TokenId>,
    pub keywords: Vec<KeywordId>,
    pub concepts: Vec<NodeId>,
}

impl Utterance {
    pub fn key(&self) -> String {
        self.words.join(" ")
    }

    /// Exact, contiguous match of an underscore-joined label against the words.
    pub fn mentions(&self, label: &str) -> bool {
        let parts: Vec<&str> = label.split('_').collect();
        !parts.is_empty()
            && self.words.len() >= parts.len()
            && self
                .words
                .windows(parts.len())
                .any(|w| w.iter().zip(&parts).all(|(a, b)| a == b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: usize,
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawConversation {
    pub utterances: Vec<String>,
}

/// Parses one JSON conversation record per line.
pub fn read_raw_conversations(reader: impl BufRead) -> Result<Vec<RawConversation>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawConversation = serde_json::from_str(&line).map_err(|e| Error::Record {
            index: i,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_raw_file(path: &Path) -> Result<Vec<RawConversation>> {
    let f = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.into()))?;
    read_raw_conversations(std::io::BufReader::new(f))
}

/// Tokenize-and-truncate step shared by vocabulary building and ingestion.
pub fn tokenize_truncated(text: &str) -> Vec<String> {
    let mut words = text::tokenize(text);
    words.truncate(MAX_UTTERANCE_TOKENS);
    words
}

/// Turns raw text into grounded utterances.
pub struct TextPipeline {
    pub pos: Box<dyn PosTagger>,
    pub stopwords: Stopwords,
    pub stats: TfIdfStats,
    pub keyword_cap: usize,
}

impl TextPipeline {
    pub fn new(pos: Box<dyn PosTagger>, stopwords: Stopwords, stats: TfIdfStats) -> Self {
        Self {
            pos,
            stopwords,
            stats,
            keyword_cap: text::DEFAULT_KEYWORD_CAP,
        }
    }

    pub fn utterance(&self, text: &str, grounding: &Grounding) -> Utterance {
        let words = tokenize_truncated(text);
        let tokens = words.iter().map(|w| grounding.vocab.encode(w)).collect();
        let keywords = text::extract_keywords(
            &words,
            self.pos.as_ref(),
            &self.stopwords,
            &self.stats,
            &grounding.keywords,
            self.keyword_cap,
        );
        let concepts = grounding.graph.extract_concepts(&words);
        Utterance {
            text: text.to_string(),
            words,
            tokens,
            keywords,
            concepts,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub conversations: usize,
    pub utterances: usize,
    pub dropped_conversations: usize,
}

/// Grounds raw conversations; conversations shorter than two utterances are dropped.
pub fn ingest(
    records: &[RawConversation],
    split: Split,
    pipeline: &TextPipeline,
    grounding: &Grounding,
) -> (Vec<Conversation>, IngestStats) {
    let mut stats = IngestStats::default();
    let mut out = Vec::new();
    for rec in records {
        if rec.utterances.len() < 2 {
            stats.dropped_conversations += 1;
            continue;
        }
        let utterances: Vec<Utterance> = rec
            .utterances
            .iter()
            .map(|t| pipeline.utterance(t, grounding))
            .collect();
        stats.utterances += utterances.len();
        out.push(Conversation {
            id: out.len(),
            split,
            utterances,
        });
    }
    stats.conversations = out.len();
    (out, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionExample {
    pub id: String,
    /// `x_{n-1}`, `x_n`.
    pub context: Vec<Utterance>,
    /// `k_{n-1} ∪ k_n` in first-seen order.
    pub context_keywords: Vec<KeywordId>,
    /// Sorted keyword ids allowed as predictions.
    pub candidate_mask: Vec<KeywordId>,
    pub gold: Vec<KeywordId>,
}

impl PredictionExample {
    pub fn context_refs(&self) -> Vec<&Utterance> {
        self.context.iter().collect()
    }
}

pub fn union_keywords<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Vec<KeywordId> {
    let mut out = Vec::new();
    for u in utts {
        for k in &u.keywords {
            if !out.contains(k) {
                out.push(*k);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionStats {
    pub emitted: usize,
    pub dropped: usize,
    pub mean_candidates: f64,
}

/// One example per position with two context utterances and a successor. Gold
/// keywords outside the neighborhood mask (including self-loops) are removed;
/// examples left with an empty mask or gold are dropped.
pub fn make_prediction_examples(
    convs: &[Conversation],
    grounding: &Grounding,
) -> (Vec<PredictionExample>, PredictionStats) {
    let mut out = Vec::new();
    let mut stats = PredictionStats::default();
    let mut mask_total = 0usize;
    for conv in convs {
        for i in 1..conv.utterances.len().saturating_sub(1) {
            let ctx = &conv.utterances[i - 1..=i];
            let context_keywords = union_keywords(ctx);
            let candidate_mask = grounding.candidate_mask(&context_keywords);
            let mut gold = Vec::new();
            for k in &conv.utterances[i + 1].keywords {
                if candidate_mask.binary_search(k).is_ok() && !gold.contains(k) {
                    gold.push(*k);
                }
            }
            if candidate_mask.is_empty() || gold.is_empty() {
                stats.dropped += 1;
                continue;
            }
            mask_total += candidate_mask.len();
            out.push(PredictionExample {
                id: format!("{}-{}-{}", conv.split.name(), conv.id, i),
                context: ctx.to_vec(),
                context_keywords,
                candidate_mask,
                gold,
            });
        }
    }
    stats.emitted = out.len();
    if !out.is_empty() {
        stats.mean_candidates = mask_total as f64 / out.len() as f64;
    }
    (out, stats)
}

/// Deduplicated utterances addressable by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponsePool {
    utterances: Vec<Utterance>,
    #[serde(skip)]
    by_key: HashMap<String, UtteranceId>,
}

impl ResponsePool {
    pub fn from_utterances(utts: impl IntoIterator<Item = Utterance>) -> Self {
        let mut pool = Self::default();
        for u in utts {
            pool.insert(u);
        }
        pool
    }

    pub fn insert(&mut self, u: Utterance) -> UtteranceId {
        let key = u.key();
        if let Some(id) = self.by_key.get(&key) {
            return *id;
        }
        let id = UtteranceId::from_index(self.utterances.len());
        self.by_key.insert(key, id);
        self.utterances.push(u);
        id
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: UtteranceId) -> &Utterance {
        &self.utterances[id.index()]
    }

    pub fn id_of(&self, u: &Utterance) -> Option<UtteranceId> {
        self.by_key.get(&u.key()).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UtteranceId, &Utterance)> {
        self.utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (UtteranceId::from_index(i), u))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.utterances)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_utterances(read_jsonl::<Utterance>(path)?))
    }
}

pub fn build_response_pool<'a>(convs: impl IntoIterator<Item = &'a Conversation>) -> ResponsePool {
    ResponsePool::from_utterances(
        convs
            .into_iter()
            .flat_map(|c| c.utterances.iter().cloned()),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalExample {
    pub id: String,
    /// Up to eight most recent utterances, oldest first.
    pub context: Vec<UtteranceId>,
    pub gold: UtteranceId,
    pub negatives: Vec<UtteranceId>,
}

impl RetrievalExample {
    /// Gold first, then negatives.
    pub fn candidates(&self) -> Vec<UtteranceId> {
        std::iter::once(self.gold)
            .chain(self.negatives.iter().copied())
            .collect()
    }
}

/// One example per non-opening utterance; 19 negatives drawn uniformly without
/// replacement from utterances that never occur in the same conversation.
pub fn make_retrieval_examples(
    convs: &[Conversation],
    pool: &ResponsePool,
    seed: u64,
) -> Result<Vec<RetrievalExample>> {
    let negatives_needed = RETRIEVAL_CANDIDATES - 1;
    let conv_ids: Vec<Vec<UtteranceId>> = convs
        .iter()
        .map(|c| {
            c.utterances
                .iter()
                .map(|u| {
                    pool.id_of(u).ok_or_else(|| {
                        Error::Contract(format!("utterance `{}` missing from pool", u.key()))
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<UtteranceId> = conv_ids.iter().flatten().copied().collect();
    all.sort_unstable();
    all.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (conv, ids) in convs.iter().zip(&conv_ids) {
        let own: HashSet<UtteranceId> = ids.iter().copied().collect();
        if all.len() - own.len() < negatives_needed {
            return Err(Error::Config(format!(
                "corpus too small for {RETRIEVAL_CANDIDATES}-way retrieval: conversation {} has {} eligible negatives",
                conv.id,
                all.len() - own.len()
            )));
        }
        for i in 1..ids.len() {
            let mut negatives = Vec::with_capacity(negatives_needed);
            let mut chosen = HashSet::new();
            while negatives.len() < negatives_needed {
                let cand = all[rng.random_range(0..all.len())];
                if !own.contains(&cand) && chosen.insert(cand) {
                    negatives.push(cand);
                }
            }
            out.push(RetrievalExample {
                id: format!("{}-{}-{}", conv.split.name(), conv.id, i),
                context: ids[i.saturating_sub(MAX_CONTEXT_UTTERANCES)..i].to_vec(),
                gold: ids[i],
                negatives,
            });
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.into()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            index: i,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckg::{CkgGraph, CkgTriplet};
    use crate::text::{KeywordVocab, PosLexicon, PosTag, Vocab};

    fn fixture() -> (Grounding, TextPipeline) {
        let words = ["friends", "ride", "music", "band", "jazz", "party", "i", "like", "the"];
        let vocab = Vocab::from_tokens(words).unwrap();
        let kws = ["friends", "ride", "music", "band", "jazz", "party"];
        let kv = KeywordVocab::from_entries(
            kws.iter().map(|k| (vocab.get(k).unwrap(), k.to_string(), 10)),
        )
        .unwrap();
        let graph = CkgGraph::from_triplets([
            CkgTriplet::new("music", "RelatedTo", "band", 2.0),
            CkgTriplet::new("band", "RelatedTo", "jazz", 2.0),
            CkgTriplet::new("party", "RelatedTo", "music", 1.5),
            CkgTriplet::new("friends", "RelatedTo", "party", 1.5),
        ])
        .unwrap();
        let mut pos = PosLexicon::default();
        for k in kws {
            pos.insert(k, PosTag::Noun);
        }
        let mut stats = TfIdfStats {
            total_docs: 100,
            ..Default::default()
        };
        for k in kws {
            stats.doc_freq.insert(k.to_string(), 5);
        }
        (
            Grounding::new(vocab, kv, graph),
            TextPipeline::new(Box::new(pos), Stopwords::default(), stats),
        )
    }

    fn conv(texts: &[&str]) -> RawConversation {
        RawConversation {
            utterances: texts.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn truncates_and_drops_short_conversations() {
        let (g, p) = fixture();
        let long = vec!["x"; 31].join(" ");
        let (convs, stats) = ingest(&[conv(&[&long, "music"]), conv(&["alone"])], Split::Train, &p, &g);
        assert_eq!(convs.len(), 1);
        assert_eq!(stats.dropped_conversations, 1);
        assert_eq!(convs[0].utterances[0].words.len(), 30);
        assert_eq!(convs[0].utterances[0].tokens.len(), 30);
    }

    #[test]
    fn malformed_record_reports_index() {
        let src = "{\"utterances\": [\"a\", \"b\"]}\nnot json\n";
        let err = read_raw_conversations(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Record { index: 1, .. }));
    }

    #[test]
    fn ingestion_is_idempotent() {
        let (g, p) = fixture();
        let raw = [conv(&["i like music", "the band", "jazz"])];
        assert_eq!(ingest(&raw, Split::Train, &p, &g), ingest(&raw, Split::Train, &p, &g));
    }

    #[test]
    fn irrelevant_transition_is_dropped() {
        let (g, p) = fixture();
        let (convs, _) = ingest(
            &[conv(&["the party", "my friends", "ride"]), conv(&["party", "music", "band", "music"])],
            Split::Train,
            &p,
            &g,
        );
        let (ex, stats) = make_prediction_examples(&convs, &g);
        // friends -> ride is not in the graph; music -> music is a self-loop; band is kept
        assert_eq!(stats.dropped, 2);
        assert_eq!(ex.len(), 1);
        assert_eq!(g.keyword_label(ex[0].gold[0]), "band");
        for e in &ex {
            assert!(e.gold.iter().all(|k| e.candidate_mask.contains(k)));
            assert!(e.context_keywords.iter().all(|k| !e.candidate_mask.contains(k)));
        }
    }

    #[test]
    fn pool_deduplicates() {
        let (g, p) = fixture();
        let (convs, _) = ingest(&[conv(&["music", "band", "music"])], Split::Train, &p, &g);
        let pool = build_response_pool(&convs);
        assert_eq!(pool.len(), 2);
        let id = pool.id_of(&convs[0].utterances[2]).unwrap();
        assert_eq!(pool.get(id), &convs[0].utterances[0]);
    }

    fn many_convs() -> (Vec<Conversation>, ResponsePool) {
        let (g, p) = fixture();
        let raws: Vec<RawConversation> = (0..12)
            .map(|i| conv(&[&format!("music {i}"), &format!("band {i}"), &format!("jazz {i}")]))
            .collect();
        let (convs, _) = ingest(&raws, Split::Test, &p, &g);
        let pool = build_response_pool(&convs);
        (convs, pool)
    }

    #[test]
    fn retrieval_examples_have_twenty_distinct_candidates() {
        let (convs, pool) = many_convs();
        let ex = make_retrieval_examples(&convs, &pool, 7).unwrap();
        assert_eq!(ex.len(), 24);
        for e in &ex {
            let c = e.candidates();
            assert_eq!(c.len(), 20);
            let set: HashSet<_> = c.iter().collect();
            assert_eq!(set.len(), 20);
            assert!(!e.negatives.contains(&e.gold));
        }
        assert_eq!(ex, make_retrieval_examples(&convs, &pool, 7).unwrap());
        assert_ne!(ex, make_retrieval_examples(&convs, &pool, 8).unwrap());
    }

    #[test]
    fn tiny_corpus_is_config_error() {
        let (convs, pool) = many_convs();
        assert!(matches!(
            make_retrieval_examples(&convs[..3], &pool, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mentions_is_exact_and_contiguous() {
        let (g, p) = fixture();
        let u = p.utterance("My favorite is country music", &g);
        assert!(u.mentions("music"));
        assert!(!p.utterance("I love musicals", &g).mentions("music"));
        let u = p.utterance("listening to pearl jam today", &g);
        assert!(u.mentions("pearl_jam"));
        assert!(!p.utterance("pearl and jam", &g).mentions("pearl_jam"));
    }
}
