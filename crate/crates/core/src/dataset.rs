//! End-to-end preprocessing: vocabularies, graph filtering, grounding of
//! every split, and the example files both models train on.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ckg::{self, CkgGraph};
use crate::corpus::{
    build_response_pool, ingest, make_prediction_examples, make_retrieval_examples, read_jsonl, tokenize_truncated,
    write_jsonl, Conversation, IngestStats, PredictionExample, PredictionStats, RawConversation, ResponsePool,
    RetrievalExample, Split, TextPipeline, Utterance,
};
use crate::error::{Error, Result};
use crate::grounding::Grounding;
use crate::text::{self, KeywordVocab, PosLexicon, Stopwords, TfIdfStats, Vocab};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const KEYWORDS_FILE: &str = "keywords.tsv";
pub const TFIDF_FILE: &str = "tfidf.json";
pub const GRAPH_FILE: &str = "graph.ckg";
pub const POOL_FILE: &str = "pool.jsonl";
pub const POS_FILE: &str = "pos_lexicon.tsv";
pub const STOPWORDS_FILE: &str = "stopwords.txt";
pub const REPORT_FILE: &str = "prepare_report.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerSplit<T> {
    pub train: T,
    pub valid: T,
    pub test: T,
}

impl<T> PerSplit<T> {
    pub fn get(&self, split: Split) -> &T {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn try_map<U>(&self, mut f: impl FnMut(Split, &T) -> Result<U>) -> Result<PerSplit<U>> {
        Ok(PerSplit {
            train: f(Split::Train, &self.train)?,
            valid: f(Split::Valid, &self.valid)?,
            test: f(Split::Test, &self.test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub vocab_cap: usize,
    pub keyword_min_df: u32,
    pub keyword_cap: usize,
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            vocab_cap: text::DEFAULT_VOCAB_CAP,
            keyword_min_df: text::DEFAULT_KEYWORD_MIN_DF,
            keyword_cap: text::DEFAULT_KEYWORD_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub config: Option<PrepareConfig>,
    pub vocab_size: usize,
    pub keywords: usize,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub graph_relations: usize,
    pub grounded_keywords: usize,
    pub pool_size: usize,
    pub ingest: PerSplit<IngestStats>,
    pub prediction: PerSplit<PredictionStats>,
    pub retrieval: PerSplit<usize>,
}

pub struct Dataset {
    pub grounding: Grounding,
    pub pos: PosLexicon,
    pub stopwords: Stopwords,
    pub stats: TfIdfStats,
    pub keyword_cap: usize,
    pub conversations: PerSplit<Vec<Conversation>>,
    pub pool: ResponsePool,
    pub prediction: PerSplit<Vec<PredictionExample>>,
    pub retrieval: PerSplit<Vec<RetrievalExample>>,
    pub report: PrepareReport,
}

fn conversations_file(split: Split) -> String {
    format!("conversations.{}", split.file_name())
}

fn prediction_file(split: Split) -> String {
    format!("prediction.{}", split.file_name())
}

fn retrieval_file(split: Split) -> String {
    format!("retrieval.{}", split.file_name())
}

fn read_per_split<T: serde::de::DeserializeOwned>(dir: &Path, name: fn(Split) -> String) -> Result<PerSplit<Vec<T>>> {
    Ok(PerSplit {
        train: read_jsonl(&dir.join(name(Split::Train)))?,
        valid: read_jsonl(&dir.join(name(Split::Valid)))?,
        test: read_jsonl(&dir.join(name(Split::Test)))?,
    })
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|_| Error::MissingArtifact(path.into()))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

impl Dataset {
    /// Vocabulary and TF-IDF statistics come from the training split only.
    pub fn prepare(
        raw: &PerSplit<Vec<RawConversation>>,
        triplets: impl BufRead,
        triplet_source: &str,
        pos: PosLexicon,
        stopwords: Stopwords,
        config: &PrepareConfig,
    ) -> Result<Self> {
        let train_tokens: Vec<Vec<String>> = raw
            .train
            .iter()
            .flat_map(|c| c.utterances.iter().map(|u| tokenize_truncated(u)))
            .collect();
        let (vocab, stats) = text::build_vocab(&train_tokens, config.vocab_cap)?;
        let keywords = KeywordVocab::build(&vocab, &stats, &pos, &stopwords, config.keyword_min_df)?;
        let graph = ckg::load_graph(triplet_source, triplets, &vocab, &keywords)?;
        let grounding = Grounding::new(vocab, keywords, graph);
        Self::from_grounding(grounding, raw, pos, stopwords, stats, config)
    }

    fn from_grounding(
        grounding: Grounding,
        raw: &PerSplit<Vec<RawConversation>>,
        pos: PosLexicon,
        stopwords: Stopwords,
        stats: TfIdfStats,
        config: &PrepareConfig,
    ) -> Result<Self> {
        let mut pipeline = TextPipeline::new(Box::new(pos.clone()), stopwords.clone(), stats.clone());
        pipeline.keyword_cap = config.keyword_cap;
        let mut report = PrepareReport {
            config: Some(config.clone()),
            ..PrepareReport::default()
        };
        let mut ingest_stats = PerSplit::<IngestStats>::default();
        let conversations = raw.try_map(|split, recs| {
            let (convs, st) = ingest(recs, split, &pipeline, &grounding);
            match split {
                Split::Train => ingest_stats.train = st,
                Split::Valid => ingest_stats.valid = st,
                Split::Test => ingest_stats.test = st,
            }
            Ok(convs)
        })?;
        let pool = build_response_pool(
            conversations
                .train
                .iter()
                .chain(&conversations.valid)
                .chain(&conversations.test),
        );
        let mut pred_stats = PerSplit::<PredictionStats>::default();
        let prediction = conversations.try_map(|split, convs| {
            let (ex, st) = make_prediction_examples(convs, &grounding);
            match split {
                Split::Train => pred_stats.train = st,
                Split::Valid => pred_stats.valid = st,
                Split::Test => pred_stats.test = st,
            }
            Ok(ex)
        })?;
        let retrieval = conversations.try_map(|split, convs| {
            if convs.is_empty() {
                return Ok(Vec::new());
            }
            make_retrieval_examples(convs, &pool, config.seed.wrapping_add(split as u64))
        })?;

        report.vocab_size = grounding.vocab.len();
        report.keywords = grounding.keywords.len();
        report.graph_nodes = grounding.graph.node_count();
        report.graph_edges = grounding.graph.edge_count();
        report.graph_relations = grounding.graph.relation_count();
        report.grounded_keywords = grounding.keywords.ids().filter(|k| grounding.keyword_node(*k).is_some()).count();
        report.pool_size = pool.len();
        report.ingest = ingest_stats;
        report.prediction = pred_stats;
        report.retrieval = PerSplit {
            train: retrieval.train.len(),
            valid: retrieval.valid.len(),
            test: retrieval.test.len(),
        };
        Ok(Self {
            grounding,
            pos,
            stopwords,
            stats,
            keyword_cap: config.keyword_cap,
            conversations,
            pool,
            prediction,
            retrieval,
            report,
        })
    }

    /// Grounds free text the same way the corpus was grounded.
    pub fn pipeline(&self) -> TextPipeline {
        let mut p = TextPipeline::new(Box::new(self.pos.clone()), self.stopwords.clone(), self.stats.clone());
        p.keyword_cap = self.keyword_cap;
        p
    }

    pub fn utterance(&self, text: &str) -> Utterance {
        self.pipeline().utterance(text, &self.grounding)
    }

    /// Opening utterances of a split, in conversation order.
    pub fn openers(&self, split: Split) -> Vec<Utterance> {
        self.conversations
            .get(split)
            .iter()
            .filter_map(|c| c.utterances.first().cloned())
            .collect()
    }

    /// Paths written by [`Dataset::save`], relative to the data directory.
    pub fn artifact_names() -> Vec<String> {
        let mut out: Vec<String> = [
            VOCAB_FILE,
            KEYWORDS_FILE,
            TFIDF_FILE,
            GRAPH_FILE,
            POOL_FILE,
            POS_FILE,
            STOPWORDS_FILE,
            REPORT_FILE,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for split in Split::ALL {
            out.push(conversations_file(split));
            out.push(prediction_file(split));
            out.push(retrieval_file(split));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let g = &self.grounding;
        let mut w = create(&dir.join(VOCAB_FILE))?;
        g.vocab.write_to(&mut w)?;
        w.flush()?;
        let mut w = create(&dir.join(KEYWORDS_FILE))?;
        g.keywords.write_to(&mut w)?;
        w.flush()?;
        let mut w = create(&dir.join(POS_FILE))?;
        self.pos.write_to(&mut w)?;
        w.flush()?;
        let mut w = create(&dir.join(STOPWORDS_FILE))?;
        self.stopwords.write_to(&mut w)?;
        w.flush()?;
        std::fs::write(dir.join(TFIDF_FILE), serde_json::to_vec(&self.stats)?)?;
        g.graph.save_snapshot(&dir.join(GRAPH_FILE), &g.vocab, &g.keywords)?;
        self.pool.save(&dir.join(POOL_FILE))?;
        for split in Split::ALL {
            write_jsonl(&dir.join(conversations_file(split)), self.conversations.get(split))?;
            write_jsonl(&dir.join(prediction_file(split)), self.prediction.get(split))?;
            write_jsonl(&dir.join(retrieval_file(split)), self.retrieval.get(split))?;
        }
        std::fs::write(dir.join(REPORT_FILE), serde_json::to_vec_pretty(&self.report)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let keywords = KeywordVocab::load(&dir.join(KEYWORDS_FILE), &vocab)?;
        let graph = CkgGraph::load_snapshot(&dir.join(GRAPH_FILE), &vocab, &keywords)?;
        let pos = PosLexicon::load(&dir.join(POS_FILE))?;
        let stopwords = Stopwords::load(&dir.join(STOPWORDS_FILE))?;
        let stats: TfIdfStats = serde_json::from_reader(open(&dir.join(TFIDF_FILE))?)?;
        let report: PrepareReport = serde_json::from_reader(open(&dir.join(REPORT_FILE))?)?;
        let pool = ResponsePool::load(&dir.join(POOL_FILE))?;
        let conversations = read_per_split(dir, conversations_file)?;
        let prediction = read_per_split(dir, prediction_file)?;
        let retrieval = read_per_split(dir, retrieval_file)?;
        let keyword_cap = report.config.as_ref().map_or(text::DEFAULT_KEYWORD_CAP, |c| c.keyword_cap);
        Ok(Self {
            grounding: Grounding::new(vocab, keywords, graph),
            pos,
            stopwords,
            stats,
            keyword_cap,
            conversations,
            pool,
            prediction,
            retrieval,
            report,
        })
    }
}
