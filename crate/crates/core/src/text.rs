//! Tokenization, vocabularies and TF-IDF + POS keyword extraction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{KeywordId, TokenId};

pub const PAD: TokenId = TokenId(0);
pub const UNK: TokenId = TokenId(1);
pub const BOS: TokenId = TokenId(2);
pub const EOS: TokenId = TokenId(3);

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

pub const DEFAULT_VOCAB_CAP: usize = 20_000;
pub const DEFAULT_KEYWORD_CAP: usize = 10;
pub const DEFAULT_KEYWORD_MIN_DF: u32 = 10;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const BUNDLED_POS_LEXICON: &str = include_str!("../data/pos_lexicon.tsv");

/// Lowercases and splits on whitespace, then splits punctuation into separate
/// tokens. Clitics stay attached to their apostrophe (`i'm` -> `i`, `'m`;
/// `don't` -> `do`, `n't`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.to_lowercase().chars().collect();
        let mut word = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() {
                word.push(c);
                i += 1;
                continue;
            }
            let next_alpha = chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
            if (c == '\'' || c == '\u{2019}') && !word.is_empty() && next_alpha {
                let rest: String = chars[i + 1..]
                    .iter()
                    .take_while(|c| c.is_alphanumeric())
                    .collect();
                if rest == "t" && word.ends_with('n') && word.len() > 1 {
                    word.pop();
                    out.push(std::mem::take(&mut word));
                    out.push("n't".to_string());
                } else {
                    out.push(std::mem::take(&mut word));
                    out.push(format!("'{rest}"));
                }
                i += 1 + rest.chars().count();
                continue;
            }
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_string());
            i += 1;
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Word vocabulary with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn from_tokens<I, S>(content: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(content.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), TokenId::from_index(i)).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= SPECIALS.len()
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(UNK)
    }

    pub fn decode(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: TokenId) -> bool {
        id.index() < SPECIALS.len()
    }

    pub fn content_hash(&self) -> String {
        crate::hash::sha256_hex(self.tokens.join("\n").as_bytes())
    }

    /// One token per line, in id order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let lines = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        if lines.len() < SPECIALS.len() || lines[..SPECIALS.len()] != SPECIALS {
            return Err(Error::parse("vocab", 1, "missing reserved tokens"));
        }
        Self::from_tokens(lines.into_iter().skip(SPECIALS.len()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.into()))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Document frequencies over utterances.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfIdfStats {
    pub doc_freq: BTreeMap<String, u32>,
    pub total_docs: u32,
}

impl TfIdfStats {
    pub fn df(&self, token: &str) -> u32 {
        self.doc_freq.get(token).copied().unwrap_or(0)
    }

    /// `ln(T_docs / df)`; tokens never seen are treated as df = 1.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df(token).max(1) as f64;
        (self.total_docs.max(1) as f64 / df).ln().max(0.0)
    }
}

/// Builds the top-`cap` vocabulary (ties broken lexicographically) and the
/// per-utterance document frequencies.
pub fn build_vocab<I, U>(corpus: I, cap: usize) -> Result<(Vocab, TfIdfStats)>
where
    I: IntoIterator<Item = U>,
    U: AsRef<[String]>,
{
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut stats = TfIdfStats::default();
    for utt in corpus {
        let utt = utt.as_ref();
        stats.total_docs += 1;
        let mut seen = HashSet::new();
        for t in utt {
            *freq.entry(t.clone()).or_default() += 1;
            if seen.insert(t.as_str()) {
                *stats.doc_freq.entry(t.clone()).or_default() += 1;
            }
        }
    }
    if freq.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut ranked: Vec<(String, u64)> = freq
        .into_iter()
        .filter(|(t, _)| !SPECIALS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cap);
    let vocab = Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))?;
    Ok((vocab, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosTag {
    Noun,
    Verb,
    Adjective,
    Other,
}

impl PosTag {
    pub fn is_content(self) -> bool {
        !matches!(self, PosTag::Other)
    }

    fn parse(tag: &str) -> Self {
        let t = tag.trim().to_ascii_lowercase();
        match t.as_str() {
            "noun" | "n" => PosTag::Noun,
            "verb" | "v" => PosTag::Verb,
            "adj" | "adjective" | "a" => PosTag::Adjective,
            _ if t.starts_with("nn") => PosTag::Noun,
            _ if t.starts_with("vb") => PosTag::Verb,
            _ if t.starts_with("jj") => PosTag::Adjective,
            _ => PosTag::Other,
        }
    }
}

/// Coarse part-of-speech oracle used by keyword extraction.
pub trait PosTagger: Send + Sync {
    fn tag(&self, token: &str) -> PosTag;
}

/// Token -> tag lexicon; unknown tokens are tagged [`PosTag::Other`].
#[derive(Debug, Clone, Default)]
pub struct PosLexicon {
    tags: HashMap<String, PosTag>,
}

impl PosLexicon {
    pub fn parse(source_name: &str, text: &str) -> Result<Self> {
        let mut tags = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(tok), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(source_name, i + 1, "expected `token<TAB>tag`"));
            };
            tags.insert(tok.to_lowercase(), PosTag::parse(tag));
        }
        Ok(Self { tags })
    }

    pub fn bundled() -> Self {
        Self::parse("bundled pos lexicon", BUNDLED_POS_LEXICON).expect("bundled lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.into()))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn insert(&mut self, token: impl Into<String>, tag: PosTag) {
        self.tags.insert(token.into(), tag);
    }

    /// `token<TAB>tag` lines sorted by token.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let sorted: BTreeMap<&String, &PosTag> = self.tags.iter().collect();
        for (tok, tag) in sorted {
            let name = match tag {
                PosTag::Noun => "noun",
                PosTag::Verb => "verb",
                PosTag::Adjective => "adj",
                PosTag::Other => "other",
            };
            writeln!(w, "{tok}\t{name}")?;
        }
        Ok(())
    }
}

impl PosTagger for PosLexicon {
    fn tag(&self, token: &str) -> PosTag {
        self.tags.get(token).copied().unwrap_or(PosTag::Other)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect(),
        )
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.into()))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut sorted: Vec<&String> = self.0.iter().collect();
        sorted.sort();
        for t in sorted {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }
}

/// Keyword subset of the word vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordVocab {
    tokens: Vec<TokenId>,
    labels: Vec<String>,
    doc_freq: Vec<u32>,
    by_token: HashMap<TokenId, KeywordId>,
    by_label: HashMap<String, KeywordId>,
}

impl KeywordVocab {
    /// Content words of `vocab` (POS noun/verb/adjective, not a stopword) whose
    /// document frequency is at least `min_df`.
    pub fn build(
        vocab: &Vocab,
        stats: &TfIdfStats,
        pos: &dyn PosTagger,
        stopwords: &Stopwords,
        min_df: u32,
    ) -> Result<Self> {
        let entries = vocab
            .tokens()
            .iter()
            .enumerate()
            .skip(SPECIALS.len())
            .filter(|(_, t)| {
                is_keyword_candidate(t, pos, stopwords) && stats.df(t) >= min_df
            })
            .map(|(i, t)| (TokenId::from_index(i), t.clone(), stats.df(t)));
        let kv = Self::from_entries(entries)?;
        if kv.is_empty() {
            return Err(Error::Config("keyword vocabulary is empty".into()));
        }
        Ok(kv)
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (TokenId, String, u32)>) -> Result<Self> {
        let mut kv = Self {
            tokens: Vec::new(),
            labels: Vec::new(),
            doc_freq: Vec::new(),
            by_token: HashMap::new(),
            by_label: HashMap::new(),
        };
        for (tok, label, df) in entries {
            let id = KeywordId::from_index(kv.tokens.len());
            if kv.by_token.insert(tok, id).is_some() {
                return Err(Error::Config(format!("duplicate keyword `{label}`")));
            }
            kv.by_label.insert(label.clone(), id);
            kv.tokens.push(tok);
            kv.labels.push(label);
            kv.doc_freq.push(df);
        }
        Ok(kv)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = KeywordId> + '_ {
        (0..self.len()).map(KeywordId::from_index)
    }

    pub fn by_token(&self, tok: TokenId) -> Option<KeywordId> {
        self.by_token.get(&tok).copied()
    }

    pub fn by_label(&self, label: &str) -> Option<KeywordId> {
        self.by_label.get(label).copied()
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.by_label.contains_key(label)
    }

    pub fn label(&self, id: KeywordId) -> &str {
        &self.labels[id.index()]
    }

    pub fn token(&self, id: KeywordId) -> TokenId {
        self.tokens[id.index()]
    }

    pub fn doc_freq(&self, id: KeywordId) -> u32 {
        self.doc_freq[id.index()]
    }

    pub fn content_hash(&self) -> String {
        let body: Vec<String> = self
            .labels
            .iter()
            .zip(&self.doc_freq)
            .map(|(l, d)| format!("{l}\t{d}"))
            .collect();
        crate::hash::sha256_hex(body.join("\n").as_bytes())
    }

    /// `token<TAB>df` per line, in keyword id order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for (l, d) in self.labels.iter().zip(&self.doc_freq) {
            writeln!(w, "{l}\t{d}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead, vocab: &Vocab) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let (label, df) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse("keywords", i + 1, "expected `token<TAB>df`"))?;
            let df: u32 = df
                .parse()
                .map_err(|_| Error::parse("keywords", i + 1, "bad document frequency"))?;
            let tok = vocab
                .get(label)
                .ok_or_else(|| Error::parse("keywords", i + 1, format!("`{label}` not in vocabulary")))?;
            entries.push((tok, label.to_string(), df));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.into()))?;
        Self::read_from(std::io::BufReader::new(f), vocab)
    }
}

fn is_keyword_candidate(token: &str, pos: &dyn PosTagger, stopwords: &Stopwords) -> bool {
    pos.tag(token).is_content() && !stopwords.contains(token)
}

/// Scores keyword candidates by `tf * ln(T_docs / df)` and keeps the top `cap`;
/// ties keep utterance order, repeated tokens count once.
pub fn extract_keywords(
    utterance: &[String],
    pos: &dyn PosTagger,
    stopwords: &Stopwords,
    stats: &TfIdfStats,
    kv: &KeywordVocab,
    cap: usize,
) -> Vec<KeywordId> {
    let mut order: Vec<(KeywordId, &str)> = Vec::new();
    let mut tf: HashMap<KeywordId, u32> = HashMap::new();
    for tok in utterance {
        let Some(id) = kv.by_label(tok) else { continue };
        if !is_keyword_candidate(tok, pos, stopwords) {
            continue;
        }
        let count = tf.entry(id).or_default();
        if *count == 0 {
            order.push((id, tok));
        }
        *count += 1;
    }
    let mut scored: Vec<(KeywordId, f64)> = order
        .into_iter()
        .map(|(id, tok)| (id, tf[&id] as f64 * stats.idf(tok)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(cap);
    scored.into_iter().map(|(id, _)| id).collect()
}
