//! Small generated worlds used by the test suites, the benches and the
//! shipped example corpus.
//!
//! * [`planted_corpus`]: keywords linked in a complete graph plus "hint"
//!   concepts, each hint attached to one keyword. The keyword of every
//!   utterance is the one attached to the hint of the utterance before it, so
//!   the next keyword is recoverable from the graph. Valid and test
//!   conversations use hints that never occur in a training context.
//! * [`chain_corpus`]: keywords on a path graph, for walking to a target.
//! * [`fixture_corpus`]: noisy conversations with long utterances, many
//!   keywords, and triplets that the admission rules must reject.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ckg::CkgTriplet;
use crate::corpus::RawConversation;
use crate::dataset::{Dataset, PerSplit, PrepareConfig};
use crate::error::Result;
use crate::text::{PosLexicon, PosTag, Stopwords};

pub const PLANTED_KEYWORDS: [&str; 10] = [
    "apple", "river", "guitar", "garden", "pizza", "soccer", "winter", "coffee", "movie", "ocean",
];

pub const PLANTED_HINTS: [&str; 26] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett", "kilo", "lima",
    "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu",
];

const TEMPLATES: [&str; 6] = [
    "i was thinking about {k} and {h} today",
    "my friend said {h} reminds her of {k}",
    "{k} is nice , {h} is fun",
    "do you know {h} ? i love {k}",
    "so {k} and {h} are on my mind",
    "we could talk {k} , maybe {h} too",
];

/// Conversation-level speaker tags shared by all splits.
pub const PERSONAS: [&str; 5] = ["ann", "bob", "cyd", "dee", "eve"];

pub const KEYWORD_RELATION: &str = "RelatedTo";
pub const HINT_RELATION: &str = "SymbolOf";

/// Raw inputs of a generated world, ready for [`Dataset::prepare`].
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub raw: PerSplit<Vec<RawConversation>>,
    pub triplets: Vec<CkgTriplet>,
    pub pos: PosLexicon,
    pub config: PrepareConfig,
}

impl SyntheticCorpus {
    pub fn triplets_tsv(&self) -> String {
        let mut out = String::from("# head\trelation\ttail\tweight\n");
        for t in &self.triplets {
            writeln!(out, "{}\t{}\t{}\t{:?}", t.head, t.relation, t.tail, t.weight).expect("string write");
        }
        out
    }

    pub fn pos_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.pos.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("lexicon is utf-8")
    }

    pub fn split_jsonl(convs: &[RawConversation]) -> String {
        convs
            .iter()
            .map(|c| serde_json::to_string(c).expect("serializable") + "\n")
            .collect()
    }

    pub fn prepare(&self) -> Result<Dataset> {
        let tsv = self.triplets_tsv();
        Dataset::prepare(
            &self.raw,
            tsv.as_bytes(),
            "synthetic triplets",
            self.pos.clone(),
            Stopwords::bundled(),
            &self.config,
        )
    }

    /// `train.jsonl`, `valid.jsonl`, `test.jsonl`, `triplets.tsv` and
    /// `pos_lexicon.tsv`.
    pub fn write_dir(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("train.jsonl"), Self::split_jsonl(&self.raw.train))?;
        std::fs::write(dir.join("valid.jsonl"), Self::split_jsonl(&self.raw.valid))?;
        std::fs::write(dir.join("test.jsonl"), Self::split_jsonl(&self.raw.test))?;
        std::fs::write(dir.join("triplets.tsv"), self.triplets_tsv())?;
        std::fs::write(dir.join("pos_lexicon.tsv"), self.pos_tsv())?;
        Ok(())
    }
}

fn lexicon(nouns: &[&str], others: impl IntoIterator<Item = String>) -> PosLexicon {
    let mut pos = PosLexicon::default();
    for w in others {
        pos.insert(w, PosTag::Other);
    }
    for n in nouns {
        pos.insert(*n, PosTag::Noun);
    }
    pos
}

fn template_words() -> impl Iterator<Item = String> {
    TEMPLATES
        .iter()
        .flat_map(|t| t.split_whitespace())
        .filter(|w| !w.starts_with('{'))
        .map(String::from)
}

fn render(template: &str, k: &str, h: &str) -> String {
    template.replace("{k}", k).replace("{h}", h)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedShape {
    pub keywords: usize,
    pub hints: usize,
    /// The last `held_out` hints appear only in valid and test contexts.
    pub held_out: usize,
    pub conversations: (usize, usize, usize),
    pub min_len: usize,
    pub max_len: usize,
}

impl PlantedShape {
    /// 50 conversations over a 30-node graph.
    pub fn shipped() -> Self {
        Self {
            keywords: 10,
            hints: 20,
            held_out: 10,
            conversations: (30, 5, 15),
            min_len: 6,
            max_len: 8,
        }
    }

    /// Eight nodes, no held-out hints.
    pub fn toy() -> Self {
        Self {
            keywords: 4,
            hints: 4,
            held_out: 0,
            conversations: (12, 8, 8),
            min_len: 3,
            max_len: 4,
        }
    }

    /// Hints seen in training contexts.
    pub fn seen(&self) -> usize {
        self.hints - self.held_out
    }
}

/// Keyword attached to hint `h`.
pub fn hint_answer(shape: &PlantedShape, h: usize) -> usize {
    h % shape.keywords
}

pub fn planted_corpus(shape: &PlantedShape, seed: u64) -> SyntheticCorpus {
    assert!(shape.keywords >= 3 && shape.keywords <= PLANTED_KEYWORDS.len());
    assert!(shape.hints <= PLANTED_HINTS.len());
    assert!(shape.seen() >= shape.keywords && (shape.held_out == 0 || shape.held_out >= shape.keywords));
    assert!(shape.max_len <= shape.keywords);
    let kws = &PLANTED_KEYWORDS[..shape.keywords];
    let hints = &PLANTED_HINTS[..shape.hints];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut triplets = Vec::new();
    for i in 0..kws.len() {
        for j in i + 1..kws.len() {
            triplets.push(CkgTriplet::new(kws[i], KEYWORD_RELATION, kws[j], 1.0));
        }
    }
    for (h, name) in hints.iter().enumerate() {
        triplets.push(CkgTriplet::new(name, HINT_RELATION, kws[hint_answer(shape, h)], 2.0));
    }

    let hint_for = |rng: &mut ChaCha8Rng, answer: usize, held_out: bool| -> usize {
        let range = if held_out && shape.held_out > 0 { shape.seen()..shape.hints } else { 0..shape.seen() };
        let options: Vec<usize> = range.filter(|h| hint_answer(shape, *h) == answer).collect();
        *options.choose(rng).expect("every keyword has a hint")
    };
    let conversation = |rng: &mut ChaCha8Rng, held_out: bool, index: usize, train: bool| {
        let len = rng.random_range(shape.min_len..=shape.max_len);
        let persona = PERSONAS.choose(rng).expect("personas");
        let mut visited: Vec<usize> = Vec::with_capacity(len);
        let mut cur = rng.random_range(0..kws.len());
        let mut utts = Vec::with_capacity(len);
        for t in 0..len {
            let h = if t + 1 == len {
                if train && shape.held_out > 0 {
                    // held-out hint words still need to reach the vocabulary;
                    // the last utterance never serves as a prediction context
                    shape.seen() + index % shape.held_out
                } else {
                    let a = rng.random_range(0..kws.len());
                    hint_for(rng, a, held_out)
                }
            } else {
                visited.push(cur);
                let options: Vec<usize> = (0..kws.len()).filter(|b| !visited.contains(b)).collect();
                let a = *options.choose(rng).expect("conversation shorter than the keyword set");
                hint_for(rng, a, held_out)
            };
            let template = TEMPLATES.choose(rng).expect("templates");
            utts.push(format!("{persona} : {}", render(template, kws[cur], hints[h])));
            cur = hint_answer(shape, h);
        }
        RawConversation { utterances: utts }
    };
    let (n_train, n_valid, n_test) = shape.conversations;
    let train = (0..n_train).map(|i| conversation(&mut rng, false, i, true)).collect();
    let valid = (0..n_valid).map(|i| conversation(&mut rng, true, i, false)).collect();
    let test = (0..n_test).map(|i| conversation(&mut rng, true, i, false)).collect();

    SyntheticCorpus {
        raw: PerSplit { train, valid, test },
        triplets,
        pos: lexicon(
            kws,
            template_words()
                .chain(hints.iter().map(|h| h.to_string()))
                .chain(PERSONAS.iter().map(|p| p.to_string())),
        ),
        config: PrepareConfig {
            keyword_min_df: 1,
            seed,
            ..PrepareConfig::default()
        },
    }
}

pub const CHAIN_WORDS: [&str; 7] = ["apple", "river", "guitar", "garden", "pizza", "soccer", "winter"];

const CHAIN_TEMPLATES: [&str; 6] = [
    "we talked about {k} yesterday",
    "{k} is on my list",
    "tell me more about {k}",
    "i keep thinking of {k}",
    "have you seen {k} lately",
    "my friend loves {k}",
];
const CHAIN_SUFFIXES: [&str; 4] = ["", " today", " again", " too"];
const CHAIN_CONVERSATIONS: usize = 10;

/// Path graph `w0 - w1 - ... - w_depth` with weights in `[1, 10]`. Each word
/// gets one utterance per template and suffix; every conversation of every
/// split opens on `w0`.
pub fn chain_corpus(depth: usize, seed: u64) -> SyntheticCorpus {
    assert!((1..CHAIN_WORDS.len()).contains(&depth));
    let words = &CHAIN_WORDS[..=depth];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triplets = words
        .windows(2)
        .map(|w| CkgTriplet::new(w[0], KEYWORD_RELATION, w[1], rng.random_range(1.0..=10.0)))
        .collect();
    let mut lines: Vec<String> = Vec::new();
    for t in CHAIN_TEMPLATES {
        for w in words {
            for sfx in CHAIN_SUFFIXES {
                lines.push(format!("{}{sfx}", t.replace("{k}", w)));
            }
        }
    }
    let opener = |t: &str| t.replace("{k}", words[0]);
    let mut conv = |i: usize| {
        let mut utts = vec![opener(CHAIN_TEMPLATES[i % CHAIN_TEMPLATES.len()])];
        let mut rest = lines.clone();
        rest.shuffle(&mut rng);
        utts.extend(rest.into_iter().take(4));
        RawConversation { utterances: utts }
    };
    let train = (0..CHAIN_CONVERSATIONS).map(&mut conv).collect();
    let valid = (0..CHAIN_CONVERSATIONS).map(&mut conv).collect();
    let test = (0..CHAIN_CONVERSATIONS).map(&mut conv).collect();
    let others = CHAIN_TEMPLATES
        .iter()
        .chain(&CHAIN_SUFFIXES)
        .flat_map(|t| t.split_whitespace())
        .filter(|w| !w.starts_with('{'))
        .map(String::from);
    SyntheticCorpus {
        raw: PerSplit { train, valid, test },
        triplets,
        pos: lexicon(words, others),
        config: PrepareConfig {
            keyword_min_df: 1,
            seed,
            ..PrepareConfig::default()
        },
    }
}

const FIXTURE_NOUNS: [&str; 24] = [
    "apple", "river", "guitar", "garden", "pizza", "soccer", "winter", "coffee", "movie", "ocean", "music", "dog",
    "cat", "book", "school", "beach", "summer", "pasta", "tennis", "piano", "mountain", "city", "train", "cake",
];
const FIXTURE_VERBS: [&str; 4] = ["play", "read", "cook", "swim"];
const FIXTURE_FILLER: [&str; 14] = [
    "i", "you", "really", "like", "the", "and", "a", "so", "we", "my", "very", "to", "lot", "also",
];

/// Twenty conversations: nineteen of 7 to 13 utterances and one single
/// utterance that ingestion drops. Some utterances run past the token cap and
/// mention more keywords than the keyword cap.
pub fn fixture_corpus(seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let content: Vec<&str> = FIXTURE_NOUNS.iter().chain(&FIXTURE_VERBS).copied().collect();
    let utterance = |rng: &mut ChaCha8Rng| {
        let long = rng.random_bool(0.2);
        let n = if long { rng.random_range(31..45) } else { rng.random_range(3..12) };
        let mut words: Vec<String> = Vec::with_capacity(n);
        for _ in 0..n {
            if rng.random_bool(if long { 0.7 } else { 0.4 }) {
                words.push(content.choose(rng).expect("content").to_string());
            } else {
                words.push(FIXTURE_FILLER.choose(rng).expect("filler").to_string());
            }
        }
        if rng.random_bool(0.2) {
            words.push("ice cream".into());
        }
        let mut s = words.join(" ");
        s.push_str(if rng.random_bool(0.5) { "." } else { " !" });
        s
    };
    let conv = |rng: &mut ChaCha8Rng| RawConversation {
        utterances: (0..rng.random_range(7..=13)).map(|_| utterance(rng)).collect(),
    };
    let train: Vec<RawConversation> = (0..11).map(|_| conv(&mut rng)).collect();
    let valid: Vec<RawConversation> = (0..4).map(|_| conv(&mut rng)).collect();
    let mut test: Vec<RawConversation> = (0..4).map(|_| conv(&mut rng)).collect();
    // dropped at ingestion: fewer than two utterances
    test.push(RawConversation {
        utterances: vec!["just one line about music".into()],
    });

    let mut triplets = Vec::new();
    for _ in 0..60 {
        let a = content.choose(&mut rng).expect("content");
        let b = content.choose(&mut rng).expect("content");
        triplets.push(CkgTriplet::new(a, KEYWORD_RELATION, b, rng.random_range(0.5..6.0)));
    }
    triplets.push(CkgTriplet::new("ice_cream", "IsA", "cake", 2.0));
    triplets.push(CkgTriplet::new("music", KEYWORD_RELATION, "music", 3.0));
    triplets.push(CkgTriplet::new("unicorn_horn", "PartOf", "music", 3.0));
    triplets.push(CkgTriplet::new("the", "RelatedTo", "a", 3.0));
    SyntheticCorpus {
        raw: PerSplit { train, valid, test },
        triplets,
        pos: lexicon(&FIXTURE_NOUNS, FIXTURE_FILLER.iter().map(|s| s.to_string()).chain(["ice".into(), "cream".into()])),
        config: PrepareConfig {
            keyword_min_df: 2,
            seed,
            ..PrepareConfig::default()
        },
    }
    .with_verbs(&FIXTURE_VERBS)
}

impl SyntheticCorpus {
    fn with_verbs(mut self, verbs: &[&str]) -> Self {
        for v in verbs {
            self.pos.insert(*v, PosTag::Verb);
        }
        self
    }
}
