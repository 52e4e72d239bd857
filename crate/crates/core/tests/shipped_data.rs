//! The corpora under `data/synthetic` are exactly what the generators emit.
//! Set `KEYGUIDE_BLESS=1` to rewrite them.

use std::path::PathBuf;

use keyguide::synthetic::{fixture_corpus, planted_corpus, PlantedShape, SyntheticCorpus};

const FILES: [&str; 5] = ["train.jsonl", "valid.jsonl", "test.jsonl", "triplets.tsv", "pos_lexicon.tsv"];

fn check(name: &str, corpus: &SyntheticCorpus) {
    let shipped = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/synthetic").join(name);
    if std::env::var_os("KEYGUIDE_BLESS").is_some() {
        corpus.write_dir(&shipped).unwrap();
    }
    let fresh = tempfile::tempdir().unwrap();
    corpus.write_dir(fresh.path()).unwrap();
    for f in FILES {
        let want = std::fs::read(fresh.path().join(f)).unwrap();
        let got = std::fs::read(shipped.join(f)).unwrap_or_else(|e| panic!("{name}/{f}: {e}"));
        assert!(want == got, "{name}/{f} differs from the generator output");
    }
}

#[test]
fn planted_corpus_matches_generator() {
    let corpus = planted_corpus(&PlantedShape::shipped(), 0);
    let convs = corpus.raw.train.len() + corpus.raw.valid.len() + corpus.raw.test.len();
    assert_eq!(convs, 50);
    let ds = corpus.prepare().unwrap();
    assert_eq!(ds.grounding.graph.node_count(), 30);
    check("planted", &corpus);
}

#[test]
fn fixture_corpus_matches_generator() {
    let corpus = fixture_corpus(0);
    let convs = corpus.raw.train.len() + corpus.raw.valid.len() + corpus.raw.test.len();
    assert_eq!(convs, 20);
    check("fixture", &corpus);
}
