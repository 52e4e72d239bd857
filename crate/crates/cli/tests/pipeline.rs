use std::path::Path;
use std::process::{Command, Output};

use keyguide_cli::manifest::Manifest;

const SMALL: [&str; 6] = ["--model.dim", "8", "--train.epochs", "2", "--train.batch_size", "16"];

fn keyguide(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_keyguide"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "keyguide {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(path: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_writes_manifests_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    keyguide(dir, &["synth"]);
    keyguide(dir, &["prepare", "--config", "data/raw/config.toml"]);
    let train: Vec<&str> = ["train-predictor"].into_iter().chain(SMALL).collect();
    keyguide(dir, &train);
    let train: Vec<&str> = ["train-matcher"].into_iter().chain(SMALL).collect();
    keyguide(dir, &train);

    let out = keyguide(dir, &["eval-predictor"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    for metric in ["R@1", "R@3", "R@5", "P@1"] {
        assert!(stdout.lines().any(|l| l.starts_with(&format!("{metric}\t"))), "{stdout}");
    }
    keyguide(dir, &["eval-predictor", "--model.predictor", "pmi"]);
    let out = keyguide(dir, &["eval-matcher"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("MRR"));

    keyguide(dir, &["selfplay", "--n", "12", "--sim.max_turns", "3"]);
    let summary = std::fs::read_to_string(dir.join("runs/selfplay/summary.tsv")).unwrap();
    let header = summary.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("Succ.(%)\t#Turns"), "{summary}");

    for (sub, m) in [
        ("data/raw", "synth"),
        ("data/prepared", "prepare"),
        ("models", "train-predictor"),
        ("models", "train-matcher"),
        ("models", "eval-predictor"),
        ("models", "eval-matcher"),
        ("runs/selfplay", "selfplay"),
    ] {
        let path = dir.join(sub).join(format!("manifest.{m}.json"));
        let man = manifest(&path);
        assert_eq!(man.command, m);
        assert!(!man.outputs.is_empty(), "{m} records no outputs");
        assert_eq!(man.seeds.len(), 4);
    }

    for (sub, m) in [
        ("data/prepared", "prepare"),
        ("models", "train-predictor"),
        ("models", "train-matcher"),
        ("runs/selfplay", "selfplay"),
    ] {
        let path = dir.join(sub).join(format!("manifest.{m}.json"));
        let before = manifest(&path);
        keyguide(dir, &[m, "--config", path.to_str().unwrap()]);
        let after = manifest(&path);
        assert_eq!(before, after, "{m} rerun from its manifest changed outputs");
    }
}

#[test]
fn every_generated_corpus_prepares() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for kind in ["fixture", "chain"] {
        let raw = format!("raw-{kind}");
        let prepared = format!("prepared-{kind}");
        keyguide(dir, &["synth", "--data.kind", kind, "--data.raw", &raw, "--data.depth", "6"]);
        let config = format!("{raw}/config.toml");
        let out = keyguide(dir, &["prepare", "--config", &config, "--data.raw", &raw, "--data.dir", &prepared]);
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert!(stdout.contains("test\tconversations"), "{stdout}");
        assert!(dir.join(&prepared).join("manifest.prepare.json").exists());
    }
}
