//! Pipeline subcommands. Each returns the manifest it wrote.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use keyguide::agent::{AgentConfig, CkcAgent, EchoUser, Responder, RetrievalUser};
use keyguide::ckg::DistanceCache;
use keyguide::corpus::{read_raw_file, Split};
use keyguide::dataset::{Dataset, PerSplit, PrepareConfig};
use keyguide::eval::{summarize, write_metrics_tsv, MetricRow};
use keyguide::matcher::{prepare_matcher_examples, MatcherConfig, MatcherModel};
use keyguide::pmi::PmiTable;
use keyguide::predictor::{evaluate_predictor, KeywordPredictor, OraclePredictor, PredictorConfig, PredictorModel};
use keyguide::sim::{run_selfplay, write_summary_tsv, DistanceSource, SimulationConfig, TargetPolicy};
use keyguide::synthetic::{chain_corpus, fixture_corpus, planted_corpus, PlantedShape, SyntheticCorpus};
use keyguide::text::{PosLexicon, Stopwords};

use crate::manifest::Manifest;
use crate::settings::Settings;

pub const RAW_SPLITS: [&str; 3] = ["train.jsonl", "valid.jsonl", "test.jsonl"];
pub const TRIPLETS_FILE: &str = "triplets.tsv";
pub const CORPUS_CONFIG_FILE: &str = "config.toml";

pub fn split(s: &Settings) -> anyhow::Result<Split> {
    Ok(match s.data_split.as_str() {
        "train" => Split::Train,
        "valid" => Split::Valid,
        "test" => Split::Test,
        other => bail!("unknown split `{other}` (expected train, valid or test)"),
    })
}

/// Writes a generated raw corpus plus a config file holding the
/// preprocessing settings it was generated for.
pub fn synth(s: &Settings) -> anyhow::Result<Manifest> {
    let corpus: SyntheticCorpus = match s.data_kind.as_str() {
        "planted" => planted_corpus(&PlantedShape::shipped(), s.data_seed),
        "chain" => {
            if !(1..=6).contains(&s.data_depth) {
                bail!("data.depth must be in 1..=6");
            }
            chain_corpus(s.data_depth, s.data_seed)
        }
        "fixture" => fixture_corpus(s.data_seed),
        other => bail!("unknown corpus kind `{other}` (expected planted, chain or fixture)"),
    };
    let dir = &s.data_raw;
    corpus.write_dir(dir)?;
    std::fs::write(
        dir.join(CORPUS_CONFIG_FILE),
        format!("[data]\nkeyword_min_df = {}\n", corpus.config.keyword_min_df),
    )?;
    let mut m = Manifest::new("synth", s);
    for name in RAW_SPLITS.iter().chain(&[TRIPLETS_FILE, "pos_lexicon.tsv", CORPUS_CONFIG_FILE]) {
        m.output(&dir.join(name))?;
    }
    m.write(dir)?;
    println!(
        "wrote {} corpus: {} / {} / {} conversations, {} triplets",
        s.data_kind,
        corpus.raw.train.len(),
        corpus.raw.valid.len(),
        corpus.raw.test.len(),
        corpus.triplets.len()
    );
    Ok(m)
}

fn optional(dir: &Path, name: &str) -> Option<PathBuf> {
    let p = dir.join(name);
    p.exists().then_some(p)
}

pub fn prepare(s: &Settings) -> anyhow::Result<Manifest> {
    let raw_dir = &s.data_raw;
    let mut m = Manifest::new("prepare", s);
    let [train, valid, test] = RAW_SPLITS.map(|n| raw_dir.join(n));
    let raw = PerSplit {
        train: read_raw_file(&train)?,
        valid: read_raw_file(&valid)?,
        test: read_raw_file(&test)?,
    };
    for p in [&train, &valid, &test] {
        m.input(p)?;
    }
    let triplets = raw_dir.join(TRIPLETS_FILE);
    let reader = File::open(&triplets)
        .map(BufReader::new)
        .map_err(|_| keyguide::Error::MissingArtifact(triplets.clone()))?;
    m.input(&triplets)?;
    let pos = match optional(raw_dir, "pos_lexicon.tsv") {
        Some(p) => {
            m.input(&p)?;
            PosLexicon::load(&p)?
        }
        None => PosLexicon::bundled(),
    };
    let stopwords = match optional(raw_dir, "stopwords.txt") {
        Some(p) => {
            m.input(&p)?;
            Stopwords::load(&p)?
        }
        None => Stopwords::bundled(),
    };
    let config = PrepareConfig {
        vocab_cap: s.data_vocab_cap,
        keyword_min_df: s.data_keyword_min_df,
        keyword_cap: s.data_keyword_cap,
        seed: s.data_seed,
    };
    let ds = Dataset::prepare(&raw, reader, &triplets.display().to_string(), pos, stopwords, &config)?;
    ds.save(&s.data_dir)?;
    for name in Dataset::artifact_names() {
        m.output(&s.data_dir.join(name))?;
    }
    m.write(&s.data_dir)?;
    let r = &ds.report;
    println!(
        "vocab {} keywords {} graph {} nodes / {} edges / {} relations, pool {}",
        r.vocab_size, r.keywords, r.graph_nodes, r.graph_edges, r.graph_relations, r.pool_size
    );
    for split in Split::ALL {
        println!(
            "{}\tconversations {}\tprediction {}\tretrieval {}",
            split.name(),
            r.ingest.get(split).conversations,
            r.prediction.get(split).emitted,
            r.retrieval.get(split)
        );
    }
    Ok(m)
}

fn load_dataset(s: &Settings, m: &mut Manifest) -> anyhow::Result<Dataset> {
    let ds = Dataset::load(&s.data_dir)?;
    for name in Dataset::artifact_names() {
        m.input(&s.data_dir.join(name))?;
    }
    Ok(ds)
}

fn load_ckc(s: &Settings, ds: &Dataset, m: &mut Manifest) -> anyhow::Result<PredictorModel> {
    let (model, _) = PredictorModel::load(&s.model_predictor_ckpt, &ds.grounding)?;
    m.input(&s.model_predictor_ckpt)?;
    Ok(model)
}

/// The keyword predictor named by `model.predictor`.
pub fn load_predictor(s: &Settings, ds: &Dataset, m: &mut Manifest) -> anyhow::Result<Box<dyn KeywordPredictor>> {
    Ok(match s.model_predictor.as_str() {
        "ckc" => Box::new(load_ckc(s, ds, m)?),
        "pmi" => Box::new(PmiTable::fit(&ds.conversations.train, s.model_pmi_alpha)?),
        "oracle" => Box::new(OraclePredictor::new()),
        other => bail!("unknown predictor `{other}` (expected ckc, pmi or oracle)"),
    })
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn train_predictor(s: &Settings) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("train-predictor", s);
    let ds = load_dataset(s, &mut m)?;
    let config = PredictorConfig {
        embed_dim: s.model_dim,
        hidden: s.model_hidden,
        relation_buckets: s.model_relation_buckets,
        use_concepts: s.model_concepts,
        seed: s.model_seed,
    };
    let mut model = PredictorModel::new(config, &ds.grounding)?;
    let report = model.train(&ds.grounding, &ds.prediction.train, &ds.prediction.valid, &s.train_config())?;
    std::fs::create_dir_all(&s.model_dir)?;
    model.save(&s.model_predictor_ckpt, report.best_epoch)?;
    let report_path = s.model_dir.join("train-predictor.json");
    write_json(&report_path, &report)?;
    m.output(&s.model_predictor_ckpt)?;
    m.output(&report_path)?;
    m.write(&s.model_dir)?;
    println!(
        "trained predictor: {} epochs, best epoch {} (valid R@1 {})",
        report.epochs.len(),
        report.best_epoch,
        report.best_score.map_or("-".into(), |v| format!("{v:.4}"))
    );
    Ok(m)
}

pub fn train_matcher(s: &Settings) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("train-matcher", s);
    let ds = load_dataset(s, &mut m)?;
    let g = &ds.grounding;
    let predictor = load_predictor(s, &ds, &mut m)?;
    let train = prepare_matcher_examples(&ds.retrieval.train, &ds.pool, g, predictor.as_ref())?;
    let valid = prepare_matcher_examples(&ds.retrieval.valid, &ds.pool, g, predictor.as_ref())?;
    let config = MatcherConfig {
        dim: s.model_dim,
        lambda_k: s.model_lambda,
        relation_buckets: s.model_relation_buckets,
        use_concepts: s.model_concepts,
        use_keywords: s.model_keywords,
        seed: s.model_seed,
    };
    let mut model = MatcherModel::new(config, g)?;
    let report = model.train(g, &ds.pool, &train, &valid, &s.train_config())?;
    std::fs::create_dir_all(&s.model_dir)?;
    model.save(&s.model_matcher_ckpt, report.best_epoch)?;
    let report_path = s.model_dir.join("train-matcher.json");
    write_json(&report_path, &report)?;
    m.output(&s.model_matcher_ckpt)?;
    m.output(&report_path)?;
    m.write(&s.model_dir)?;
    println!(
        "trained matcher: {} epochs, best epoch {} (valid R@1 {})",
        report.epochs.len(),
        report.best_epoch,
        report.best_score.map_or("-".into(), |v| format!("{v:.4}"))
    );
    Ok(m)
}

fn report_metrics(s: &Settings, m: &mut Manifest, stem: &str, rows: &[MetricRow]) -> anyhow::Result<()> {
    let mut tsv = Vec::new();
    write_metrics_tsv(&mut tsv, rows)?;
    std::io::stdout().write_all(&tsv)?;
    std::fs::create_dir_all(&s.model_dir)?;
    let tsv_path = s.model_dir.join(format!("{stem}.tsv"));
    std::fs::write(&tsv_path, &tsv)?;
    let json_path = s.model_dir.join(format!("{stem}.json"));
    write_json(&json_path, &rows)?;
    m.output(&tsv_path)?;
    m.output(&json_path)?;
    m.write(&s.model_dir)?;
    Ok(())
}

pub fn eval_predictor(s: &Settings) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("eval-predictor", s);
    let split = split(s)?;
    let ds = load_dataset(s, &mut m)?;
    if s.model_predictor == "oracle" {
        bail!("the oracle predictor needs a target and cannot be evaluated on examples");
    }
    let predictor = load_predictor(s, &ds, &mut m)?;
    let preds = evaluate_predictor(predictor.as_ref(), &ds.grounding, ds.prediction.get(split))?;
    let rows = summarize(&preds, false)?;
    report_metrics(s, &mut m, &format!("eval-predictor.{}.{}", s.model_predictor, split.name()), &rows)?;
    Ok(m)
}

pub fn eval_matcher(s: &Settings) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("eval-matcher", s);
    let split = split(s)?;
    let ds = load_dataset(s, &mut m)?;
    let g = &ds.grounding;
    let predictor = load_predictor(s, &ds, &mut m)?;
    let (matcher, _) = MatcherModel::load(&s.model_matcher_ckpt, g)?;
    m.input(&s.model_matcher_ckpt)?;
    let examples = prepare_matcher_examples(ds.retrieval.get(split), &ds.pool, g, predictor.as_ref())?;
    let preds = matcher.evaluate(g, &ds.pool, &examples)?;
    let rows = summarize(&preds, true)?;
    report_metrics(s, &mut m, &format!("eval-matcher.{}", split.name()), &rows)?;
    Ok(m)
}

pub fn target_policy(s: &Settings) -> anyhow::Result<TargetPolicy> {
    Ok(match s.sim_targets.as_str() {
        "reachable" => TargetPolicy::Reachable,
        "any" => TargetPolicy::AnyGrounded,
        other => bail!("unknown target policy `{other}` (expected reachable or any)"),
    })
}

pub fn selfplay(s: &Settings) -> anyhow::Result<Manifest> {
    let mut m = Manifest::new("selfplay", s);
    let split = split(s)?;
    let ds = load_dataset(s, &mut m)?;
    let g = &ds.grounding;
    let predictor = load_predictor(s, &ds, &mut m)?;
    let (matcher, _) = MatcherModel::load(&s.model_matcher_ckpt, g)?;
    m.input(&s.model_matcher_ckpt)?;
    let encoded = matcher.encode_pool(g, &ds.pool)?;
    let agent = CkcAgent {
        grounding: g,
        predictor: predictor.as_ref(),
        matcher: &matcher,
        pool: &ds.pool,
        encoded: &encoded,
        config: AgentConfig {
            pool_size: s.sim_pool_size,
            ..AgentConfig::default()
        },
    };
    let retrieval_user;
    let user: &dyn Responder = match s.sim_user.as_str() {
        "retrieval" => {
            retrieval_user = RetrievalUser {
                grounding: g,
                matcher: &matcher,
                pool: &ds.pool,
                encoded: &encoded,
                max_context: AgentConfig::default().max_context,
            };
            &retrieval_user
        }
        "echo" => &EchoUser,
        other => bail!("unknown user `{other}` (expected retrieval or echo)"),
    };
    let cache = DistanceCache::new();
    let table_model;
    let distances = match s.sim_strategy.as_str() {
        "graph" => DistanceSource::Graph(&cache),
        "embedding" => {
            table_model = load_ckc(s, &ds, &mut m)?;
            let id = table_model
                .store
                .id("embedding")
                .context("predictor checkpoint has no embedding table")?;
            DistanceSource::Embedding(table_model.store.value(id))
        }
        other => bail!("unknown strategy `{other}` (expected graph or embedding)"),
    };
    let config = SimulationConfig {
        max_agent_turns: s.sim_max_turns,
        n_dialogues: s.sim_n,
        seed: s.sim_seed,
        target_policy: target_policy(s)?,
    };
    let starts = ds.openers(split);
    let (results, summary) = run_selfplay(&agent, user, g, &ds.pool, &starts, &cache, &distances, &config)?;

    let out = &s.sim_out;
    std::fs::create_dir_all(out)?;
    let transcripts = out.join("transcripts.jsonl");
    keyguide::corpus::write_jsonl(&transcripts, &results)?;
    let tsv_path = out.join("summary.tsv");
    let mut tsv = Vec::new();
    write_summary_tsv(&mut tsv, &summary)?;
    std::fs::write(&tsv_path, &tsv)?;
    std::io::stdout().write_all(&tsv)?;
    let json_path = out.join("summary.json");
    write_json(&json_path, &summary)?;
    for p in [&transcripts, &tsv_path, &json_path] {
        m.output(p)?;
    }
    m.write(out)?;
    Ok(m)
}
