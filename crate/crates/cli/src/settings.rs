//! Namespaced options resolved as flag > environment > config file > default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::builder::BoolishValueParser;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Every option is optional on the command line; unset ones fall back to the
/// config file and then to [`Settings`] defaults.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct Opts {
    #[arg(long = "data.dir", env = "KEYGUIDE_DATA_DIR")]
    #[serde(rename = "data.dir", skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[arg(long = "data.raw", env = "KEYGUIDE_DATA_RAW")]
    #[serde(rename = "data.raw", skip_serializing_if = "Option::is_none")]
    pub data_raw: Option<PathBuf>,
    /// planted, chain or fixture
    #[arg(long = "data.kind", env = "KEYGUIDE_DATA_KIND")]
    #[serde(rename = "data.kind", skip_serializing_if = "Option::is_none")]
    pub data_kind: Option<String>,
    #[arg(long = "data.seed", env = "KEYGUIDE_DATA_SEED")]
    #[serde(rename = "data.seed", skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[arg(long = "data.depth", env = "KEYGUIDE_DATA_DEPTH")]
    #[serde(rename = "data.depth", skip_serializing_if = "Option::is_none")]
    pub data_depth: Option<usize>,
    #[arg(long = "data.vocab_cap", env = "KEYGUIDE_DATA_VOCAB_CAP")]
    #[serde(rename = "data.vocab_cap", skip_serializing_if = "Option::is_none")]
    pub data_vocab_cap: Option<usize>,
    #[arg(long = "data.keyword_min_df", env = "KEYGUIDE_DATA_KEYWORD_MIN_DF")]
    #[serde(rename = "data.keyword_min_df", skip_serializing_if = "Option::is_none")]
    pub data_keyword_min_df: Option<u32>,
    #[arg(long = "data.keyword_cap", env = "KEYGUIDE_DATA_KEYWORD_CAP")]
    #[serde(rename = "data.keyword_cap", skip_serializing_if = "Option::is_none")]
    pub data_keyword_cap: Option<usize>,
    /// train, valid or test
    #[arg(long = "data.split", env = "KEYGUIDE_DATA_SPLIT")]
    #[serde(rename = "data.split", skip_serializing_if = "Option::is_none")]
    pub data_split: Option<String>,

    #[arg(long = "model.dir", env = "KEYGUIDE_MODEL_DIR")]
    #[serde(rename = "model.dir", skip_serializing_if = "Option::is_none")]
    pub model_dir: Option<PathBuf>,
    #[arg(long = "model.predictor_ckpt", env = "KEYGUIDE_MODEL_PREDICTOR_CKPT")]
    #[serde(rename = "model.predictor_ckpt", skip_serializing_if = "Option::is_none")]
    pub model_predictor_ckpt: Option<PathBuf>,
    #[arg(long = "model.matcher_ckpt", env = "KEYGUIDE_MODEL_MATCHER_CKPT")]
    #[serde(rename = "model.matcher_ckpt", skip_serializing_if = "Option::is_none")]
    pub model_matcher_ckpt: Option<PathBuf>,
    /// ckc, pmi or oracle
    #[arg(long = "model.predictor", env = "KEYGUIDE_MODEL_PREDICTOR")]
    #[serde(rename = "model.predictor", skip_serializing_if = "Option::is_none")]
    pub model_predictor: Option<String>,
    #[arg(long = "model.dim", env = "KEYGUIDE_MODEL_DIM")]
    #[serde(rename = "model.dim", skip_serializing_if = "Option::is_none")]
    pub model_dim: Option<usize>,
    #[arg(long = "model.hidden", env = "KEYGUIDE_MODEL_HIDDEN")]
    #[serde(rename = "model.hidden", skip_serializing_if = "Option::is_none")]
    pub model_hidden: Option<usize>,
    #[arg(long = "model.relation_buckets", env = "KEYGUIDE_MODEL_RELATION_BUCKETS")]
    #[serde(rename = "model.relation_buckets", skip_serializing_if = "Option::is_none")]
    pub model_relation_buckets: Option<usize>,
    #[arg(long = "model.concepts", env = "KEYGUIDE_MODEL_CONCEPTS", value_parser = BoolishValueParser::new())]
    #[serde(rename = "model.concepts", skip_serializing_if = "Option::is_none")]
    pub model_concepts: Option<bool>,
    #[arg(long = "model.keywords", env = "KEYGUIDE_MODEL_KEYWORDS", value_parser = BoolishValueParser::new())]
    #[serde(rename = "model.keywords", skip_serializing_if = "Option::is_none")]
    pub model_keywords: Option<bool>,
    #[arg(long = "model.lambda", env = "KEYGUIDE_MODEL_LAMBDA")]
    #[serde(rename = "model.lambda", skip_serializing_if = "Option::is_none")]
    pub model_lambda: Option<f64>,
    #[arg(long = "model.pmi_alpha", env = "KEYGUIDE_MODEL_PMI_ALPHA")]
    #[serde(rename = "model.pmi_alpha", skip_serializing_if = "Option::is_none")]
    pub model_pmi_alpha: Option<f64>,
    #[arg(long = "model.seed", env = "KEYGUIDE_MODEL_SEED")]
    #[serde(rename = "model.seed", skip_serializing_if = "Option::is_none")]
    pub model_seed: Option<u64>,

    #[arg(long = "train.epochs", env = "KEYGUIDE_TRAIN_EPOCHS")]
    #[serde(rename = "train.epochs", skip_serializing_if = "Option::is_none")]
    pub train_epochs: Option<usize>,
    #[arg(long = "train.batch_size", env = "KEYGUIDE_TRAIN_BATCH_SIZE")]
    #[serde(rename = "train.batch_size", skip_serializing_if = "Option::is_none")]
    pub train_batch_size: Option<usize>,
    #[arg(long = "train.lr", env = "KEYGUIDE_TRAIN_LR")]
    #[serde(rename = "train.lr", skip_serializing_if = "Option::is_none")]
    pub train_lr: Option<f64>,
    #[arg(long = "train.patience", env = "KEYGUIDE_TRAIN_PATIENCE")]
    #[serde(rename = "train.patience", skip_serializing_if = "Option::is_none")]
    pub train_patience: Option<usize>,
    #[arg(long = "train.seed", env = "KEYGUIDE_TRAIN_SEED")]
    #[serde(rename = "train.seed", skip_serializing_if = "Option::is_none")]
    pub train_seed: Option<u64>,

    #[arg(long = "sim.n", visible_alias = "n", env = "KEYGUIDE_SIM_N")]
    #[serde(rename = "sim.n", skip_serializing_if = "Option::is_none")]
    pub sim_n: Option<usize>,
    #[arg(long = "sim.max_turns", env = "KEYGUIDE_SIM_MAX_TURNS")]
    #[serde(rename = "sim.max_turns", skip_serializing_if = "Option::is_none")]
    pub sim_max_turns: Option<usize>,
    #[arg(long = "sim.pool_size", env = "KEYGUIDE_SIM_POOL_SIZE")]
    #[serde(rename = "sim.pool_size", skip_serializing_if = "Option::is_none")]
    pub sim_pool_size: Option<usize>,
    #[arg(long = "sim.seed", env = "KEYGUIDE_SIM_SEED")]
    #[serde(rename = "sim.seed", skip_serializing_if = "Option::is_none")]
    pub sim_seed: Option<u64>,
    /// reachable or any
    #[arg(long = "sim.targets", env = "KEYGUIDE_SIM_TARGETS")]
    #[serde(rename = "sim.targets", skip_serializing_if = "Option::is_none")]
    pub sim_targets: Option<String>,
    /// retrieval or echo
    #[arg(long = "sim.user", env = "KEYGUIDE_SIM_USER")]
    #[serde(rename = "sim.user", skip_serializing_if = "Option::is_none")]
    pub sim_user: Option<String>,
    /// graph or embedding
    #[arg(long = "sim.strategy", env = "KEYGUIDE_SIM_STRATEGY")]
    #[serde(rename = "sim.strategy", skip_serializing_if = "Option::is_none")]
    pub sim_strategy: Option<String>,
    #[arg(long = "sim.out", env = "KEYGUIDE_SIM_OUT")]
    #[serde(rename = "sim.out", skip_serializing_if = "Option::is_none")]
    pub sim_out: Option<PathBuf>,

    #[arg(long = "serve.addr", env = "KEYGUIDE_SERVE_ADDR")]
    #[serde(rename = "serve.addr", skip_serializing_if = "Option::is_none")]
    pub serve_addr: Option<String>,
    #[arg(long = "serve.log", env = "KEYGUIDE_SERVE_LOG")]
    #[serde(rename = "serve.log", skip_serializing_if = "Option::is_none")]
    pub serve_log: Option<PathBuf>,
    #[arg(long = "serve.reveal_target", env = "KEYGUIDE_SERVE_REVEAL_TARGET", value_parser = BoolishValueParser::new())]
    #[serde(rename = "serve.reveal_target", skip_serializing_if = "Option::is_none")]
    pub serve_reveal_target: Option<bool>,
}

/// Flattens nested tables into `section.key` entries.
fn flatten(prefix: &str, v: Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other);
        }
    }
}

/// Reads a TOML config, or a JSON run manifest whose `config` object is reused.
pub fn read_config_file(path: &Path) -> anyhow::Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        v.get("config").cloned().unwrap_or(v)
    } else {
        let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        serde_json::to_value(t)?
    };
    let mut out = Map::new();
    flatten("", value, &mut out);
    Ok(out)
}

impl Opts {
    /// Fills options left unset by flags and environment from `file`.
    pub fn with_file(&self, file: &Map<String, Value>) -> anyhow::Result<Opts> {
        let mut merged = match serde_json::to_value(self)? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        let known = match serde_json::to_value(Settings::resolve(&Opts::default()))? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        for (k, v) in file {
            if !known.contains_key(k) {
                bail!("unknown config key `{k}`");
            }
            if !v.is_null() {
                merged.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        serde_json::from_value(Value::Object(merged)).context("config value has the wrong type")
    }
}

/// Fully resolved options. This is what manifests record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    #[serde(rename = "data.dir")]
    pub data_dir: PathBuf,
    #[serde(rename = "data.raw")]
    pub data_raw: PathBuf,
    #[serde(rename = "data.kind")]
    pub data_kind: String,
    #[serde(rename = "data.seed")]
    pub data_seed: u64,
    #[serde(rename = "data.depth")]
    pub data_depth: usize,
    #[serde(rename = "data.vocab_cap")]
    pub data_vocab_cap: usize,
    #[serde(rename = "data.keyword_min_df")]
    pub data_keyword_min_df: u32,
    #[serde(rename = "data.keyword_cap")]
    pub data_keyword_cap: usize,
    #[serde(rename = "data.split")]
    pub data_split: String,
    #[serde(rename = "model.dir")]
    pub model_dir: PathBuf,
    #[serde(rename = "model.predictor_ckpt")]
    pub model_predictor_ckpt: PathBuf,
    #[serde(rename = "model.matcher_ckpt")]
    pub model_matcher_ckpt: PathBuf,
    #[serde(rename = "model.predictor")]
    pub model_predictor: String,
    #[serde(rename = "model.dim")]
    pub model_dim: usize,
    #[serde(rename = "model.hidden")]
    pub model_hidden: usize,
    #[serde(rename = "model.relation_buckets")]
    pub model_relation_buckets: usize,
    #[serde(rename = "model.concepts")]
    pub model_concepts: bool,
    #[serde(rename = "model.keywords")]
    pub model_keywords: bool,
    #[serde(rename = "model.lambda")]
    pub model_lambda: f64,
    #[serde(rename = "model.pmi_alpha")]
    pub model_pmi_alpha: f64,
    #[serde(rename = "model.seed")]
    pub model_seed: u64,
    #[serde(rename = "train.epochs")]
    pub train_epochs: usize,
    #[serde(rename = "train.batch_size")]
    pub train_batch_size: usize,
    #[serde(rename = "train.lr")]
    pub train_lr: f64,
    #[serde(rename = "train.patience")]
    pub train_patience: usize,
    #[serde(rename = "train.seed")]
    pub train_seed: u64,
    #[serde(rename = "sim.n")]
    pub sim_n: usize,
    #[serde(rename = "sim.max_turns")]
    pub sim_max_turns: usize,
    #[serde(rename = "sim.pool_size")]
    pub sim_pool_size: usize,
    #[serde(rename = "sim.seed")]
    pub sim_seed: u64,
    #[serde(rename = "sim.targets")]
    pub sim_targets: String,
    #[serde(rename = "sim.user")]
    pub sim_user: String,
    #[serde(rename = "sim.strategy")]
    pub sim_strategy: String,
    #[serde(rename = "sim.out")]
    pub sim_out: PathBuf,
    #[serde(rename = "serve.addr")]
    pub serve_addr: String,
    #[serde(rename = "serve.log")]
    pub serve_log: PathBuf,
    #[serde(rename = "serve.reveal_target")]
    pub serve_reveal_target: bool,
}

impl Settings {
    pub fn resolve(o: &Opts) -> Settings {
        use keyguide::{agent, matcher, numerics::AdamConfig, pmi, sim, text, train::TrainConfig};
        let model_dir = o.model_dir.clone().unwrap_or_else(|| "models".into());
        let tc = TrainConfig::default();
        Settings {
            data_dir: o.data_dir.clone().unwrap_or_else(|| "data/prepared".into()),
            data_raw: o.data_raw.clone().unwrap_or_else(|| "data/raw".into()),
            data_kind: o.data_kind.clone().unwrap_or_else(|| "planted".into()),
            data_seed: o.data_seed.unwrap_or(0),
            data_depth: o.data_depth.unwrap_or(4),
            data_vocab_cap: o.data_vocab_cap.unwrap_or(text::DEFAULT_VOCAB_CAP),
            data_keyword_min_df: o.data_keyword_min_df.unwrap_or(text::DEFAULT_KEYWORD_MIN_DF),
            data_keyword_cap: o.data_keyword_cap.unwrap_or(text::DEFAULT_KEYWORD_CAP),
            data_split: o.data_split.clone().unwrap_or_else(|| "test".into()),
            model_predictor_ckpt: o
                .model_predictor_ckpt
                .clone()
                .unwrap_or_else(|| model_dir.join("predictor.ckpt")),
            model_matcher_ckpt: o.model_matcher_ckpt.clone().unwrap_or_else(|| model_dir.join("matcher.ckpt")),
            model_predictor: o.model_predictor.clone().unwrap_or_else(|| "ckc".into()),
            model_dim: o.model_dim.unwrap_or(200),
            model_hidden: o.model_hidden.or(o.model_dim).unwrap_or(200),
            model_relation_buckets: o
                .model_relation_buckets
                .unwrap_or(keyguide::numerics::DEFAULT_RELATION_BUCKETS),
            model_concepts: o.model_concepts.unwrap_or(true),
            model_keywords: o.model_keywords.unwrap_or(true),
            model_lambda: o.model_lambda.unwrap_or(matcher::DEFAULT_LAMBDA_K),
            model_pmi_alpha: o.model_pmi_alpha.unwrap_or(pmi::DEFAULT_SMOOTHING),
            model_seed: o.model_seed.unwrap_or(0),
            train_epochs: o.train_epochs.unwrap_or(tc.epochs),
            train_batch_size: o.train_batch_size.unwrap_or(tc.batch_size),
            train_lr: o.train_lr.unwrap_or(AdamConfig::default().lr),
            train_patience: o.train_patience.unwrap_or(tc.patience),
            train_seed: o.train_seed.unwrap_or(0),
            sim_n: o.sim_n.unwrap_or(sim::DEFAULT_DIALOGUES),
            sim_max_turns: o.sim_max_turns.unwrap_or(sim::DEFAULT_MAX_AGENT_TURNS),
            sim_pool_size: o.sim_pool_size.unwrap_or(agent::DEFAULT_POOL_SIZE),
            sim_seed: o.sim_seed.unwrap_or(0),
            sim_targets: o.sim_targets.clone().unwrap_or_else(|| "reachable".into()),
            sim_user: o.sim_user.clone().unwrap_or_else(|| "retrieval".into()),
            sim_strategy: o.sim_strategy.clone().unwrap_or_else(|| "graph".into()),
            sim_out: o.sim_out.clone().unwrap_or_else(|| "runs/selfplay".into()),
            serve_addr: o.serve_addr.clone().unwrap_or_else(|| "127.0.0.1:8080".into()),
            serve_log: o.serve_log.clone().unwrap_or_else(|| model_dir.join("sessions.jsonl")),
            serve_reveal_target: o.serve_reveal_target.unwrap_or(false),
            model_dir,
        }
    }

    pub fn train_config(&self) -> keyguide::train::TrainConfig {
        keyguide::train::TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            adam: keyguide::numerics::AdamConfig {
                lr: self.train_lr,
                ..Default::default()
            },
            patience: self.train_patience,
            seed: self.train_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_fills_only_unset_options() {
        let opts = Opts {
            train_epochs: Some(3),
            ..Opts::default()
        };
        let file: Map<String, Value> = serde_json::from_str(r#"{"train.epochs": 9, "train.lr": 0.5}"#).unwrap();
        let s = Settings::resolve(&opts.with_file(&file).unwrap());
        assert_eq!(s.train_epochs, 3);
        assert_eq!(s.train_lr, 0.5);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        let bad: Map<String, Value> = serde_json::from_str(r#"{"train.epoch": 9}"#).unwrap();
        assert!(Opts::default().with_file(&bad).is_err());
        let bad: Map<String, Value> = serde_json::from_str(r#"{"train.epochs": "many"}"#).unwrap();
        assert!(Opts::default().with_file(&bad).is_err());
    }

    #[test]
    fn toml_sections_flatten() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[sim]\nn = 5\n[model]\ndim = 8\n").unwrap();
        let s = Settings::resolve(&Opts::default().with_file(&read_config_file(&p).unwrap()).unwrap());
        assert_eq!((s.sim_n, s.model_dim, s.model_hidden), (5, 8, 8));
    }

    #[test]
    fn resolved_settings_round_trip_as_config() {
        let s = Settings::resolve(&Opts::default());
        let v = serde_json::to_value(&s).unwrap();
        let back = Settings::resolve(&Opts::default().with_file(v.as_object().unwrap()).unwrap());
        assert_eq!(s, back);
    }
}
