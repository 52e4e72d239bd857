//! Per-run manifests: resolved config, seeds, input and output hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use keyguide::hash::sha256_file;
use serde::{Deserialize, Serialize};

use crate::settings::Settings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: Settings,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

fn record(path: &Path) -> anyhow::Result<FileRecord> {
    Ok(FileRecord {
        path: path.to_path_buf(),
        sha256: sha256_file(path).with_context(|| format!("hashing {}", path.display()))?,
    })
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest.{command}.json")
}

impl Manifest {
    pub fn new(command: &str, config: &Settings) -> Self {
        let seeds = [
            ("data", config.data_seed),
            ("model", config.model_seed),
            ("train", config.train_seed),
            ("sim", config.sim_seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(record(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.push(record(path)?);
        Ok(())
    }

    /// Writes `manifest.<command>.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(manifest_name(&self.command));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
