//! Command-line pipeline and HTTP session service.

pub mod commands;
pub mod manifest;
pub mod server;
pub mod settings;

use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use keyguide::agent::AgentConfig;
use keyguide::matcher::MatcherModel;

use crate::manifest::Manifest;
use crate::settings::{read_config_file, Opts, Settings};

#[derive(Parser, Debug)]
#[command(name = "keyguide", version, about = "Keyword-guided conversation pipeline")]
pub struct Cli {
    /// TOML config file, or a run manifest to repeat.
    #[arg(long, global = true, env = "KEYGUIDE_CONFIG")]
    pub config: Option<std::path::PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a generated raw corpus to `data.raw`.
    Synth(Opts),
    /// Ground a raw corpus and write vocabularies, graph and examples to `data.dir`.
    Prepare(Opts),
    /// Train the next-turn keyword predictor.
    TrainPredictor(Opts),
    /// Train the response matcher on predicted keywords.
    TrainMatcher(Opts),
    /// Keyword prediction R@1/3/5 and P@1 on `data.split`.
    EvalPredictor(Opts),
    /// 20-way retrieval R@1/3/5 and MRR on `data.split`.
    EvalMatcher(Opts),
    /// Simulate target-guided dialogues and write a summary table.
    Selfplay(Opts),
    /// Host chat sessions over HTTP.
    Serve(Opts),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Prepare(_) => "prepare",
            Command::TrainPredictor(_) => "train-predictor",
            Command::TrainMatcher(_) => "train-matcher",
            Command::EvalPredictor(_) => "eval-predictor",
            Command::EvalMatcher(_) => "eval-matcher",
            Command::Selfplay(_) => "selfplay",
            Command::Serve(_) => "serve",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Command::Synth(o)
            | Command::Prepare(o)
            | Command::TrainPredictor(o)
            | Command::TrainMatcher(o)
            | Command::EvalPredictor(o)
            | Command::EvalMatcher(o)
            | Command::Selfplay(o)
            | Command::Serve(o) => o,
        }
    }
}

impl Cli {
    pub fn settings(&self) -> anyhow::Result<Settings> {
        let opts = match &self.config {
            Some(path) => self.command.opts().with_file(&read_config_file(path)?)?,
            None => self.command.opts().clone(),
        };
        Ok(Settings::resolve(&opts))
    }
}

/// Runs a non-serving subcommand.
pub fn run(cli: &Cli) -> anyhow::Result<Manifest> {
    let s = cli.settings()?;
    match &cli.command {
        Command::Synth(_) => commands::synth(&s),
        Command::Prepare(_) => commands::prepare(&s),
        Command::TrainPredictor(_) => commands::train_predictor(&s),
        Command::TrainMatcher(_) => commands::train_matcher(&s),
        Command::EvalPredictor(_) => commands::eval_predictor(&s),
        Command::EvalMatcher(_) => commands::eval_matcher(&s),
        Command::Selfplay(_) => commands::selfplay(&s),
        Command::Serve(_) => anyhow::bail!("serve runs through `serve`"),
    }
}

/// Loads models and builds the session service described by `s`.
pub fn build_app(s: &Settings, log: Option<&std::path::Path>) -> anyhow::Result<(Arc<server::App>, Manifest)> {
    let mut m = Manifest::new("serve", s);
    let ds = keyguide::dataset::Dataset::load(&s.data_dir)?;
    for name in keyguide::dataset::Dataset::artifact_names() {
        m.input(&s.data_dir.join(name))?;
    }
    let predictor = commands::load_predictor(s, &ds, &mut m)?;
    let (matcher, _) = MatcherModel::load(&s.model_matcher_ckpt, &ds.grounding)?;
    m.input(&s.model_matcher_ckpt)?;
    let agent = AgentConfig {
        pool_size: s.sim_pool_size,
        ..AgentConfig::default()
    };
    let models = server::Models::new(ds, predictor, matcher, agent, s.sim_max_turns, s.sim_seed)?;
    let app = server::App::new(models, log, s.serve_reveal_target).context("replaying session log")?;
    Ok((Arc::new(app), m))
}

pub async fn serve(s: &Settings) -> anyhow::Result<()> {
    let (app, m) = build_app(s, Some(&s.serve_log))?;
    m.write(&s.model_dir)?;
    let listener = tokio::net::TcpListener::bind(&s.serve_addr)
        .await
        .with_context(|| format!("binding {}", s.serve_addr))?;
    tracing::info!(addr = %s.serve_addr, sessions = app.store.ids().len(), "serving");
    axum::serve(listener, server::router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
