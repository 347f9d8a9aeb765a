//! The `dcrs` command line: prepare | synth | train | rerank | eval | report.

mod commands;
mod config;

pub use commands::{cmd_eval, cmd_prepare, cmd_report, cmd_rerank, cmd_synth, cmd_train, EvalManifest};
pub use config::{
    DatasetKind, EvalSection, GridSpec, ModelSpec, PrepareSection, RerankSection, ReportSection, RunConfig,
    SynthSection, TrainSection, FROZEN_CONFIG,
};

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::models::ModelError;
use crate::pipeline::{PipelineError, Result};

#[derive(Debug, Parser)]
#[command(name = "dcrs", version, about = "Category-aware recommendation toolkit")]
pub struct Cli {
    /// TOML config with one section per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any config value, e.g. `--set train.model.lambda=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Random seed; required for `train` and `synth`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, binarize and split raw rating files.
    Prepare {
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        items: Option<PathBuf>,
        #[arg(long)]
        user_features: Option<PathBuf>,
        #[arg(long)]
        item_features: Option<PathBuf>,
        /// movielens | amazon | synthetic
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic world and its interaction files.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model or a hyperparameter grid.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// nfm | dcrs | unawareness | ips
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        resume: bool,
    },
    /// Re-rank a model's top candidates with MMR or DPP.
    Rerank {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// mmr | dpp
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        pool_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate models and re-rankers into report tables.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        base: Option<String>,
    },
    /// Case-study histograms and the comparison grid from an eval run.
    Report {
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// User id for a case study; repeatable.
        #[arg(long = "user")]
        users: Vec<String>,
    },
}

fn push_set(sets: &mut Vec<String>, key: &str, value: impl std::fmt::Display) {
    sets.push(format!("{key}={value}"));
}

fn push_path(sets: &mut Vec<String>, key: &str, p: &Option<PathBuf>) {
    if let Some(p) = p {
        // Quoted so the path stays a string literal.
        sets.push(format!("{key}={}", toml::Value::String(p.display().to_string())));
    }
}

fn push_str(sets: &mut Vec<String>, key: &str, v: &Option<String>) {
    if let Some(v) = v {
        sets.push(format!("{key}={}", toml::Value::String(v.clone())));
    }
}

/// Resolves the config file, `--set` overrides and command flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut sets = cli.sets.clone();
    match &cli.command {
        Command::Prepare {
            ratings,
            items,
            user_features,
            item_features,
            dataset,
            out,
        } => {
            push_path(&mut sets, "prepare.ratings", ratings);
            push_path(&mut sets, "prepare.items", items);
            push_path(&mut sets, "prepare.user_features", user_features);
            push_path(&mut sets, "prepare.item_features", item_features);
            push_str(&mut sets, "prepare.dataset", dataset);
            push_path(&mut sets, "prepare.out", out);
        }
        Command::Synth { out } => push_path(&mut sets, "synth.out", out),
        Command::Train {
            data,
            out,
            kind,
            resume,
        } => {
            push_path(&mut sets, "train.data", data);
            push_path(&mut sets, "train.out", out);
            push_str(&mut sets, "train.model.kind", kind);
            if *resume {
                push_set(&mut sets, "train.resume", true);
            }
        }
        Command::Rerank {
            data,
            model,
            method,
            theta,
            pool_size,
            out,
        } => {
            push_path(&mut sets, "rerank.data", data);
            push_path(&mut sets, "rerank.model", model);
            push_str(&mut sets, "rerank.method.method", method);
            if let Some(t) = theta {
                push_set(&mut sets, "rerank.method.theta", format!("{t:?}"));
            }
            if let Some(n) = pool_size {
                push_set(&mut sets, "rerank.pool_size", n);
            }
            push_path(&mut sets, "rerank.out", out);
        }
        Command::Eval { data, out, base } => {
            push_path(&mut sets, "eval.data", data);
            push_path(&mut sets, "eval.out", out);
            push_str(&mut sets, "eval.report.base_model", base);
        }
        Command::Report { eval, out, users } => {
            push_path(&mut sets, "report.eval", eval);
            push_path(&mut sets, "report.out", out);
            if !users.is_empty() {
                let list: Vec<toml::Value> = users.iter().map(|u| toml::Value::String(u.clone())).collect();
                push_set(&mut sets, "report.users", toml::Value::Array(list));
            }
        }
    }
    let mut cfg = base.with_overrides(&sets)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg)
}

fn seed_required(cli: &Cli) -> Result<u64> {
    cli.seed
        .ok_or_else(|| PipelineError::Config("--seed is required for this command".into()))
}

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    let training = matches!(cli.command, Command::Train { .. });
    let outcome = pool.install(|| -> Result<()> {
        let cfg = resolve(&cli)?;
        match &cli.command {
            Command::Prepare { .. } => cmd_prepare(&cfg).map(|_| ()),
            Command::Synth { .. } => cmd_synth(&cfg, seed_required(&cli)?).map(|_| ()),
            Command::Train { .. } => cmd_train(&cfg, seed_required(&cli)?).map(|_| ()),
            Command::Rerank { .. } => cmd_rerank(&cfg).map(|_| ()),
            Command::Eval { .. } => cmd_eval(&cfg).map(|_| ()),
            Command::Report { .. } => cmd_report(&cfg).map(|_| ()),
        }
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e, training)
        }
    }
}

/// 2 for data and configuration problems, 3 for training failures, 4 for
/// evaluation failures.
pub fn exit_code(e: &PipelineError, training: bool) -> i32 {
    match e {
        PipelineError::Ingest(_)
        | PipelineError::Synth(_)
        | PipelineError::Io(_)
        | PipelineError::Json(_)
        | PipelineError::Config(_) => 2,
        PipelineError::Model(
            ModelError::Config(_)
            | ModelError::HashMismatch { .. }
            | ModelError::Ingest(_)
            | ModelError::Io(_)
            | ModelError::Json(_),
        ) => 2,
        PipelineError::Model(_) if training => 3,
        _ => 4,
    }
}

/// Entry point for `main`: parses `args` and runs.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}
