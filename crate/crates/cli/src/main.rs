//! `elp`: ingest clarification logs, train engagement predictors and run the experiment
//! protocols.

mod commands;
mod config;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elp_core::experiments::Dataset;
use elp_core::featurize::InputSetting;

/// Engagement level prediction for search clarification panes.
#[derive(Debug, Parser)]
#[command(name = "elp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. They override values from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration, or a `manifest.json` from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    pub overwrite: bool,
    #[arg(long, value_parser = clap::value_parser!(Dataset))]
    pub dataset: Option<Dataset>,
    #[arg(long, value_parser = parse_setting)]
    pub setting: Option<InputSetting>,
    #[arg(long)]
    pub max_results: Option<usize>,
    /// Corpus cache to read instead of the config's corpus source.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Directory holding the default corpus cache.
    #[arg(long, env = "ELP_CACHE_DIR", hide_env_values = true)]
    pub cache_dir: Option<PathBuf>,
}

fn parse_setting(s: &str) -> Result<InputSetting, String> {
    s.parse().map_err(|e: elp_core::featurize::FeaturizeError| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a click log (and optionally a SERP dump) into a corpus cache with stats.
    Ingest {
        #[arg(long)]
        click_log: Option<PathBuf>,
        #[arg(long)]
        serp_dump: Option<PathBuf>,
        /// Join SERPs case-insensitively.
        #[arg(long)]
        case_fold_join: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Length statistics of a corpus.
    Stats {
        #[command(flatten)]
        common: Common,
    },
    /// Fit one model on the training split and save it with its test predictions.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Model comparison table with significance markers.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Input-setting ablation, plus the result-count sweep when configured.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Error analysis by impression, query length, answer coverage and noun diversity.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Rank the panes of held-out multi-pane queries by predicted engagement.
    Rerank {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic corpus with a planted signal.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            click_log,
            serp_dump,
            case_fold_join,
            common,
        } => commands::ingest(&common, click_log, serp_dump, case_fold_join),
        Command::Stats { common } => commands::run("stats", &common),
        Command::Train { common } => commands::run("train", &common),
        Command::Evaluate { common } => commands::run("evaluate", &common),
        Command::Ablate { common } => commands::run("ablate", &common),
        Command::Analyze { common } => commands::run("analyze", &common),
        Command::Rerank { common } => commands::run("rerank", &common),
        Command::Synth { common } => commands::run("synth", &common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{f}");
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
