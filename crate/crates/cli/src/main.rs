use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use recdiff::dataio::InputFormat;
use recdiff::pipeline::{self, PrepareArgs};
use recdiff::Error;

/// Sequential recommender with semantic fusion and diffusion augmentation.
#[derive(Parser)]
#[command(name = "recdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and split a raw interaction log, compute strata, render prompts.
    Prepare {
        /// CSV or JSON-lines file with user, item, timestamp.
        #[arg(long)]
        raw: PathBuf,
        /// Dataset kind, selects the prompt template (beauty, sports, toys, yelp, ml1m).
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// csv or jsonl; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
        /// JSON-lines item attributes, one object with an `item` key per line.
        #[arg(long)]
        attributes: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        min_count: usize,
        #[arg(long, default_value_t = 0.2)]
        tail_fraction: f64,
        #[arg(long, default_value_t = 5)]
        cold_threshold: usize,
    },
    /// Embed prompts with the deterministic offline pseudo-embedder.
    EmbedPseudo {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory, or a `.csv` file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint, log and resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted `key=value` config override, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Defaults to `<output root>/train`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prepared data directory; defaults to the one the model was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a grid of variants from one base config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// TOML file of `[[variant]]` tables (name, overrides); defaults to the standard grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Defaults to `<output root>/ablate`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run variants on separate threads.
        #[arg(long)]
        parallel: bool,
    },
}

fn run(cmd: Command) -> recdiff::Result<()> {
    match cmd {
        Command::Prepare { raw, kind, out, format, attributes, min_count, tail_fraction, cold_threshold } => {
            let format = format.map(|f| f.parse::<InputFormat>()).transpose()?;
            let m = pipeline::cmd_prepare(&PrepareArgs {
                raw: &raw,
                kind: &kind,
                out: &out,
                format,
                attributes: attributes.as_deref(),
                min_count,
                tail_fraction,
                cold_threshold,
            })?;
            println!("{} users, {} items, {} interactions", m.counts.users, m.counts.items, m.counts.actions);
        }
        Command::EmbedPseudo { prompts, dim, seed, out } => {
            let m = pipeline::cmd_embed_pseudo(&prompts, dim, seed, &out)?;
            println!("wrote {}x{} semantic matrix to {}", m.n_items(), m.width(), out.display());
        }
        Command::Train { config, overrides, out } => {
            let run = pipeline::cmd_train(&config, &overrides, out.as_deref())?;
            println!(
                "{} epochs, best epoch {}; artifacts in {}",
                run.log.len(),
                run.checkpoint.best_epoch,
                run.dir.display()
            );
        }
        Command::Evaluate { checkpoint, data, out } => {
            let report = pipeline::cmd_evaluate(&checkpoint, data.as_deref(), &out)?;
            print!("{}", report.to_table());
        }
        Command::Ablate { config, overrides, grid, out, parallel } => {
            let rows = pipeline::cmd_ablate(&config, &overrides, grid.as_deref(), out.as_deref(), parallel)?;
            print!("{}", pipeline::ablation_table(&rows));
            let failed = rows.iter().filter(|r| r.report.is_none()).count();
            if failed > 0 {
                return Err(Error::State(format!("{failed} of {} variants failed", rows.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
