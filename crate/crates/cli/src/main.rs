//! `uvot`: batch front end for underwater frame enhancement, enhancement
//! network training, tracker evaluation, pseudo-ground-truth voting and
//! dataset validation. Outputs are JSON, JSONL and CSV only.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigFile, EnhanceOpts, EvalOpts, RunContext, TrainOpts, ValidateOpts, VoteOpts};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "uvot",
    version,
    about = "Underwater tracking benchmark toolkit"
)]
struct Cli {
    /// Seed for every randomized step [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every logical core [default: 0].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, created if missing [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML file with global keys and one table per command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enhance every frame of a directory, keeping file names.
    Enhance(EnhanceOpts),
    /// Train the enhancement network on (raw, target) pairs.
    Train(TrainOpts),
    /// One-pass evaluation of tracker results against a dataset manifest.
    Eval(EvalOpts),
    /// Per-frame and per-video majority vote over expert method choices.
    Vote(VoteOpts),
    /// Check a dataset manifest against the sequence rules; exits 1 on any violation.
    Validate(ValidateOpts),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Enhance(_) => "enhance",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Vote(_) => "vote",
            Command::Validate(_) => "validate",
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let requested = cli.threads.or(file.threads).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(requested)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let ctx = RunContext {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        threads: rayon::current_num_threads(),
        out: cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
    };
    let name = cli.command.name();
    macro_rules! dispatch {
        ($opts:expr, $section:expr, $module:ident) => {{
            let settings = $opts.resolve($section)?;
            std::fs::create_dir_all(&ctx.out)?;
            config::write_snapshot(&ctx, name, &settings)?;
            commands::$module::run(&settings, &ctx)
        }};
    }
    match cli.command {
        Command::Enhance(o) => dispatch!(o, file.enhance, enhance).map(|()| true),
        Command::Train(o) => dispatch!(o, file.train, train).map(|()| true),
        Command::Eval(o) => dispatch!(o, file.eval, eval).map(|()| true),
        Command::Vote(o) => dispatch!(o, file.vote, vote).map(|()| true),
        Command::Validate(o) => dispatch!(o, file.validate, validate),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(1)
        }
    }
}
