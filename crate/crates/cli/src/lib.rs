//! Command-line pipeline: `synth -> ingest -> train -> eval`, plus `predict`
//! and `features`.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod synth;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use reefnet_core::exec::{init_workers, Exec};

use crate::commands::{Context, FoldArg};
use crate::config::{extract_overrides, RunConfig};
pub use crate::error::{CliError, ErrorKind};

#[derive(Debug, Parser)]
#[command(
    name = "reefnet",
    version,
    about = "Sparse point classification of benthic images with hybrid patches and a small CNN",
    after_help = "Any configuration key can be set on the command line as --section.key VALUE,\n\
                  for example --seed.init 5 --norm.kind zscore --train.epochs 20.\n\
                  Log verbosity is read from REEFNET_LOG (error, info, debug)."
)]
pub struct Cli {
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory for artifacts (default: ./run; `features` writes next to its input).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for patching, features and per-sample gradients.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the three-class synthetic mosaic dataset.
    Synth {
        /// Destination directory (default: the run directory).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Validate annotations, balance classes and write the split manifest and catalog.
    Ingest,
    /// Train on the manifest's train fold; writes the model and epoch history.
    Train,
    /// Evaluate a model; writes the metrics report, confusion CSV and heatmap.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        fold: FoldArg,
    },
    /// Classify points of one image.
    Predict {
        image: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Point to classify as ROW,COL; repeatable.
        #[arg(long = "at", value_parser = commands::parse_location)]
        at: Vec<(usize, usize)>,
        /// CSV of `row,col` lines.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Write ZCA, WLD and phase congruency maps of an image.
    Features { image: PathBuf },
}

pub const DEFAULT_OUT: &str = "run";

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let (rest, overrides) = extract_overrides(args.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::config(e.render().to_string().trim_end())),
    };
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::config("--workers must be at least 1"));
        }
        if !init_workers(n) {
            log::debug!("worker pool already initialised; --workers {n} ignored");
        }
    }
    if let Command::Features { image } = &cli.command {
        let written = commands::cmd_features(&config, image, cli.out.as_deref())?;
        for p in written {
            println!("{}", p.display());
        }
        return Ok(());
    }
    let ctx = Context {
        config,
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        exec: Exec::Parallel,
    };
    match &cli.command {
        Command::Synth { dir } => commands::cmd_synth(&ctx, dir.as_deref()),
        Command::Ingest => commands::cmd_ingest(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::Eval { model, fold } => commands::cmd_eval(&ctx, model.as_deref(), *fold),
        Command::Predict {
            image,
            model,
            at,
            points,
        } => commands::cmd_predict(&ctx, model.as_deref(), image, at.clone(), points.as_deref()),
        Command::Features { .. } => unreachable!("handled above"),
    }
}

/// Installs the stderr logger, filtered by `REEFNET_LOG` (default `info`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("REEFNET_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}
