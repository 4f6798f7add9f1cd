//! Argument parsing and dispatch for the `densenet` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::error::{exit, Result};

#[derive(Debug, Parser)]
#[command(name = "densenet", version, about = "Densely connected convolutional acoustic frame classifier")]
pub struct Cli {
    /// key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for initialization, shuffling, holdout and synthetic data.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Make every output byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the stage table and parameter counts.
    Inspect {
        /// Tab-separated output, one stage per line.
        #[arg(long)]
        machine: bool,
    },
    /// Compute filterbank features for every manifest entry.
    Featurize,
    /// Train a model and write its checkpoint and metrics log.
    Train,
    /// Report frame accuracy of a checkpoint on a labeled archive.
    Eval,
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Random instances per layer type.
        #[arg(long, default_value_t = 10)]
        instances: usize,
    },
    /// Write an archive of labeled synthetic frames.
    Synthdata,
}

impl Cli {
    /// File first, then `--set` in order, then the dedicated flags.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if self.deterministic {
            cfg.set("deterministic", "true")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = cli.resolve_config()?;
    match cli.command {
        Command::Inspect { machine } => commands::inspect(&cfg, machine, out),
        Command::Featurize => commands::featurize(&cfg, out),
        Command::Train => commands::train(&cfg, out).map(drop),
        Command::Eval => commands::eval(&cfg, out).map(drop),
        Command::Gradcheck { instances } => commands::gradcheck(&cfg, instances, out).map(drop),
        Command::Synthdata => commands::synthdata(&cfg, out),
    }
}

/// Runs one invocation and returns the process exit code. Errors go to
/// `err`, reports to `out`.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
