//! The `omapl` command line: dataset generation, training, evaluation,
//! oracle verification and run reports.

pub mod commands;
pub mod config;
pub mod data;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use omapl::oracles::{Fault, VerifyOptions};
use omapl::trainer::Method;

use crate::commands::{cmd_eval, cmd_gen, cmd_report, cmd_train, cmd_verify, find_metrics};
use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "omapl", version, about = "Learn cooperative gridworld policies from pairwise trajectory preferences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the run seed (dataset, training and evaluation).
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Run directory; relative config paths resolve against it.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out tiered behavior policies and write labeled preference pairs.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a method on the run's dataset; writes a checkpoint and metrics CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// omapl, bc, iipl or ipl_vdn [default: from config, else omapl]
        #[arg(long, value_name = "NAME")]
        method: Option<Method>,
        /// Overrides the number of training steps.
        #[arg(long, value_name = "N")]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint; prints a JSON summary.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Method whose checkpoint to load [default: from config, else omapl]
        #[arg(long, value_name = "NAME")]
        method: Option<Method>,
        /// Checkpoint file [default: the config's checkpoint path]
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Run the exact oracle suite; prints a JSON report, exits 3 on any failure.
    Verify {
        /// Seed for the random models and probes.
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
        /// Directory to also write verify_report.json into.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Random models per oracle check.
        #[arg(long, value_name = "N", default_value_t = 50)]
        models: usize,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Merge metrics CSVs into a markdown comparison table.
    Report {
        /// Directory scanned for metrics*.csv when no files are given.
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
        /// Metrics files to merge.
        files: Vec<PathBuf>,
    },
}

/// Marks errors that should exit with the usage status.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn load_config(common: &Common, method: Option<Method>) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| Usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(m) = method {
        cfg.train.method = m;
    }
    cfg.validate().map_err(|e| Usage(format!("invalid config: {e:#}")))?;
    Ok(cfg)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> anyhow::Result<i32> {
    match cli.command {
        Command::Gen { common } => {
            let cfg = load_config(&common, None)?;
            let s = cmd_gen(&cfg, &common.out)?;
            writeln!(stdout, "wrote {} pairs to {}", s.n_pairs, s.path.display())?;
            for (tier, (plus, minus)) in &s.tiers {
                writeln!(stdout, "  {tier:<7} preferred {plus:>6}  non-preferred {minus:>6}")?;
            }
        }
        Command::Train { common, method, steps } => {
            let mut cfg = load_config(&common, method)?;
            if let Some(n) = steps {
                cfg.train.steps = n;
            }
            let s = cmd_train(&cfg, &common.out)?;
            writeln!(stdout, "metrics: {}", s.metrics_path.display())?;
            writeln!(stdout, "checkpoint: {}", s.checkpoint_path.display())?;
        }
        Command::Eval { common, method, checkpoint } => {
            let cfg = load_config(&common, method)?;
            let r = cmd_eval(&cfg, &common.out, checkpoint.as_deref())?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&r)?)?;
        }
        Command::Verify { seed, out, models, inject_fault } => {
            let opts = VerifyOptions {
                seed,
                n_models: models,
                fault: inject_fault.then_some(Fault::DropCorrection),
                ..VerifyOptions::default()
            };
            let report = cmd_verify(&opts)?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("verify_report.json"), format!("{json}\n"))?;
            }
            writeln!(stdout, "{json}")?;
            if report.iter().any(|r| !r.pass) {
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Report { out, files } => {
            let files = if files.is_empty() { find_metrics(&out)? } else { files };
            write!(stdout, "{}", cmd_report(&files)?)?;
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command, returning
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
