use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cotsim::config::{ExperimentConfig, ExperimentKind};
use cotsim::experiments::{self, RunReport};
use cotsim::{Error, Result};

#[derive(Parser)]
#[command(name = "cotsim", version, about = "CoT and ICL experiments on a one-layer attention model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit with status 2 if any acceptance check fails.
    #[arg(long = "assert", global = true)]
    assert_checks: bool,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the training history interval.
    #[arg(long, global = true)]
    log_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named by the config's `kind`.
    Run { config: PathBuf },
    /// Run a `cot_sweep` or `icl_sweep` config.
    Sweep { config: PathBuf },
    /// Train once and write the history and checkpoints.
    Train { config: PathBuf },
    /// Print the two-pattern worked example.
    Example1,
    /// Compare the analytic gradient with finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>, kind: Option<ExperimentKind>, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = kind {
        cfg.kind = k;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(l) = common.log_every {
        cfg.training.log_every = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<RunReport> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let c = &cli.common;
    match &cli.command {
        Command::Run { config } => experiments::run_experiment(&load(Some(config), None, c)?),
        Command::Sweep { config } => {
            let cfg = load(Some(config), None, c)?;
            if !cfg.kind.is_sweep() {
                return Err(Error::Config(format!(
                    "sweep needs kind = cot_sweep or icl_sweep, got {}",
                    cfg.kind.name()
                )));
            }
            experiments::run_experiment(&cfg)
        }
        Command::Train { config } => experiments::run_training(&load(Some(config), None, c)?),
        Command::Example1 => {
            let mut cfg = load(None, Some(ExperimentKind::Example1), c)?;
            if c.out.is_none() {
                cfg.output_dir = PathBuf::from("out/example1");
            }
            experiments::run_experiment(&cfg)
        }
        Command::Gradcheck { config } => {
            let mut cfg = load(config.as_ref(), Some(ExperimentKind::Gradcheck), c)?;
            if config.is_none() && c.out.is_none() {
                cfg.output_dir = PathBuf::from("out/gradcheck");
            }
            experiments::run_experiment(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            for m in &report.messages {
                print!("{m}");
                if !m.ends_with('\n') {
                    println!();
                }
            }
            for chk in &report.checks {
                let mark = if chk.passed { "PASS" } else { "FAIL" };
                println!("[{mark}] {}: {}", chk.name, chk.detail);
            }
            if cli.common.assert_checks && !report.passed() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
