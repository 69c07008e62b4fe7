//! `corbin`: bounds, exact MSE surfaces, mean-estimation and federated
//! simulations. Logging verbosity comes from `CORBIN_LOG`.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use corbin::experiment::{run, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(
    name = "corbin",
    version,
    about = "Correlated binary quantization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form MSE, privacy and dropout bounds as JSON.
    Bounds(Common),
    /// Exact pair MSE over the clipped square as CSV.
    MseSurface(Common),
    /// Monte-Carlo mean estimation as CSV.
    Dme(Common),
    /// Federated training, one CSV row per round.
    Flsim(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// KEY=VAL, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VAL")]
    overrides: Vec<String>,
}

fn load(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(kind, &text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::empty(kind),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool> {
    let (kind, common) = match &cli.command {
        Command::Bounds(c) => (ExperimentKind::Bounds, c),
        Command::MseSurface(c) => (ExperimentKind::MseSurface, c),
        Command::Dme(c) => (ExperimentKind::Dme, c),
        Command::Flsim(c) => (ExperimentKind::Flsim, c),
    };
    let cfg = load(kind, common)?;
    log::info!("running {} with seed {}", kind.as_str(), cfg.seed()?);
    let outcome = run(&cfg)?;
    match &common.out {
        Some(path) => {
            fs::write(path, &outcome.body).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout()
            .lock()
            .write_all(outcome.body.as_bytes())?,
    }
    for f in &outcome.failures {
        eprintln!("assertion failed: {f}");
    }
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CORBIN_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
