mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fedecg::metrics::Scenario;

use crate::config::{Origin, RawConfig, RunConfig};

/// Local, centralized and federated ECG rhythm classification runs.
///
/// Any configuration key can also be given as `--<key> <value>`.
#[derive(Parser)]
#[command(name = "fedecg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on the union of all client shards.
    Central(Common),
    /// Train one independent model per client shard.
    Local(Common),
    /// Train a shared model over the simulated federation.
    Federated(Common),
    /// Write the synthetic benchmark as a manifest and signal files.
    GenData(Common),
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Scale analytic gradients by 1 + this factor (negative control).
        #[arg(long, hide = true, default_value_t = 0.0)]
        sabotage_backward: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// `gen-data` and `gradcheck` do not read a dataset; they default it to the
/// synthetic benchmark.
fn resolve(common: &Common, implicit_synth: bool) -> Result<RunConfig> {
    let mut raw = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RawConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RawConfig::default(),
    };
    if implicit_synth && !raw.has("dataset") {
        raw.set("dataset", "synth", Origin::Default)?;
    }
    for assignment in &common.set {
        raw.set_override(assignment)?;
    }
    if let Some(seed) = common.seed {
        raw.set("seed", &seed.to_string(), Origin::Override)?;
    }
    Ok(raw.resolve()?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let (scenario, common) = match &cli.command {
        Command::Central(c) => (Scenario::Central, c),
        Command::Local(c) => (Scenario::Local, c),
        Command::Federated(c) => (Scenario::Federated, c),
        Command::GenData(c) => {
            commands::gen_data(&resolve(c, true)?, &c.out)?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Gradcheck { common, sabotage_backward } => {
            let report = commands::gradcheck(&resolve(common, true)?, *sabotage_backward)?;
            if report.max_rel_err < commands::GRADCHECK_TOL {
                return Ok(ExitCode::SUCCESS);
            }
            eprintln!("gradient check failed: {:.3e} >= {:e}", report.max_rel_err, commands::GRADCHECK_TOL);
            return Ok(ExitCode::from(1));
        }
    };
    commands::run_training(scenario, &resolve(common, false)?, &common.out)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = config::rewrite_key_flags(std::env::args().collect(), &["seed", "out", "config", "set"]);
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
