mod cmd;
mod config;
mod model;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cmd::{Status, RESOLVED};
use config::{ConfigError, RunConfig};
use output::Staging;

/// Simulate, fit, forecast and score latent-infectiousness models on
/// region-by-age case-count panels.
#[derive(Parser)]
#[command(name = "epistrata", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Key-value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate a panel, or a grid of panels.
    Simulate,
    /// Sample the posterior of a model given a panel.
    Fit,
    /// Posterior predictive forecasts from a fit, optionally scored.
    Forecast,
    /// Paired comparison of log scores between two models.
    Score,
    /// Prior summaries and prior predictive weekly totals.
    PriorCheck,
    /// Convergence diagnostics for stored draws.
    Diagnose,
}

impl Command {
    fn keys(self) -> Vec<&'static str> {
        match self {
            Command::Simulate => cmd::simulate::KEYS.to_vec(),
            Command::Fit => cmd::fit::keys(),
            Command::Forecast => cmd::forecast::KEYS.to_vec(),
            Command::Score => cmd::score::KEYS.to_vec(),
            Command::PriorCheck => cmd::prior_check::keys(),
            Command::Diagnose => cmd::diagnose::KEYS.to_vec(),
        }
    }

    fn run(self, cfg: &RunConfig, out: &Staging) -> Result<Status> {
        match self {
            Command::Simulate => cmd::simulate::run(cfg, out),
            Command::Fit => cmd::fit::run(cfg, out),
            Command::Forecast => cmd::forecast::run(cfg, out),
            Command::Score => cmd::score::run(cfg, out),
            Command::PriorCheck => cmd::prior_check::run(cfg, out),
            Command::Diagnose => cmd::diagnose::run(cfg, out),
        }
    }
}

fn execute(cli: &Cli) -> Result<Status> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let keys = cli.command.keys();
    let mut cfg = RunConfig::load(cli.config.as_deref(), &keys)?;
    if let Some(s) = cli.seed {
        if !keys.contains(&"seed") {
            return Err(ConfigError("this command takes no seed".into()).into());
        }
        cfg.override_value("seed", s.to_string());
    }
    let out = Staging::new(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let status = cli.command.run(&cfg, &out)?;
    out.write(RESOLVED, &cfg.resolved_text())?;
    for p in out.commit()? {
        log::info!("wrote {}", p.display());
    }
    Ok(status)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() || matches!(cause.downcast_ref(), Some(epistrata::Error::Config(_))) {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ConvergenceWarning) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
