use anyhow::Result;

use epistrata::sampler::sample;
use epistrata::{LogDensity, PanelData, SamplerConfig};

use super::{max_rhat, Status};
use crate::config::{ConfigError, RunConfig};
use crate::model::{self, MODEL_KEYS};
use crate::output::Staging;

pub const FIT_KEYS: &[&str] = &[
    "panel", "train_weeks", "chains", "warmup", "samples", "target_accept", "max_treedepth",
    "thin", "init_radius", "seed", "rhat_threshold",
];

pub fn keys() -> Vec<&'static str> {
    FIT_KEYS.iter().chain(MODEL_KEYS).copied().collect()
}

/// The training panel named by a fit configuration.
pub fn training_panel(cfg: &RunConfig) -> Result<(PanelData, PanelData)> {
    let dir = cfg.path("panel")?;
    let full = PanelData::load_dir(&dir)?;
    let train = match cfg.opt_parse::<usize>("train_weeks")? {
        Some(n) if n < 2 || n > full.n_weeks() => {
            return Err(ConfigError(format!("train_weeks = {n} outside 2..={}", full.n_weeks())).into())
        }
        Some(n) => full.slice_weeks(0, n)?,
        None => full.clone(),
    };
    Ok((full, train))
}

pub fn run(cfg: &RunConfig, out: &Staging) -> Result<Status> {
    let (_, panel) = training_panel(cfg)?;
    let post = model::build(cfg, panel)?;
    let d = SamplerConfig::default();
    let sc = SamplerConfig {
        chains: cfg.parse("chains", d.chains)?,
        warmup: cfg.parse("warmup", d.warmup)?,
        samples: cfg.parse("samples", d.samples)?,
        target_accept: cfg.parse("target_accept", d.target_accept)?,
        max_treedepth: cfg.parse("max_treedepth", d.max_treedepth)?,
        seed: cfg.parse("seed", d.seed)?,
        init_radius: cfg.parse("init_radius", d.init_radius)?,
        thin: cfg.parse("thin", d.thin)?,
    };
    sc.validate().map_err(|e| ConfigError(e.to_string()))?;
    let threshold = cfg.parse("rhat_threshold", 1.01f64)?;
    log::info!("sampling {} parameters with {} chains", post.dim(), sc.chains);
    let raw = sample(&post, &sc, post.names().to_vec(), None)?;
    // stored on the natural scale so summaries read directly
    let draws = raw.map_draws(post.names().to_vec(), |x| post.constrain(x));
    draws.write_dir(&out.path("draws"))?;
    draws.write_summary_csv(&out.path("summary.csv"))?;
    out.write("prior.txt", &post.prior().to_text())?;
    let rhat = max_rhat(&draws.summary());
    let div = draws.divergences();
    eprintln!(
        "{} x {} draws of {} parameters; max R-hat {rhat:.4}; {div} divergent transitions",
        draws.n_chains(),
        draws.n_draws(),
        draws.dim()
    );
    if rhat > threshold {
        eprintln!("warning: max R-hat {rhat:.4} exceeds {threshold}");
        return Ok(Status::ConvergenceWarning);
    }
    Ok(Status::Ok)
}
