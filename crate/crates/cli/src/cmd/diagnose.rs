use anyhow::Result;

use epistrata::DrawSet;

use super::{max_rhat, Status};
use crate::config::RunConfig;
use crate::output::Staging;

pub const KEYS: &[&str] = &["draws", "rhat_threshold"];

pub fn run(cfg: &RunConfig, out: &Staging) -> Result<Status> {
    let mut dir = cfg.path("draws")?;
    // accept a fit directory as well as its draws subdirectory
    if dir.join("draws").is_dir() {
        dir = dir.join("draws");
    }
    let draws = DrawSet::read_dir(&dir)?;
    let threshold = cfg.parse("rhat_threshold", 1.01f64)?;
    let summary = draws.summary();
    draws.write_summary_csv(&out.path("summary.csv"))?;
    let rhat = max_rhat(&summary);
    let min_ess = |f: fn(&epistrata::sampler::ParamSummary) -> f64| {
        summary.iter().map(f).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min)
    };
    println!("chains {} draws {} parameters {}", draws.n_chains(), draws.n_draws(), draws.dim());
    println!("max_rhat {rhat:.4}");
    println!("min_ess_bulk {:.1}", min_ess(|s| s.ess_bulk));
    println!("min_ess_tail {:.1}", min_ess(|s| s.ess_tail));
    println!("divergences {}", draws.divergences());
    let mut flagged: Vec<_> = summary.iter().filter(|s| s.rhat > threshold).collect();
    flagged.sort_by(|a, b| b.rhat.total_cmp(&a.rhat));
    println!("flagged {} of {} above {threshold}", flagged.len(), summary.len());
    for s in flagged.iter().take(10) {
        println!("  {} rhat {:.4}", s.name, s.rhat);
    }
    Ok(if rhat > threshold { Status::ConvergenceWarning } else { Status::Ok })
}
