pub mod diagnose;
pub mod fit;
pub mod forecast;
pub mod prior_check;
pub mod score;
pub mod simulate;

use anyhow::Result;
use ndarray::Array2;

use epistrata::sampler::ParamSummary;

use crate::config::{ConfigError, RunConfig};

/// Name of the resolved configuration every command writes.
pub const RESOLVED: &str = "config.resolved.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    ConvergenceWarning,
}

/// A per-cell value: one number for every cell or `G·I` numbers in
/// region-major order.
pub fn cell_values(cfg: &RunConfig, key: &str, default: f64, g: usize, i: usize) -> Result<Array2<f64>> {
    let v = cfg.list(key, &[default])?;
    match v.len() {
        1 => Ok(Array2::from_elem((g, i), v[0])),
        n if n == g * i => Ok(Array2::from_shape_vec((g, i), v)?),
        n => Err(ConfigError(format!("`{key}` has {n} values; expected 1 or {}", g * i)).into()),
    }
}

/// Largest finite R-hat, NaN when none is finite.
pub fn max_rhat(summary: &[ParamSummary]) -> f64 {
    summary.iter().map(|s| s.rhat).filter(|r| r.is_finite()).fold(f64::NAN, f64::max)
}
