//! Builds a posterior from the model keys shared by `fit`, `forecast` and
//! `prior-check`.

use anyhow::{Context, Result};
use ndarray::Array2;

use epistrata::mixing::{read_matrix_csv, ContactMatrix};
use epistrata::panel::{adjacency_orders, grid_adjacency, load_adjacency, validate_distance};
use epistrata::posterior::ModelSpec;
use epistrata::{PanelData, Posterior, PriorSpec, Variant};

use crate::config::{ConfigError, RunConfig};

pub const MODEL_KEYS: &[&str] = &["variant", "prior", "adjacency", "known_contact", "distance"];

pub fn variant(cfg: &RunConfig, default: &str) -> Result<Variant> {
    let v = cfg.string("variant", default);
    Ok(v.parse::<Variant>().map_err(|e| ConfigError(e.to_string()))?)
}

/// A preset name or a prior file.
pub fn prior(cfg: &RunConfig, variant: Variant, n_ages: usize) -> Result<PriorSpec> {
    let default = if variant == Variant::Outbreak { "outbreak" } else { "simstudy" };
    let name = cfg.string("prior", default);
    if matches!(name.as_str(), "simstudy" | "analysis" | "outbreak") {
        return Ok(PriorSpec::preset(&name, variant, n_ages).map_err(|e| ConfigError(e.to_string()))?);
    }
    let path = cfg.path("prior")?;
    Ok(PriorSpec::read(&path).map_err(|e| ConfigError(e.to_string()))?)
}

/// Adjacency orders from `adjacency`, or a chain `R1 – R2 – …` by default.
pub fn orders(cfg: &RunConfig, regions: &[String]) -> Result<Array2<u32>> {
    let adj = match cfg.opt_path("adjacency") {
        Some(p) => load_adjacency(&p, regions).with_context(|| format!("reading {}", p.display()))?,
        None => grid_adjacency(1, regions.len()),
    };
    Ok(adjacency_orders(&adj)?)
}

pub fn distance(cfg: &RunConfig, n_regions: usize) -> Result<Option<Array2<f64>>> {
    let Some(p) = cfg.opt_path("distance") else { return Ok(None) };
    let (_, d) = read_matrix_csv(&p).with_context(|| format!("reading {}", p.display()))?;
    if d.nrows() != n_regions {
        return Err(ConfigError(format!("distance matrix is {0}x{0} for {n_regions} regions", d.nrows())).into());
    }
    validate_distance(&d)?;
    Ok(Some(d))
}

pub fn build(cfg: &RunConfig, panel: PanelData) -> Result<Posterior> {
    let variant = variant(cfg, "full")?;
    let prior = prior(cfg, variant, panel.n_ages())?;
    let mut spec = ModelSpec::new(variant);
    match variant {
        Variant::Outbreak => {
            let d = distance(cfg, panel.n_regions())?
                .ok_or_else(|| ConfigError("the outbreak variant needs `distance`".into()))?;
            spec = spec.with_distance(d);
        }
        Variant::Naive => {}
        Variant::Reduced | Variant::Full => {
            spec = spec.with_orders(orders(cfg, panel.regions())?);
            if let Some(p) = cfg.opt_path("known_contact") {
                let (_, c) = ContactMatrix::load(&p).with_context(|| format!("reading {}", p.display()))?;
                spec = spec.with_known_contact(c.matrix().clone());
            } else if variant == Variant::Reduced {
                return Err(ConfigError("the reduced variant needs `known_contact`".into()).into());
            }
        }
    }
    Ok(Posterior::new(spec, panel, prior)?)
}
