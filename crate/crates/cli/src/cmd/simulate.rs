use anyhow::{Context, Result};
use ndarray::{Array2, Axis};

use epistrata::dgp::{
    scenario_grid, simulate_outbreak, simulate_rare, LatentField, OutbreakParams,
    RareDiseaseParams, ScenarioGrid,
};
use epistrata::kv::KvFile;
use epistrata::mixing::write_matrix_csv;
use epistrata::panel::{adjacency_orders, grid_adjacency, load_adjacency, save_adjacency};
use epistrata::Variant;

use super::{cell_values, Status};
use crate::config::{ConfigError, RunConfig};
use crate::model;
use crate::output::Staging;

pub const KEYS: &[&str] = &[
    "variant", "regions", "ages", "weeks", "population", "params", "adjacency", "distance",
    "initial", "grid", "thetas", "psis", "replicates", "horizon", "seed",
];

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

pub fn run(cfg: &RunConfig, out: &Staging) -> Result<Status> {
    let variant = model::variant(cfg, "full")?;
    let seed = cfg.parse("seed", 1u64)?;
    let weeks = cfg.parse("weeks", 60usize)?;
    if variant == Variant::Outbreak {
        return outbreak(cfg, out, weeks, seed);
    }
    let params = match cfg.opt_path("params") {
        Some(p) => {
            let kv = KvFile::read(&p).map_err(|e| ConfigError(e.to_string()))?;
            RareDiseaseParams::from_kv(&kv).map_err(|e| ConfigError(e.to_string()))?
        }
        None => RareDiseaseParams::desk(cfg.parse("regions", 3usize)?, cfg.parse("ages", 3usize)?),
    };
    let (g, i) = (params.n_regions(), params.n_ages());
    let (regions, ages) = (labels("R", g), labels("A", i));
    let pops = cell_values(cfg, "population", 2000.0, g, i)?.mapv(|v| v.round() as u64);
    let adj = match cfg.opt_path("adjacency") {
        Some(p) => load_adjacency(&p, &regions).with_context(|| format!("reading {}", p.display()))?,
        None => grid_adjacency(1, g),
    };
    let orders = adjacency_orders(&adj)?;
    save_adjacency(&out.path("adjacency.csv"), &adj, &regions)?;
    params.contact.save(&out.path("contact.csv"), &ages)?;
    out.write("params.txt", &params.to_kv().to_text())?;

    if cfg.bool("grid", false)? {
        let grid = ScenarioGrid {
            thetas: cfg.list("thetas", &[0.05, 5.0, 15.0, 40.0])?,
            psis: cfg.list("psis", &[0.05, 0.5, 1.0, 3.0])?,
            replicates: cfg.parse("replicates", 1usize)?,
            weeks_train: weeks,
            horizon: cfg.parse("horizon", 1usize)?,
            seed,
        };
        let rows = scenario_grid(&params, &pops, &orders, &grid, out.dir())?;
        eprintln!("simulated {} panels", rows.len());
        return Ok(Status::Ok);
    }
    let (panel, latent) = simulate_rare(&params, &pops, &orders, weeks, variant, seed)?;
    panel.save(out.dir())?;
    write_latent(out, &latent, &regions, &ages)?;
    eprintln!("simulated {weeks} weeks on {g} regions x {i} age groups");
    Ok(Status::Ok)
}

fn write_latent(out: &Staging, latent: &LatentField, regions: &[String], ages: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(out.path("latent.csv"))?;
    w.write_record(["t", "region", "age", "r"])?;
    for (t, week) in latent.0.axis_iter(Axis(0)).enumerate() {
        for ((g, i), r) in week.indexed_iter() {
            w.write_record([(t + 1).to_string(), regions[g].clone(), ages[i].clone(), r.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn outbreak(cfg: &RunConfig, out: &Staging, weeks: usize, seed: u64) -> Result<Status> {
    let g = cfg.parse("regions", 3usize)?;
    let params = match cfg.opt_path("params") {
        Some(p) => {
            let kv = KvFile::read(&p).map_err(|e| ConfigError(e.to_string()))?;
            OutbreakParams::from_kv(&kv, g).map_err(|e| ConfigError(e.to_string()))?
        }
        None => OutbreakParams::desk(g, cfg.parse("ages", 3usize)?, weeks),
    };
    let i = params.n_ages();
    let (regions, ages) = (labels("R", g), labels("A", i));
    let pops = cell_values(cfg, "population", 2000.0, g, i)?.mapv(|v| v.round() as u64);
    let d = match model::distance(cfg, g)? {
        Some(d) => d,
        // a line of regions one unit apart, half a unit within each
        None => Array2::from_shape_fn((g, g), |(a, b)| if a == b { 0.5 } else { a.abs_diff(b) as f64 }),
    };
    let initial = cell_values(cfg, "initial", 2.0, g, i)?.mapv(|v| v.round() as u64);
    let (panel, latent) = simulate_outbreak(&params, &pops, &d, weeks, &initial, seed)?;
    panel.save(out.dir())?;
    write_matrix_csv(&out.path("distance.csv"), &d, &regions)?;
    out.write("params.txt", &params.to_kv().to_text())?;
    write_latent(out, &latent, &regions, &ages)?;
    eprintln!("simulated an outbreak of {weeks} weeks on {g} regions x {i} age groups");
    Ok(Status::Ok)
}
