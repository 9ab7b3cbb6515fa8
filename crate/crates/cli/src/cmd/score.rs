use std::collections::BTreeSet;

use anyhow::{Context, Result};

use epistrata::forecast::{paired_scores, read_scores_csv, scores_by_dataset, write_scores_csv};

use super::Status;
use crate::config::{ConfigError, RunConfig};
use crate::output::Staging;

pub const KEYS: &[&str] = &["scores", "model_a", "model_b"];

pub fn run(cfg: &RunConfig, out: &Staging) -> Result<Status> {
    let mut rows = Vec::new();
    for p in cfg.paths("scores")? {
        rows.extend(read_scores_csv(&p).with_context(|| format!("reading {}", p.display()))?);
    }
    let models: BTreeSet<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    let pick = |key: &str, k: usize| -> Result<String> {
        match cfg.opt_string(key) {
            Some(m) => Ok(m),
            None if models.len() == 2 => Ok(models.iter().nth(k).expect("two models").to_string()),
            None => Err(ConfigError(format!(
                "set `{key}`: the score files hold {} models ({})",
                models.len(),
                models.iter().copied().collect::<Vec<_>>().join(", ")
            ))
            .into()),
        }
    };
    let (a, b) = (pick("model_a", 0)?, pick("model_b", 1)?);
    for m in [&a, &b] {
        if !models.contains(m.as_str()) {
            return Err(ConfigError(format!("no scores for model `{m}`")).into());
        }
    }
    let table = paired_scores(&a, &scores_by_dataset(&rows, &a)?, &b, &scores_by_dataset(&rows, &b)?)?;
    table.write_csv(&out.path("score_table.csv"))?;
    let mut w = csv::Writer::from_path(out.path("score_differences.csv"))?;
    w.write_record(["dataset", "h", "difference"])?;
    for ph in &table.horizons {
        for (d, v) in table.datasets.iter().zip(&ph.diffs) {
            w.write_record([d.clone(), ph.h.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    write_scores_csv(&out.path("scores_all.csv"), &rows)?;
    if let Some(h1) = table.horizons.first() {
        eprintln!(
            "{a} - {b} over {} datasets at h = 1: {:.4} (se {:.4})",
            table.datasets.len(),
            h1.mean,
            h1.se
        );
    }
    Ok(Status::Ok)
}
