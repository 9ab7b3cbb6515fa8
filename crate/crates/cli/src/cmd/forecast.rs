use anyhow::{bail, Context, Result};
use ndarray::s;

use epistrata::forecast::{log_scores, posterior_predictive, write_scores_csv, ScoreRow};
use epistrata::{DrawSet, PanelData};

use super::{fit, Status, RESOLVED};
use crate::config::{ConfigError, RunConfig};
use crate::model;
use crate::output::Staging;

pub const KEYS: &[&str] = &[
    "fit", "panel", "horizon", "max_draws", "score", "scenario", "dataset", "model", "seed",
];

pub fn run(cfg: &RunConfig, out: &Staging) -> Result<Status> {
    let fit_dir = cfg.path("fit")?;
    let fit_cfg_path = fit_dir.join(RESOLVED);
    let fit_keys = fit::keys();
    let fit_cfg = RunConfig::load(Some(&fit_cfg_path), &fit_keys)
        .with_context(|| format!("reading the fit configuration {}", fit_cfg_path.display()))?;
    let (fit_panel, train) = fit::training_panel(&fit_cfg)?;
    let truth = match cfg.opt_path("panel") {
        Some(p) => PanelData::load_dir(&p)?,
        None => fit_panel,
    };
    let t_end = train.n_weeks();
    let post = model::build(&fit_cfg, train)?;

    let horizon = cfg.parse("horizon", 1usize)?;
    if horizon == 0 {
        return Err(ConfigError("horizon must be positive".into()).into());
    }
    let score = cfg.bool("score", false)?;
    if score && truth.n_weeks() < t_end + horizon {
        return Err(ConfigError(format!(
            "scoring {horizon} weeks past week {t_end} needs {} weeks of truth, the panel has {}",
            t_end + horizon,
            truth.n_weeks()
        ))
        .into());
    }
    let draws = DrawSet::read_dir(&fit_dir.join("draws"))?;
    if draws.names != post.names() {
        bail!("draws in {} do not match the fitted model's parameters", fit_dir.display());
    }
    let mut pooled = draws.pooled();
    if let Some(m) = cfg.opt_parse::<usize>("max_draws")? {
        if m == 0 {
            return Err(ConfigError("max_draws must be positive".into()).into());
        }
        if m < pooled.len() {
            let n = pooled.len();
            pooled = (0..m).map(|k| pooled[k * n / m].clone()).collect();
        }
    }
    let unconstrained: Vec<Vec<f64>> =
        pooled.iter().map(|v| post.unconstrain(v)).collect::<epistrata::Result<_>>()?;
    let seed = cfg.parse("seed", 1u64)?;
    let fs = posterior_predictive(&post, &unconstrained, horizon, seed)?;
    let panel = post.panel();
    fs.write_summary_csv(&out.path("forecast_summary.csv"), panel.regions(), panel.ages())?;
    eprintln!("forecast {horizon} weeks from {} posterior draws", fs.n_draws());

    if score {
        let truth_window = truth.counts().slice(s![t_end..t_end + horizon, .., ..]);
        let ls = log_scores(&fs, truth_window)?;
        let default_dataset = fit_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let scenario = cfg.string("scenario", "");
        let dataset = cfg.string("dataset", &default_dataset);
        let model = cfg.string("model", post.variant().name());
        let rows: Vec<ScoreRow> = ls
            .iter()
            .enumerate()
            .map(|(h, v)| ScoreRow {
                scenario: scenario.clone(),
                dataset: dataset.clone(),
                model: model.clone(),
                h: h + 1,
                log_score: *v,
            })
            .collect();
        write_scores_csv(&out.path("scores.csv"), &rows)?;
        eprintln!("one-week-ahead log score {:.4}", ls[0]);
    }
    Ok(Status::Ok)
}
