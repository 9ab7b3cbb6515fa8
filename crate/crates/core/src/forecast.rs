//! Posterior-predictive forecasts and log-score comparison.
//!
//! For each retained draw the model is run forward from the last training
//! week, sampling latent layers and intermediate counts. At every horizon the
//! closed-form conditional count distribution is stored alongside the
//! sampled counts, so the predictive density at horizon `h` is a Monte Carlo
//! mixture over draws of a product of cellwise pmfs.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array2, Array4, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use crate::dgp::{next_week_of_year, LatentMode, OutbreakState};
use crate::dist::{betabinom_logpmf, negbin_logpmf};
use crate::error::{Error, Result};
use crate::posterior::{ModelDynamics, Posterior};
use crate::rng::stream;
use crate::sampler::quantile_sorted;
use crate::special::log_mean_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `location` is the mean, `dispersion` is `ψ`.
    NegBin,
    /// `location` is the infection probability, `trials` the susceptibles,
    /// `dispersion` the precision `k`.
    BetaBinom,
}

/// Predictive draws and the conditional distributions they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub family: Family,
    /// Sampled counts, `(draw, horizon, region, age)`.
    pub draws: Array4<u64>,
    pub location: Array4<f64>,
    pub trials: Option<Array4<u64>>,
    pub dispersion: Vec<f64>,
    /// Week of year of each horizon.
    pub week_of_year: Vec<u32>,
}

struct DrawPath {
    y: Vec<Array2<u64>>,
    loc: Vec<Array2<f64>>,
    trials: Vec<Array2<u64>>,
    disp: f64,
}

impl ForecastSet {
    pub fn n_draws(&self) -> usize {
        self.draws.dim().0
    }

    pub fn horizon(&self) -> usize {
        self.draws.dim().1
    }

    fn cell_logpmf(&self, k: usize, h: usize, g: usize, i: usize, y: u64) -> f64 {
        let loc = self.location[(k, h, g, i)];
        match self.family {
            Family::NegBin => negbin_logpmf(y, loc, self.dispersion[k]),
            Family::BetaBinom => {
                let n = self.trials.as_ref().expect("trials")[(k, h, g, i)];
                if n == 0 {
                    return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                betabinom_logpmf(y, n, loc.clamp(1e-300, 1.0 - 1e-12), self.dispersion[k])
            }
        }
    }

    /// Joint log pmf of `truth` under draw `k` at horizon index `h` (0-based).
    pub fn draw_log_density(&self, k: usize, h: usize, truth: ArrayView2<u64>) -> f64 {
        let (_, _, g, i) = self.draws.dim();
        let mut total = 0.0;
        for a in 0..g {
            for b in 0..i {
                total += self.cell_logpmf(k, h, a, b, truth[(a, b)]);
            }
        }
        total
    }

    /// Predictive mean per `(horizon, region, age)` from the conditional means.
    pub fn mean(&self) -> ndarray::Array3<f64> {
        let cond = match self.family {
            Family::NegBin => self.location.clone(),
            Family::BetaBinom => {
                let n = self.trials.as_ref().expect("trials");
                ndarray::Zip::from(&self.location).and(n).map_collect(|p, &n| p * n as f64)
            }
        };
        cond.mean_axis(Axis(0)).expect("at least one draw")
    }

    /// Tidy per-cell summary: `h, region, age, mean, q05, q50, q95`.
    pub fn write_summary_csv(&self, path: &Path, regions: &[String], ages: &[String]) -> Result<()> {
        let (_, hz, g, i) = self.draws.dim();
        let mean = self.mean();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["h", "week_of_year", "region", "age", "mean", "q05", "q50", "q95"])?;
        for h in 0..hz {
            for a in 0..g {
                for b in 0..i {
                    let mut v: Vec<f64> = self.draws.slice(s![.., h, a, b]).iter().map(|&y| y as f64).collect();
                    v.sort_by(f64::total_cmp);
                    w.write_record([
                        (h + 1).to_string(),
                        self.week_of_year[h].to_string(),
                        regions[a].clone(),
                        ages[b].clone(),
                        format!("{}", mean[(h, a, b)]),
                        format!("{}", quantile_sorted(&v, 0.05)),
                        format!("{}", quantile_sorted(&v, 0.5)),
                        format!("{}", quantile_sorted(&v, 0.95)),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Forecasts `horizon` weeks past the end of the posterior's panel, one path
/// per unconstrained draw. Draw `k` uses random stream `(seed, k)`.
pub fn posterior_predictive(
    post: &Posterior,
    draws: &[Vec<f64>],
    horizon: usize,
    seed: u64,
) -> Result<ForecastSet> {
    if draws.is_empty() || horizon == 0 {
        return Err(Error::Config("forecasting needs at least one draw and one horizon".into()));
    }
    let panel = post.panel();
    let t_end = panel.n_weeks();
    let (g, i) = (panel.n_regions(), panel.n_ages());
    let mut woy = Vec::with_capacity(horizon);
    let mut w = *panel.week_of_year().last().expect("nonempty panel");
    for _ in 0..horizon {
        w = next_week_of_year(w);
        woy.push(w);
    }
    let paths: Vec<DrawPath> = draws
        .par_iter()
        .enumerate()
        .map(|(k, x)| -> Result<DrawPath> {
            let mut rng = stream(seed, k as u64);
            let mut path = DrawPath {
                y: Vec::with_capacity(horizon),
                loc: Vec::with_capacity(horizon),
                trials: Vec::new(),
                disp: 0.0,
            };
            match post.dynamics(x)? {
                ModelDynamics::Rare(d) => {
                    path.disp = d.params().psi;
                    let mut prev = panel.week(t_end - 1).to_owned();
                    for (h, &wk) in woy.iter().enumerate() {
                        let r = d.latent(prev.view(), LatentMode::LogNormal, &mut rng);
                        let lam = d.rates(&r, wk);
                        if lam.iter().any(|l| !(l.is_finite() && *l <= crate::dgp::DIVERGENCE_LIMIT)) {
                            return Err(Error::Divergence {
                                week: t_end + h + 1,
                                rate: lam.iter().copied().fold(f64::NAN, f64::max),
                                limit: crate::dgp::DIVERGENCE_LIMIT,
                            });
                        }
                        let y = lam.mapv(|l| crate::dist::negbin_sample(l, path.disp, &mut rng));
                        path.loc.push(lam);
                        path.y.push(y.clone());
                        prev = y;
                    }
                }
                ModelDynamics::Outbreak(d) => {
                    let p = d.params();
                    path.disp = p.k;
                    let gamma = p.gamma;
                    let log_r = *p.log_r.last().expect("at least one multiplier");
                    let mut state = OutbreakState::from_history(panel.counts().view(), gamma);
                    for h in 0..horizon {
                        let x = state.susceptibles(panel.populations());
                        let (y, _, prob) = d.step(&state, log_r, LatentMode::LogNormal, t_end + h + 1, &mut rng)?;
                        state.push(&y, gamma);
                        path.trials.push(x);
                        path.loc.push(prob);
                        path.y.push(y);
                    }
                }
            }
            Ok(path)
        })
        .collect::<Result<_>>()?;

    let kk = paths.len();
    let mut out_y = Array4::zeros((kk, horizon, g, i));
    let mut out_loc = Array4::zeros((kk, horizon, g, i));
    let outbreak = !paths[0].trials.is_empty();
    let mut out_n = if outbreak { Some(Array4::zeros((kk, horizon, g, i))) } else { None };
    for (k, p) in paths.iter().enumerate() {
        for h in 0..horizon {
            out_y.slice_mut(s![k, h, .., ..]).assign(&p.y[h]);
            out_loc.slice_mut(s![k, h, .., ..]).assign(&p.loc[h]);
            if let Some(n) = out_n.as_mut() {
                n.slice_mut(s![k, h, .., ..]).assign(&p.trials[h]);
            }
        }
    }
    Ok(ForecastSet {
        family: if outbreak { Family::BetaBinom } else { Family::NegBin },
        draws: out_y,
        location: out_loc,
        trials: out_n,
        dispersion: paths.iter().map(|p| p.disp).collect(),
        week_of_year: woy,
    })
}

/// Log score at horizon index `h` (0-based): log-mean-exp over draws of the
/// joint cellwise log pmf. `-inf` when every draw gives the truth zero mass.
pub fn log_score(fs: &ForecastSet, truth: ArrayView2<u64>, h: usize) -> Result<f64> {
    if h >= fs.horizon() {
        return Err(Error::Config(format!("horizon {} beyond forecast length {}", h + 1, fs.horizon())));
    }
    let (_, _, g, i) = fs.draws.dim();
    if truth.dim() != (g, i) {
        return Err(Error::Shape(format!("truth {:?}, forecast cells ({g}, {i})", truth.dim())));
    }
    let per: Vec<f64> = (0..fs.n_draws()).map(|k| fs.draw_log_density(k, h, truth)).collect();
    if per.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_mean_exp(&per))
}

/// Log scores for every horizon against `truth` laid out `(h, region, age)`.
pub fn log_scores(fs: &ForecastSet, truth: ArrayView3<u64>) -> Result<Vec<f64>> {
    if truth.dim().0 < fs.horizon() {
        return Err(Error::Config(format!(
            "{} truth weeks for a {}-week forecast",
            truth.dim().0,
            fs.horizon()
        )));
    }
    (0..fs.horizon())
        .map(|h| log_score(fs, truth.index_axis(Axis(0), h), h))
        .collect()
}

/// One tidy score row.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreRow {
    pub scenario: String,
    pub dataset: String,
    pub model: String,
    pub h: usize,
    pub log_score: f64,
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Paired difference summary at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedHorizon {
    pub h: usize,
    pub mean: f64,
    pub se: f64,
    /// Per-dataset differences in dataset order.
    pub diffs: Vec<f64>,
}

/// Model A minus model B, per horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub model_a: String,
    pub model_b: String,
    pub datasets: Vec<String>,
    pub horizons: Vec<PairedHorizon>,
}

/// Mean and standard error `sqrt(Σ(Δ − Δ̄)² / (D(D − 1)))` of paired
/// differences. Both maps must cover the same datasets with equally long
/// per-horizon score vectors.
pub fn paired_scores(
    model_a: &str,
    a: &BTreeMap<String, Vec<f64>>,
    model_b: &str,
    b: &BTreeMap<String, Vec<f64>>,
) -> Result<ScoreTable> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::Validation(format!(
            "models {model_a} and {model_b} were scored on different datasets"
        )));
    }
    if a.is_empty() {
        return Err(Error::Validation("no datasets to compare".into()));
    }
    let hz = a.values().next().map_or(0, Vec::len);
    if a.values().chain(b.values()).any(|v| v.len() != hz) {
        return Err(Error::Shape("datasets have different numbers of horizons".into()));
    }
    let d = a.len() as f64;
    let horizons = (0..hz)
        .map(|h| {
            let diffs: Vec<f64> = a.values().zip(b.values()).map(|(x, y)| x[h] - y[h]).collect();
            let mean = diffs.iter().sum::<f64>() / d;
            let se = if a.len() > 1 {
                (diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d * (d - 1.0))).sqrt()
            } else {
                f64::NAN
            };
            PairedHorizon { h: h + 1, mean, se, diffs }
        })
        .collect();
    Ok(ScoreTable {
        model_a: model_a.to_owned(),
        model_b: model_b.to_owned(),
        datasets: a.keys().cloned().collect(),
        horizons,
    })
}

impl ScoreTable {
    /// `model_a, model_b, h, mean_diff, se, n_datasets`, one row per horizon.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["model_a", "model_b", "h", "mean_diff", "se", "n_datasets"])?;
        for r in &self.horizons {
            w.write_record([
                self.model_a.clone(),
                self.model_b.clone(),
                r.h.to_string(),
                format!("{}", r.mean),
                format!("{}", r.se),
                self.datasets.len().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Groups tidy rows of one model into `dataset → scores by horizon`.
pub fn scores_by_dataset(rows: &[ScoreRow], model: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut map: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.model == model) {
        let key = if r.scenario.is_empty() {
            r.dataset.clone()
        } else {
            format!("{}/{}", r.scenario, r.dataset)
        };
        if map.entry(key.clone()).or_default().insert(r.h, r.log_score).is_some() {
            return Err(Error::Validation(format!("duplicate score for {key}, h = {}", r.h)));
        }
    }
    map.into_iter()
        .map(|(k, hs)| {
            let n = hs.len();
            if hs.keys().copied().ne(1..=n) {
                return Err(Error::Validation(format!("{k}: horizons are not 1..={n}")));
            }
            Ok((k, hs.into_values().collect()))
        })
        .collect()
}
