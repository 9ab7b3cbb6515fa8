use anyhow::Result;
use ndarray::{Array3, Axis};

use epistrata::forecast::posterior_predictive;
use epistrata::mixing::{normalize_contact, sample_contact_prior};
use epistrata::posterior::Prior;
use epistrata::rng::{mix_seed, stream};
use epistrata::sampler::quantile_sorted;
use epistrata::{ContactPriorHyper, Error, PanelData, Variant};

use super::{cell_values, Status};
use crate::config::{ConfigError, RunConfig};
use crate::model::{self, MODEL_KEYS};
use crate::output::Staging;

const OWN_KEYS: &[&str] = &["regions", "ages", "draws", "predictive_draws", "weeks", "population", "initial", "seed"];

pub fn keys() -> Vec<&'static str> {
    OWN_KEYS.iter().chain(MODEL_KEYS).copied().collect()
}

/// `[mean, q05, q50, q95]` of unsorted values.
fn describe(mut v: Vec<f64>) -> [f64; 4] {
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    [mean, quantile_sorted(&v, 0.05), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.95)]
}

fn row(label: Vec<String>, stats: [f64; 4]) -> Vec<String> {
    label.into_iter().chain(stats.iter().map(f64::to_string)).collect()
}

pub fn run(cfg: &RunConfig, out: &Staging) -> Result<Status> {
    let variant = model::variant(cfg, "full")?;
    let g = cfg.parse("regions", 3usize)?;
    let i = cfg.parse("ages", 3usize)?;
    let n_draws = cfg.parse("draws", 100_000usize)?;
    let n_pred = cfg.parse("predictive_draws", 200usize)?;
    let weeks = cfg.parse("weeks", 52usize)?;
    let seed = cfg.parse("seed", 1u64)?;
    if g == 0 || i < 2 || n_draws == 0 || weeks == 0 {
        return Err(ConfigError("need regions >= 1, ages >= 2, draws >= 1 and weeks >= 1".into()).into());
    }
    let pops = cell_values(cfg, "population", 2000.0, g, i)?.mapv(|v| v.round() as u64);
    // outbreaks need seed cases to go anywhere
    let start = if variant == Variant::Outbreak { 2.0 } else { 0.0 };
    let initial = cell_values(cfg, "initial", start, g, i)?.mapv(|v| v.round() as u64);
    let mut counts = Array3::zeros((2, g, i));
    for mut week in counts.axis_iter_mut(Axis(0)) {
        week.assign(&initial);
    }
    let template = PanelData::from_counts(counts, pops, 1)?;
    let post = model::build(cfg, template)?;
    let mut rng = stream(seed, 0);

    if let Some(Prior::ContactGamma { alpha_diag, alpha_off, scale }) = post.prior().get("contact") {
        let hyper = ContactPriorHyper::new(*alpha_diag, *alpha_off, *scale)?;
        let mut w_draws = vec![Vec::with_capacity(n_draws); i * i];
        for _ in 0..n_draws {
            let w = normalize_contact(&sample_contact_prior(&hyper, i, &mut rng)?);
            for (k, v) in w.matrix().iter().enumerate() {
                w_draws[k].push(*v);
            }
        }
        let mut wr = csv::Writer::from_path(out.path("contact_prior.csv"))?;
        wr.write_record(["from", "to", "mean", "q05", "q50", "q95"])?;
        for (k, v) in w_draws.into_iter().enumerate() {
            wr.write_record(row(vec![(k / i + 1).to_string(), (k % i + 1).to_string()], describe(v)))?;
        }
        wr.flush()?;
        eprintln!("expected diagonal mixing weight {:.4}", hyper.expected_diagonal(i));
    }

    let names = post.names().to_vec();
    let keep: Vec<usize> = (0..names.len()).filter(|&k| !names[k].starts_with("z[")).collect();
    let mut cols = vec![Vec::with_capacity(n_draws); keep.len()];
    for _ in 0..n_draws {
        let x = post.constrain(&post.sample_prior(&mut rng));
        for (c, &k) in cols.iter_mut().zip(&keep) {
            c.push(x[k]);
        }
    }
    let mut wr = csv::Writer::from_path(out.path("prior_summary.csv"))?;
    wr.write_record(["parameter", "mean", "q05", "q50", "q95"])?;
    for (c, &k) in cols.into_iter().zip(&keep) {
        wr.write_record(row(vec![names[k].clone()], describe(c)))?;
    }
    wr.flush()?;

    // weekly panel totals under the prior; runaway paths are counted, not kept
    let mut totals = vec![Vec::with_capacity(n_pred); weeks];
    let mut diverged = 0usize;
    for k in 0..n_pred {
        let x = post.sample_prior(&mut rng);
        match posterior_predictive(&post, &[x], weeks, mix_seed(seed, k as u64 + 1)) {
            Ok(fs) => {
                for (h, week) in fs.draws.index_axis(Axis(0), 0).axis_iter(Axis(0)).enumerate() {
                    totals[h].push(week.sum() as f64);
                }
            }
            Err(Error::Divergence { .. }) => diverged += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if diverged < n_pred {
        let mut wr = csv::Writer::from_path(out.path("prior_predictive.csv"))?;
        wr.write_record(["week", "mean", "q05", "q50", "q95", "paths", "diverged"])?;
        for (h, v) in totals.into_iter().enumerate() {
            let n = v.len();
            let mut r = row(vec![(h + 1).to_string()], describe(v));
            r.push(n.to_string());
            r.push(diverged.to_string());
            wr.write_record(r)?;
        }
        wr.flush()?;
    }
    eprintln!("{diverged} of {n_pred} prior predictive paths diverged");
    Ok(Status::Ok)
}
