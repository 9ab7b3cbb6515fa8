//! Forward simulation of the latent-infectiousness process.
//!
//! One week of the rare-disease instance:
//!
//! ```text
//! r[g',i'] ~ Gamma(mean = Y_prev[g',i'], variance = θ · Y_prev[g',i'])
//! λ[g,i]   = δ[g,i] + φ[g,i] · Σ_{g',i'} wG[g,g'] · wI[i,i'] · r[g',i']
//! Y[g,i]   ~ NegBin(λ[g,i], ψ)
//! ```
//!
//! The outbreak instance swaps the lag-1 count for a distributed-lag
//! prevalence estimate, scales the latent mean by `R_{t-1} · α_i`, maps the
//! hazard to an infection probability and draws beta-binomial counts out of
//! the remaining susceptibles.
//!
//! Seasonality uses the week-of-year `w` of the target week:
//! `sin(2π w / 52)`, `cos(2π w / 52)` and the holiday indicator `w ∈ {1, 52}`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{betabinom_sample, negbin_sample};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::mixing::{
    activity_from_contact, geo_weights_gravity, geo_weights_power_decay, normalize_contact,
    ContactMatrix,
};
use crate::panel::PanelData;
use crate::posterior::lognormal_latent;
use crate::rng::{mix_seed, stream, SimRng};

/// Any rate or hazard above this aborts a simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

pub const SEASON_FREQ: f64 = 2.0 * std::f64::consts::PI / 52.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Endemic term only.
    Naive,
    /// Deterministic latent layer `r = Y_prev`, eigen-deformed age mixing.
    Reduced,
    /// Gamma (lognormal when fitting) latent layer, age mixing from a sampled contact matrix.
    Full,
    /// Beta-binomial outbreak instance.
    Outbreak,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::Reduced => "reduced",
            Variant::Full => "full",
            Variant::Outbreak => "outbreak",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Variant::Naive),
            "reduced" => Ok(Variant::Reduced),
            "full" => Ok(Variant::Full),
            "outbreak" => Ok(Variant::Outbreak),
            other => Err(Error::Config(format!(
                "unknown model variant `{other}` (expected naive, reduced, full or outbreak)"
            ))),
        }
    }
}

/// How the latent infectiousness layer is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    /// Exact gamma offspring layer.
    Gamma,
    /// Moment-matched lognormal, the layer the posterior is written in.
    LogNormal,
}

/// Parameters of the rare-disease instance. Vectors indexed by region or
/// age group have full length; the reference entry `[0]` of `beta_geo`,
/// `beta_age`, `eta_geo` and `eta_age` must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RareDiseaseParams {
    pub beta0: f64,
    pub beta_geo: Vec<f64>,
    pub beta_age: Vec<f64>,
    pub beta_sin: Vec<f64>,
    pub beta_cos: Vec<f64>,
    pub beta_xmas: f64,
    pub eta0: f64,
    pub eta_geo: Vec<f64>,
    pub eta_age: Vec<f64>,
    pub eta_logpop: f64,
    pub rho: f64,
    pub psi: f64,
    pub theta: f64,
    pub contact: ContactMatrix,
}

const RARE_KEYS: &[&str] = &[
    "beta0",
    "beta_geo",
    "beta_age",
    "beta_sin",
    "beta_cos",
    "beta_xmas",
    "eta0",
    "eta_geo",
    "eta_age",
    "eta_logpop",
    "rho",
    "psi",
    "theta",
    "contact",
];

impl RareDiseaseParams {
    pub fn n_regions(&self) -> usize {
        self.beta_geo.len()
    }

    pub fn n_ages(&self) -> usize {
        self.beta_age.len()
    }

    /// Desk-scale defaults: a mildly seasonal endemic level of a few cases
    /// per cell and week, susceptibility 0.7, decay 1.5 and an assortative
    /// contact matrix `0.5 + 2.5·1{i=j} + exp(−|i−j|)`.
    pub fn desk(n_regions: usize, n_ages: usize) -> Self {
        let c = Array2::from_shape_fn((n_ages, n_ages), |(a, b)| {
            0.5 + if a == b { 2.5 } else { 0.0 } + (-(a as f64 - b as f64).abs()).exp()
        });
        Self {
            beta0: 3.0,
            beta_geo: (0..n_regions)
                .map(|g| if g == 0 { 0.0 } else { 0.15 * ((g % 3) as f64 - 1.0) })
                .collect(),
            beta_age: (0..n_ages).map(|i| -0.1 * i as f64).collect(),
            beta_sin: vec![0.4; n_ages],
            beta_cos: vec![0.6; n_ages],
            beta_xmas: -0.5,
            eta0: 0.7f64.ln(),
            eta_geo: vec![0.0; n_regions],
            eta_age: vec![0.0; n_ages],
            eta_logpop: 0.0,
            rho: 1.5,
            psi: 0.5,
            theta: 5.0,
            contact: ContactMatrix::new(c).expect("positive symmetric"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (g, i) = (self.n_regions(), self.n_ages());
        if g == 0 || i == 0 {
            return Err(Error::Shape("need at least one region and one age group".into()));
        }
        for (name, v, n) in [
            ("beta_sin", &self.beta_sin, i),
            ("beta_cos", &self.beta_cos, i),
            ("eta_geo", &self.eta_geo, g),
            ("eta_age", &self.eta_age, i),
        ] {
            if v.len() != n {
                return Err(Error::Shape(format!("{name} has {} entries, expected {n}", v.len())));
            }
        }
        if self.contact.dim() != i {
            return Err(Error::Shape(format!(
                "contact matrix is {0}x{0} for {i} age groups",
                self.contact.dim()
            )));
        }
        for (name, v) in [
            ("beta_geo", &self.beta_geo),
            ("beta_age", &self.beta_age),
            ("eta_geo", &self.eta_geo),
            ("eta_age", &self.eta_age),
        ] {
            if v[0] != 0.0 {
                return Err(Error::Domain(format!("{name}[1] is the reference level and must be 0")));
            }
        }
        if !(self.psi > 0.0) || !self.psi.is_finite() {
            return Err(Error::Domain(format!("psi = {} must be positive", self.psi)));
        }
        if !(self.theta >= 0.0) || !self.theta.is_finite() {
            return Err(Error::Domain(format!("theta = {} must be nonnegative", self.theta)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::Domain(format!("rho = {} must be nonnegative", self.rho)));
        }
        Ok(())
    }

    /// Reads a parameter file. Region/age effect lists omit the reference
    /// level; `contact` is the `I × I` matrix in row-major order.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.reject_unknown(RARE_KEYS)?;
        let f = |k: &str| -> Result<f64> {
            kv.get_f64(k)?.ok_or_else(|| Error::Config(format!("missing parameter `{k}`")))
        };
        let l = |k: &str| -> Result<Vec<f64>> {
            kv.get_list(k)?.ok_or_else(|| Error::Config(format!("missing parameter `{k}`")))
        };
        let with_ref = |v: Vec<f64>| std::iter::once(0.0).chain(v).collect::<Vec<_>>();
        let beta_sin = l("beta_sin")?;
        let n_ages = beta_sin.len();
        let contact = l("contact")?;
        if contact.len() != n_ages * n_ages {
            return Err(Error::Shape(format!(
                "contact has {} entries, expected {}",
                contact.len(),
                n_ages * n_ages
            )));
        }
        let c = Array2::from_shape_vec((n_ages, n_ages), contact).expect("checked length");
        let p = Self {
            beta0: f("beta0")?,
            beta_geo: with_ref(l("beta_geo")?),
            beta_age: with_ref(l("beta_age")?),
            beta_sin,
            beta_cos: l("beta_cos")?,
            beta_xmas: f("beta_xmas")?,
            eta0: f("eta0")?,
            eta_geo: with_ref(l("eta_geo")?),
            eta_age: with_ref(l("eta_age")?),
            eta_logpop: f("eta_logpop")?,
            rho: f("rho")?,
            psi: f("psi")?,
            theta: f("theta")?,
            contact: ContactMatrix::new(c)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set("beta0", self.beta0.to_string());
        kv.set_list("beta_geo", &self.beta_geo[1..]);
        kv.set_list("beta_age", &self.beta_age[1..]);
        kv.set_list("beta_sin", &self.beta_sin);
        kv.set_list("beta_cos", &self.beta_cos);
        kv.set("beta_xmas", self.beta_xmas.to_string());
        kv.set("eta0", self.eta0.to_string());
        kv.set_list("eta_geo", &self.eta_geo[1..]);
        kv.set_list("eta_age", &self.eta_age[1..]);
        kv.set("eta_logpop", self.eta_logpop.to_string());
        kv.set("rho", self.rho.to_string());
        kv.set("psi", self.psi.to_string());
        kv.set("theta", self.theta.to_string());
        kv.set_list("contact", self.contact.matrix().as_slice().expect("standard layout"));
        kv
    }
}

/// `log(E[g,i] / E_··)`.
pub fn log_population_share(populations: &Array2<u64>) -> Array2<f64> {
    let total: f64 = populations.iter().map(|&p| p as f64).sum();
    populations.mapv(|p| (p as f64 / total).ln())
}

pub fn is_holiday(week_of_year: u32) -> bool {
    week_of_year == 1 || week_of_year == 52
}

/// Endemic rates `δ[g,i]` for a week with the given week-of-year.
pub fn endemic_rate(
    params: &RareDiseaseParams,
    populations: &Array2<u64>,
    week_of_year: u32,
) -> Array2<f64> {
    let share = log_population_share(populations);
    endemic_rate_from_share(params, &share, week_of_year)
}

fn endemic_rate_from_share(params: &RareDiseaseParams, share: &Array2<f64>, woy: u32) -> Array2<f64> {
    let (s, c) = (SEASON_FREQ * woy as f64).sin_cos();
    let x = if is_holiday(woy) { params.beta_xmas } else { 0.0 };
    Array2::from_shape_fn(share.dim(), |(g, i)| {
        (share[(g, i)]
            + params.beta0
            + params.beta_geo[g]
            + params.beta_age[i]
            + params.beta_sin[i] * s
            + params.beta_cos[i] * c
            + x)
            .exp()
    })
}

/// Susceptibility multipliers `φ[g,i]`.
pub fn susceptibility(params: &RareDiseaseParams, populations: &Array2<u64>) -> Array2<f64> {
    let share = log_population_share(populations);
    Array2::from_shape_fn(share.dim(), |(g, i)| {
        (params.eta_logpop * share[(g, i)] + params.eta0 + params.eta_geo[g] + params.eta_age[i])
            .exp()
    })
}

/// Latent infectiousness given prevalence: zero where `prev = 0`, the mean
/// `mean_mult · prev` when `theta = 0`, otherwise a gamma draw with that
/// mean and variance `theta · mean`.
pub fn sample_latent<R: Rng + ?Sized>(
    prev: &Array2<f64>,
    mean_mult: &Array2<f64>,
    theta: f64,
    rng: &mut R,
) -> Array2<f64> {
    let mut r = Array2::zeros(prev.dim());
    for ((idx, out), &p) in r.indexed_iter_mut().zip(prev.iter()) {
        if p <= 0.0 {
            continue;
        }
        let m = mean_mult[idx] * p;
        *out = if theta == 0.0 {
            m
        } else {
            Gamma::new(m / theta, theta).expect("positive shape").sample(rng)
        };
    }
    r
}

/// Lognormal counterpart of [`sample_latent`] with the same two moments.
pub fn sample_latent_lognormal<R: Rng + ?Sized>(
    prev: &Array2<f64>,
    mean_mult: &Array2<f64>,
    theta: f64,
    rng: &mut R,
) -> Array2<f64> {
    let mut r = Array2::zeros(prev.dim());
    for ((idx, out), &p) in r.indexed_iter_mut().zip(prev.iter()) {
        if p <= 0.0 {
            continue;
        }
        let m = mean_mult[idx] * p;
        *out = if theta == 0.0 {
            m
        } else {
            let z: f64 = StandardNormal.sample(rng);
            lognormal_latent(z, m, theta * m).expect("positive moments")
        };
    }
    r
}

/// `Σ_{g',i'} wG[g,g'] wI[i,i'] r[g',i']`, i.e. `wG · r · wIᵀ`.
pub fn mix(wg: &Array2<f64>, wi: &Array2<f64>, r: &Array2<f64>) -> Array2<f64> {
    wg.dot(r).dot(&wi.t())
}

/// `λ = δ + φ ⊙ (wG · r · wIᵀ)`.
pub fn linear_predictor(
    delta: &Array2<f64>,
    phi: &Array2<f64>,
    wg: &Array2<f64>,
    wi: &Array2<f64>,
    r: &Array2<f64>,
) -> Array2<f64> {
    delta + &(phi * &mix(wg, wi, r))
}

/// Realised latent infectiousness `r[t,g,i]`; week 0 has no predecessor and is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField(pub Array3<f64>);

fn check_divergence(rates: &Array2<f64>, week: usize) -> Result<()> {
    let worst = rates.iter().fold(0.0f64, |a, &v| if v.is_nan() { f64::INFINITY } else { a.max(v) });
    if worst > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            week,
            rate: worst,
            limit: DIVERGENCE_LIMIT,
        });
    }
    Ok(())
}

pub fn next_week_of_year(w: u32) -> u32 {
    w % 52 + 1
}

/// Precomputed one-week transition of the rare-disease instance.
#[derive(Debug, Clone)]
pub struct RareDynamics {
    params: RareDiseaseParams,
    variant: Variant,
    log_share: Array2<f64>,
    phi: Array2<f64>,
    wg: Array2<f64>,
    wi: Array2<f64>,
}

impl RareDynamics {
    /// Mixing weights come from the power-decay law on `orders` and the
    /// normalised contact matrix.
    pub fn new(
        params: &RareDiseaseParams,
        populations: &Array2<u64>,
        orders: &Array2<u32>,
        variant: Variant,
    ) -> Result<Self> {
        params.validate()?;
        let wg = geo_weights_power_decay(orders, params.rho)?.into_inner();
        let wi = normalize_contact(&params.contact).into_inner();
        Self::with_weights(params, populations, wg, wi, variant)
    }

    pub fn with_weights(
        params: &RareDiseaseParams,
        populations: &Array2<u64>,
        wg: Array2<f64>,
        wi: Array2<f64>,
        variant: Variant,
    ) -> Result<Self> {
        params.validate()?;
        let (g, i) = (params.n_regions(), params.n_ages());
        if populations.dim() != (g, i) || wg.dim() != (g, g) || wi.dim() != (i, i) {
            return Err(Error::Shape(format!(
                "parameters are for {g} regions x {i} ages; populations {:?}, weights {:?} / {:?}",
                populations.dim(),
                wg.dim(),
                wi.dim()
            )));
        }
        if variant == Variant::Outbreak {
            return Err(Error::Config("the rare-disease simulator has no outbreak variant".into()));
        }
        let phi = if variant == Variant::Naive {
            Array2::zeros((g, i))
        } else {
            susceptibility(params, populations)
        };
        Ok(Self {
            params: params.clone(),
            variant,
            log_share: log_population_share(populations),
            phi,
            wg,
            wi,
        })
    }

    pub fn params(&self) -> &RareDiseaseParams {
        &self.params
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn endemic(&self, week_of_year: u32) -> Array2<f64> {
        endemic_rate_from_share(&self.params, &self.log_share, week_of_year)
    }

    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn geo_weights(&self) -> &Array2<f64> {
        &self.wg
    }

    pub fn age_weights(&self) -> &Array2<f64> {
        &self.wi
    }

    /// `E[Y | Y_prev]`; the same for every latent dispersion.
    pub fn conditional_mean(&self, prev: ArrayView2<u64>, week_of_year: u32) -> Array2<f64> {
        let prev = prev.mapv(|v| v as f64);
        linear_predictor(&self.endemic(week_of_year), &self.phi, &self.wg, &self.wi, &prev)
    }

    /// Latent draw for one week. Reduced and naive paths are deterministic
    /// and consume no randomness, as does the full path at `θ = 0`.
    pub fn latent<R: Rng + ?Sized>(
        &self,
        prev: ArrayView2<u64>,
        mode: LatentMode,
        rng: &mut R,
    ) -> Array2<f64> {
        let prev = prev.mapv(|v| v as f64);
        match self.variant {
            Variant::Full => {
                let ones = Array2::ones(prev.dim());
                match mode {
                    LatentMode::Gamma => sample_latent(&prev, &ones, self.params.theta, rng),
                    LatentMode::LogNormal => {
                        sample_latent_lognormal(&prev, &ones, self.params.theta, rng)
                    }
                }
            }
            _ => prev,
        }
    }

    /// Rates `λ` given a realised latent layer.
    pub fn rates(&self, r: &Array2<f64>, week_of_year: u32) -> Array2<f64> {
        linear_predictor(&self.endemic(week_of_year), &self.phi, &self.wg, &self.wi, r)
    }

    /// One week forward; `week` is only used to label divergence errors.
    pub fn step<R: Rng + ?Sized>(
        &self,
        prev: ArrayView2<u64>,
        week_of_year: u32,
        mode: LatentMode,
        week: usize,
        rng: &mut R,
    ) -> Result<(Array2<u64>, Array2<f64>)> {
        let r = self.latent(prev, mode, rng);
        let lambda = self.rates(&r, week_of_year);
        check_divergence(&lambda, week)?;
        let y = lambda.mapv(|l| negbin_sample(l, self.params.psi, rng));
        Ok((y, r))
    }

    /// Endemic-only initial week `Y ~ NegBin(δ, ψ)`.
    pub fn initial_week<R: Rng + ?Sized>(&self, week_of_year: u32, rng: &mut R) -> Array2<u64> {
        self.endemic(week_of_year)
            .mapv(|d| negbin_sample(d, self.params.psi, rng))
    }

    /// Simulates `weeks` weeks; week 0 is `initial` or drawn from the endemic term.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        weeks: usize,
        first_week: u32,
        initial: Option<&Array2<u64>>,
        mode: LatentMode,
        rng: &mut R,
    ) -> Result<(Array3<u64>, LatentField)> {
        if weeks < 2 {
            return Err(Error::Domain(format!("need at least 2 weeks, got {weeks}")));
        }
        if !(1..=52).contains(&first_week) {
            return Err(Error::Domain(format!("first week_of_year {first_week} outside 1..=52")));
        }
        let (g, i) = self.phi.dim();
        let mut counts = Array3::zeros((weeks, g, i));
        let mut latent = Array3::zeros((weeks, g, i));
        let y0 = match initial {
            Some(y) if y.dim() != (g, i) => {
                return Err(Error::Shape(format!("initial counts {:?}, expected ({g}, {i})", y.dim())))
            }
            Some(y) => y.clone(),
            None => self.initial_week(first_week, rng),
        };
        counts.index_axis_mut(Axis(0), 0).assign(&y0);
        let mut woy = first_week;
        for t in 1..weeks {
            woy = next_week_of_year(woy);
            let (y, r) = {
                let prev = counts.index_axis(Axis(0), t - 1);
                self.step(prev, woy, mode, t + 1, rng)?
            };
            counts.index_axis_mut(Axis(0), t).assign(&y);
            latent.index_axis_mut(Axis(0), t).assign(&r);
        }
        Ok((counts, LatentField(latent)))
    }
}

/// Simulates a rare-disease panel starting at week-of-year 1 with an
/// endemic-only first week and the exact gamma latent layer.
pub fn simulate_rare(
    params: &RareDiseaseParams,
    populations: &Array2<u64>,
    orders: &Array2<u32>,
    weeks: usize,
    variant: Variant,
    seed: u64,
) -> Result<(PanelData, LatentField)> {
    let dyn_ = RareDynamics::new(params, populations, orders, variant)?;
    let mut rng = stream(seed, 0);
    let (counts, latent) = dyn_.simulate(weeks, 1, None, LatentMode::Gamma, &mut rng)?;
    Ok((PanelData::from_counts(counts, populations.clone(), 1)?, latent))
}

/// `Ŷ = Σ_{d=1}^{t−1} e^{−γ(d−1)} Y_{t−d}` for a history holding weeks
/// `0..t−1` (most recent last).
pub fn prevalence_estimate(history: ArrayView3<u64>, gamma: f64) -> Array2<f64> {
    let (_, g, i) = history.dim();
    let decay = (-gamma).exp();
    let mut out = Array2::<f64>::zeros((g, i));
    for week in history.outer_iter() {
        out.zip_mut_with(&week, |acc, &y| *acc = y as f64 + decay * *acc);
    }
    out
}

/// `X̂ = E − Σ past incidence`, floored at zero. Returns the estimate and the
/// number of floored cells.
pub fn susceptible_estimate(history: ArrayView3<u64>, populations: &Array2<u64>) -> (Array2<u64>, usize) {
    let cumulative = history.sum_axis(Axis(0));
    let mut floored = 0;
    let x = Array2::from_shape_fn(populations.dim(), |idx| {
        let (e, c) = (populations[idx], cumulative[idx]);
        if c > e {
            floored += 1;
            0
        } else {
            e - c
        }
    });
    if floored > 0 {
        log::warn!("susceptible estimate floored at zero in {floored} cells");
    }
    (x, floored)
}

/// `p = 1 − exp(−(δ + S / E))` with `S = wG · r · wIᵀ`.
pub fn infection_probability(
    delta: &Array2<f64>,
    populations: &Array2<u64>,
    wg: &Array2<f64>,
    wi: &Array2<f64>,
    r: &Array2<f64>,
) -> Array2<f64> {
    let s = mix(wg, wi, r);
    Array2::from_shape_fn(delta.dim(), |idx| {
        -(-(delta[idx] + s[idx] / populations[idx] as f64)).exp_m1()
    })
}

/// Parameters of the outbreak instance. `log_r[t−1]` scales the latent mean
/// for week `t` (1-based), so a `T`-week run needs `T − 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct OutbreakParams {
    pub delta: Array2<f64>,
    pub log_r: Vec<f64>,
    pub contact: ContactMatrix,
    pub tau: Vec<f64>,
    pub rho_geo: Vec<f64>,
    pub mean_log_rho: f64,
    pub sd_log_rho: f64,
    pub gamma: f64,
    pub theta: f64,
    pub k: f64,
}

const OUTBREAK_KEYS: &[&str] = &[
    "delta",
    "log_r",
    "contact",
    "tau",
    "rho_geo",
    "mean_log_rho",
    "sd_log_rho",
    "gamma",
    "theta",
    "k",
];

impl OutbreakParams {
    pub fn n_regions(&self) -> usize {
        self.delta.nrows()
    }

    pub fn n_ages(&self) -> usize {
        self.delta.ncols()
    }

    /// A small growing-then-declining wave: `log R` falls linearly from
    /// `0.5` to `−0.5` over the run.
    pub fn desk(n_regions: usize, n_ages: usize, weeks: usize) -> Self {
        let c = Array2::from_shape_fn((n_ages, n_ages), |(a, b)| {
            (if a == b { 0.5 } else { 0.15 }) + 0.05 * (-(a as f64 - b as f64).abs()).exp()
        });
        let steps = weeks.saturating_sub(1).max(1);
        Self {
            delta: Array2::from_elem((n_regions, n_ages), 2e-4),
            log_r: (0..steps)
                .map(|t| 0.5 - t as f64 / (steps.max(2) - 1) as f64)
                .collect(),
            contact: ContactMatrix::new(c).expect("positive symmetric"),
            tau: vec![1.0; n_regions],
            rho_geo: vec![1.5; n_regions],
            mean_log_rho: 1.5f64.ln(),
            sd_log_rho: 0.3,
            gamma: 1.64,
            theta: 2.0,
            k: 1e4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (g, i) = self.delta.dim();
        if self.tau.len() != g || self.rho_geo.len() != g || self.contact.dim() != i {
            return Err(Error::Shape(format!(
                "outbreak parameters disagree on dimensions ({g} regions, {i} ages)"
            )));
        }
        let positive = self.delta.iter().chain(&self.tau).chain(&self.rho_geo).all(|v| *v > 0.0)
            && self.gamma > 0.0
            && self.k > 0.0
            && self.sd_log_rho > 0.0;
        if !positive {
            return Err(Error::Domain("outbreak rates, decays and precisions must be positive".into()));
        }
        if !(self.theta >= 0.0) {
            return Err(Error::Domain(format!("theta = {} must be nonnegative", self.theta)));
        }
        Ok(())
    }

    /// Parameter file: `delta` is `G × I` row-major, `contact` is `I × I`.
    pub fn from_kv(kv: &KvFile, n_regions: usize) -> Result<Self> {
        kv.reject_unknown(OUTBREAK_KEYS)?;
        let f = |k: &str| -> Result<f64> {
            kv.get_f64(k)?.ok_or_else(|| Error::Config(format!("missing parameter `{k}`")))
        };
        let l = |k: &str| -> Result<Vec<f64>> {
            kv.get_list(k)?.ok_or_else(|| Error::Config(format!("missing parameter `{k}`")))
        };
        let delta = l("delta")?;
        if n_regions == 0 || delta.len() % n_regions != 0 {
            return Err(Error::Shape(format!("delta has {} entries for {n_regions} regions", delta.len())));
        }
        let n_ages = delta.len() / n_regions;
        let contact = l("contact")?;
        if contact.len() != n_ages * n_ages {
            return Err(Error::Shape(format!("contact has {} entries", contact.len())));
        }
        let p = Self {
            delta: Array2::from_shape_vec((n_regions, n_ages), delta).expect("checked"),
            log_r: l("log_r")?,
            contact: ContactMatrix::new(
                Array2::from_shape_vec((n_ages, n_ages), contact).expect("checked"),
            )?,
            tau: l("tau")?,
            rho_geo: l("rho_geo")?,
            mean_log_rho: f("mean_log_rho")?,
            sd_log_rho: f("sd_log_rho")?,
            gamma: f("gamma")?,
            theta: f("theta")?,
            k: f("k")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::new();
        kv.set_list("delta", self.delta.as_slice().expect("standard layout"));
        kv.set_list("log_r", &self.log_r);
        kv.set_list("contact", self.contact.matrix().as_slice().expect("standard layout"));
        kv.set_list("tau", &self.tau);
        kv.set_list("rho_geo", &self.rho_geo);
        kv.set("mean_log_rho", self.mean_log_rho.to_string());
        kv.set("sd_log_rho", self.sd_log_rho.to_string());
        kv.set("gamma", self.gamma.to_string());
        kv.set("theta", self.theta.to_string());
        kv.set("k", self.k.to_string());
        kv
    }
}

/// Running prevalence and susceptible estimates for the outbreak instance.
#[derive(Debug, Clone)]
pub struct OutbreakState {
    pub prevalence: Array2<f64>,
    pub cumulative: Array2<u64>,
}

impl OutbreakState {
    pub fn from_history(history: ArrayView3<u64>, gamma: f64) -> Self {
        Self {
            prevalence: prevalence_estimate(history, gamma),
            cumulative: history.sum_axis(Axis(0)),
        }
    }

    pub fn push(&mut self, week: &Array2<u64>, gamma: f64) {
        let decay = (-gamma).exp();
        self.prevalence.zip_mut_with(week, |p, &y| *p = y as f64 + decay * *p);
        self.cumulative += week;
    }

    pub fn susceptibles(&self, populations: &Array2<u64>) -> Array2<u64> {
        Array2::from_shape_fn(populations.dim(), |idx| {
            populations[idx].saturating_sub(self.cumulative[idx])
        })
    }
}

/// Precomputed transition of the outbreak instance.
#[derive(Debug, Clone)]
pub struct OutbreakDynamics {
    params: OutbreakParams,
    populations: Array2<u64>,
    wg: Array2<f64>,
    wi: Array2<f64>,
    activity: Vec<f64>,
}

impl OutbreakDynamics {
    pub fn new(params: &OutbreakParams, populations: &Array2<u64>, distance: &Array2<f64>) -> Result<Self> {
        params.validate()?;
        if populations.dim() != params.delta.dim() {
            return Err(Error::Shape(format!(
                "populations {:?} vs endemic hazards {:?}",
                populations.dim(),
                params.delta.dim()
            )));
        }
        let wg = geo_weights_gravity(distance, &params.tau, &params.rho_geo)?.into_inner();
        Ok(Self {
            params: params.clone(),
            populations: populations.clone(),
            wg,
            wi: normalize_contact(&params.contact).into_inner(),
            activity: activity_from_contact(&params.contact),
        })
    }

    pub fn params(&self) -> &OutbreakParams {
        &self.params
    }

    pub fn geo_weights(&self) -> &Array2<f64> {
        &self.wg
    }

    pub fn age_weights(&self) -> &Array2<f64> {
        &self.wi
    }

    pub fn activity(&self) -> &[f64] {
        &self.activity
    }

    /// Latent-mean multipliers `R · α_i`.
    pub fn mean_multiplier(&self, log_r: f64) -> Array2<f64> {
        let r = log_r.exp();
        Array2::from_shape_fn(self.params.delta.dim(), |(_, i)| r * self.activity[i])
    }

    /// One week forward from `state`; returns counts, latent layer and infection probabilities.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &OutbreakState,
        log_r: f64,
        mode: LatentMode,
        week: usize,
        rng: &mut R,
    ) -> Result<(Array2<u64>, Array2<f64>, Array2<f64>)> {
        let mult = self.mean_multiplier(log_r);
        let r = match mode {
            LatentMode::Gamma => sample_latent(&state.prevalence, &mult, self.params.theta, rng),
            LatentMode::LogNormal => {
                sample_latent_lognormal(&state.prevalence, &mult, self.params.theta, rng)
            }
        };
        let s = mix(&self.wg, &self.wi, &r);
        let hazard = Array2::from_shape_fn(s.dim(), |idx| {
            self.params.delta[idx] + s[idx] / self.populations[idx] as f64
        });
        check_divergence(&hazard, week)?;
        let p = hazard.mapv(|h| -(-h).exp_m1());
        let x = state.susceptibles(&self.populations);
        let y = Array2::from_shape_fn(p.dim(), |idx| {
            let pi = p[idx].clamp(1e-300, 1.0 - 1e-12);
            betabinom_sample(x[idx], pi, self.params.k, rng)
        });
        Ok((y, r, p))
    }

    pub fn simulate<R: Rng + ?Sized>(
        &self,
        weeks: usize,
        initial: &Array2<u64>,
        mode: LatentMode,
        rng: &mut R,
    ) -> Result<(Array3<u64>, LatentField)> {
        if weeks < 2 {
            return Err(Error::Domain(format!("need at least 2 weeks, got {weeks}")));
        }
        if self.params.log_r.len() < weeks - 1 {
            return Err(Error::Shape(format!(
                "{} reproduction multipliers for {weeks} weeks (need {})",
                self.params.log_r.len(),
                weeks - 1
            )));
        }
        let dim = self.populations.dim();
        if initial.dim() != dim {
            return Err(Error::Shape(format!("initial counts {:?}, expected {dim:?}", initial.dim())));
        }
        if initial.iter().zip(self.populations.iter()).any(|(y, e)| y > e) {
            return Err(Error::Validation("initial counts exceed populations".into()));
        }
        let mut counts = Array3::zeros((weeks, dim.0, dim.1));
        let mut latent = Array3::zeros((weeks, dim.0, dim.1));
        counts.index_axis_mut(Axis(0), 0).assign(initial);
        let mut state = OutbreakState {
            prevalence: Array2::zeros(dim),
            cumulative: Array2::zeros(dim),
        };
        state.push(initial, self.params.gamma);
        for t in 1..weeks {
            let (y, r, _) = self.step(&state, self.params.log_r[t - 1], mode, t + 1, rng)?;
            state.push(&y, self.params.gamma);
            counts.index_axis_mut(Axis(0), t).assign(&y);
            latent.index_axis_mut(Axis(0), t).assign(&r);
        }
        Ok((counts, LatentField(latent)))
    }
}

/// Simulates an outbreak panel (week-of-year starting at 1) from seeded week-1 counts.
pub fn simulate_outbreak(
    params: &OutbreakParams,
    populations: &Array2<u64>,
    distance: &Array2<f64>,
    weeks: usize,
    initial: &Array2<u64>,
    seed: u64,
) -> Result<(PanelData, LatentField)> {
    let dyn_ = OutbreakDynamics::new(params, populations, distance)?;
    let mut rng = stream(seed, 0);
    let (counts, latent) = dyn_.simulate(weeks, initial, LatentMode::Gamma, &mut rng)?;
    Ok((PanelData::from_counts(counts, populations.clone(), 1)?, latent))
}

/// Dispersion grid crossed with replicate datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGrid {
    pub thetas: Vec<f64>,
    pub psis: Vec<f64>,
    pub replicates: usize,
    pub weeks_train: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl ScenarioGrid {
    /// `θ ∈ {0.05, 5, 15, 40}` × `ψ ∈ {0.05, 0.5, 1, 3}`, 208 training and 52 test weeks.
    pub fn reference(replicates: usize, seed: u64) -> Self {
        Self {
            thetas: vec![0.05, 5.0, 15.0, 40.0],
            psis: vec![0.05, 0.5, 1.0, 3.0],
            replicates,
            weeks_train: 208,
            horizon: 52,
            seed,
        }
    }

    pub fn n_scenarios(&self) -> usize {
        self.thetas.len() * self.psis.len()
    }

    /// Scenario `s` pairs `thetas[s / n_psi]` with `psis[s % n_psi]`.
    pub fn scenario(&self, s: usize) -> (f64, f64) {
        let n = self.psis.len();
        (self.thetas[s / n], self.psis[s % n])
    }
}

/// Seed of replicate `rep` in scenario `scenario`; independent of grid size.
pub fn scenario_seed(seed: u64, scenario: usize, rep: usize) -> u64 {
    mix_seed(mix_seed(seed, scenario as u64), rep as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub scenario: usize,
    pub theta: f64,
    pub psi: f64,
    pub replicate: usize,
    pub seed: u64,
    pub path: PathBuf,
}

/// One scenario dataset: the base parameters with `(θ, ψ)` replaced,
/// simulated from the full model.
pub fn simulate_scenario(
    base: &RareDiseaseParams,
    populations: &Array2<u64>,
    orders: &Array2<u32>,
    theta: f64,
    psi: f64,
    weeks: usize,
    seed: u64,
) -> Result<PanelData> {
    let mut p = base.clone();
    p.theta = theta;
    p.psi = psi;
    Ok(simulate_rare(&p, populations, orders, weeks, Variant::Full, seed)?.0)
}

/// In-memory grid: `(row, panel)` for every scenario and replicate.
pub fn scenario_datasets(
    base: &RareDiseaseParams,
    populations: &Array2<u64>,
    orders: &Array2<u32>,
    grid: &ScenarioGrid,
) -> Result<Vec<(ManifestRow, PanelData)>> {
    let jobs: Vec<(usize, usize)> = (0..grid.n_scenarios())
        .flat_map(|s| (0..grid.replicates).map(move |r| (s, r)))
        .collect();
    jobs.par_iter()
        .map(|&(s, rep)| {
            let (theta, psi) = grid.scenario(s);
            let seed = scenario_seed(grid.seed, s, rep);
            let panel = simulate_scenario(
                base,
                populations,
                orders,
                theta,
                psi,
                grid.weeks_train + grid.horizon,
                seed,
            )?;
            let row = ManifestRow {
                scenario: s,
                theta,
                psi,
                replicate: rep,
                seed,
                path: PathBuf::from(format!("s{s:02}_r{rep:03}")),
            };
            Ok((row, panel))
        })
        .collect()
}

/// Writes every dataset under `out_dir/<path>/` plus `out_dir/manifest.csv`.
pub fn scenario_grid(
    base: &RareDiseaseParams,
    populations: &Array2<u64>,
    orders: &Array2<u32>,
    grid: &ScenarioGrid,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    let data = scenario_datasets(base, populations, orders, grid)?;
    std::fs::create_dir_all(out_dir)?;
    data.par_iter().try_for_each(|(row, panel)| {
        let dir = out_dir.join(&row.path);
        std::fs::create_dir_all(&dir)?;
        panel.save(&dir)
    })?;
    let rows: Vec<ManifestRow> = data.into_iter().map(|(r, _)| r).collect();
    write_manifest(&out_dir.join("manifest.csv"), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Per-draw helper used by replicate studies: a fresh stream per index.
pub fn replicate_rng(seed: u64, index: usize) -> SimRng {
    stream(seed, index as u64)
}
