//! Log-posterior densities on an unconstrained parameter vector.
//!
//! The vector concatenates named blocks. Real blocks are stored as is and
//! positive blocks as their logarithm; [`Posterior::constrain`] maps back.
//! Block order for the rare-disease variants:
//!
//! | block        | length       | scale     | variants             |
//! |--------------|--------------|-----------|----------------------|
//! | `beta0`      | 1            | real      | all                  |
//! | `beta_geo`   | G − 1        | real      | all                  |
//! | `beta_age`   | I − 1        | real      | all                  |
//! | `beta_sin`   | I            | real      | all                  |
//! | `beta_cos`   | I            | real      | all                  |
//! | `beta_xmas`  | 1            | real      | all                  |
//! | `psi`        | 1            | log       | all                  |
//! | `eta0`       | 1            | real      | reduced, full        |
//! | `eta_geo`    | G − 1        | real      | reduced, full        |
//! | `eta_age`    | I − 1        | real      | reduced, full        |
//! | `eta_logpop` | 1            | real      | reduced, full        |
//! | `rho`        | 1            | log       | reduced, full        |
//! | `kappa`      | 1            | log       | reduced              |
//! | `theta`      | 1            | log       | full                 |
//! | `contact`    | I (I + 1) / 2| log       | full                 |
//! | `z`          | latent cells | real      | full                 |
//!
//! and for the outbreak variant: `delta` (G·I, log), `theta` (log), `k`
//! (log), `gamma` (log), `log_r` (T − 1, real), `contact` (log), `tau` (G,
//! log), `mean_log_rho` (real), `sd_log_rho` (log), `rho_raw` (G, real),
//! `z` (real), with `log ρ_g = mean_log_rho + sd_log_rho · rho_raw[g]`.
//!
//! The contact block holds the lower triangle in row-major order
//! `(1,1), (2,1), (2,2), (3,1), …`. Latent innovations exist only for cells
//! with positive conditioning prevalence, ordered by `(t, g, i)`.
//!
//! The rare-disease likelihood conditions on the first week; the outbreak
//! likelihood treats all observed history as data.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Gamma as GammaDist, Normal, StandardNormal};
use statrs::function::factorial::ln_binomial;

pub use crate::dgp::Variant;
use crate::dgp::{
    is_holiday, log_population_share, OutbreakDynamics, OutbreakParams, RareDiseaseParams,
    RareDynamics, SEASON_FREQ,
};
use crate::dist::{betabinom_logpmf_grad, negbin_logpmf_grad_cached};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::mixing::{
    clamp_negative, column_normalize_backward, ContactMatrix, ContactPriorHyper,
    EigenDeformation,
};
use crate::panel::PanelData;
use crate::special::{digamma_rising, ln_gamma, ln_rising};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Lognormal draw with mean `m` and variance `v` from a standard-normal
/// innovation: `exp(μ + σ z)` with `σ² = ln(1 + v/m²)`, `μ = ln m − σ²/2`.
pub fn lognormal_latent(z: f64, m: f64, v: f64) -> Result<f64> {
    if !(m > 0.0) || !(v > 0.0) {
        return Err(Error::Domain(format!("lognormal moments need m > 0, v > 0 (got {m}, {v})")));
    }
    let s2 = (v / (m * m)).ln_1p();
    Ok((m.ln() - 0.5 * s2 + s2.sqrt() * z).exp())
}

/// Density target for the sampler.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `x`, writing the gradient into `grad`. Invalid points
    /// return `-inf` (or NaN) and leave `grad` unspecified.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(x, &mut g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Real,
    /// Stored as `ln x`.
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: &'static str,
    pub transform: Transform,
    pub start: usize,
    pub labels: Vec<String>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

/// Names and positions of every block of a model, fixed ones included.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    fn push(&mut self, name: &'static str, transform: Transform, labels: Vec<String>) -> usize {
        let start = self.len;
        self.len += labels.len();
        self.blocks.push(Block {
            name,
            transform,
            start,
            labels,
        });
        start
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One prior family. Positive blocks are sampled on the log scale; the
/// `normal` and `neglognormal` families describe that log value directly,
/// the others describe the positive value and pick up the Jacobian `+ ln x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// `u ~ N(mean, sd)` on the stored value (`ln x` for positive blocks).
    Normal { mean: f64, sd: f64 },
    /// `−ln x ~ N(mean, sd)`.
    NegLogNormal { mean: f64, sd: f64 },
    HalfNormal { scale: f64 },
    HalfCauchy { scale: f64 },
    /// Shape and rate.
    Gamma { shape: f64, rate: f64 },
    /// Independent gamma entries of a contact lower triangle, shape
    /// `alpha_diag` on the diagonal and `alpha_off` elsewhere.
    ContactGamma { alpha_diag: f64, alpha_off: f64, scale: f64 },
    /// Block held at these (natural-scale) values and not sampled.
    Fixed(Vec<f64>),
}

impl Prior {
    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut parts = text.split_whitespace();
        let family = parts.next().ok_or("empty prior")?;
        let nums: Vec<f64> = parts
            .map(|s| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let want = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(format!("`{family}` takes {n} numbers, got {}", nums.len()))
            }
        };
        let positive = |v: &[f64]| {
            if v.iter().all(|x| *x > 0.0 && x.is_finite()) {
                Ok(())
            } else {
                Err(format!("`{family}` scale/shape parameters must be positive"))
            }
        };
        let p = match family {
            "normal" => {
                want(2)?;
                positive(&nums[1..])?;
                Prior::Normal { mean: nums[0], sd: nums[1] }
            }
            "neglognormal" => {
                want(2)?;
                positive(&nums[1..])?;
                Prior::NegLogNormal { mean: nums[0], sd: nums[1] }
            }
            "halfnormal" => {
                want(1)?;
                positive(&nums)?;
                Prior::HalfNormal { scale: nums[0] }
            }
            "halfcauchy" => {
                want(1)?;
                positive(&nums)?;
                Prior::HalfCauchy { scale: nums[0] }
            }
            "gamma" => {
                want(2)?;
                positive(&nums)?;
                Prior::Gamma { shape: nums[0], rate: nums[1] }
            }
            "contact_gamma" => {
                want(3)?;
                positive(&nums)?;
                Prior::ContactGamma {
                    alpha_diag: nums[0],
                    alpha_off: nums[1],
                    scale: nums[2],
                }
            }
            "fixed" => Prior::Fixed(nums),
            other => return Err(format!("unknown prior family `{other}`")),
        };
        Ok(p)
    }

    fn to_text(&self) -> String {
        match self {
            Prior::Normal { mean, sd } => format!("normal {mean} {sd}"),
            Prior::NegLogNormal { mean, sd } => format!("neglognormal {mean} {sd}"),
            Prior::HalfNormal { scale } => format!("halfnormal {scale}"),
            Prior::HalfCauchy { scale } => format!("halfcauchy {scale}"),
            Prior::Gamma { shape, rate } => format!("gamma {shape} {rate}"),
            Prior::ContactGamma {
                alpha_diag,
                alpha_off,
                scale,
            } => format!("contact_gamma {alpha_diag} {alpha_off} {scale}"),
            Prior::Fixed(v) => {
                let mut s = String::from("fixed");
                for x in v {
                    let _ = write!(s, " {x}");
                }
                s
            }
        }
    }

    fn on_positive_value(&self) -> bool {
        matches!(
            self,
            Prior::NegLogNormal { .. }
                | Prior::HalfNormal { .. }
                | Prior::HalfCauchy { .. }
                | Prior::Gamma { .. }
                | Prior::ContactGamma { .. }
        )
    }

    /// Log density of stored values `u` (log scale for positive blocks),
    /// adding its gradient to `grad`.
    fn log_density_grad(&self, u: &[f64], grad: &mut [f64], n_contact: usize) -> f64 {
        let mut lp = 0.0;
        match *self {
            Prior::Normal { mean, sd } => {
                let c = -sd.ln() - HALF_LN_2PI;
                for (x, g) in u.iter().zip(grad.iter_mut()) {
                    let d = (x - mean) / sd;
                    lp += c - 0.5 * d * d;
                    *g -= d / sd;
                }
            }
            Prior::NegLogNormal { mean, sd } => {
                let c = -sd.ln() - HALF_LN_2PI;
                for (x, g) in u.iter().zip(grad.iter_mut()) {
                    let d = (-x - mean) / sd;
                    lp += c - 0.5 * d * d;
                    *g += d / sd;
                }
            }
            Prior::HalfNormal { scale } => {
                let c = std::f64::consts::LN_2 - scale.ln() - HALF_LN_2PI;
                for (x, g) in u.iter().zip(grad.iter_mut()) {
                    let v = x.exp() / scale;
                    lp += c - 0.5 * v * v + x;
                    *g += 1.0 - v * v;
                }
            }
            Prior::HalfCauchy { scale } => {
                let c = (2.0 / PI).ln() - scale.ln();
                for (x, g) in u.iter().zip(grad.iter_mut()) {
                    let v = x.exp() / scale;
                    let v2 = v * v;
                    lp += c - v2.ln_1p() + x;
                    *g += 1.0 - 2.0 * v2 / (1.0 + v2);
                }
            }
            Prior::Gamma { shape, rate } => {
                let c = shape * rate.ln() - ln_gamma(shape);
                for (x, g) in u.iter().zip(grad.iter_mut()) {
                    let v = x.exp();
                    lp += c + shape * x - rate * v;
                    *g += shape - rate * v;
                }
            }
            Prior::ContactGamma {
                alpha_diag,
                alpha_off,
                scale,
            } => {
                let cd = -ln_gamma(alpha_diag) - alpha_diag * scale.ln();
                let co = -ln_gamma(alpha_off) - alpha_off * scale.ln();
                let mut k = 0;
                for a in 0..n_contact {
                    for b in 0..=a {
                        let (alpha, c) = if a == b { (alpha_diag, cd) } else { (alpha_off, co) };
                        let v = u[k].exp();
                        lp += c + alpha * u[k] - v / scale;
                        grad[k] += alpha - v / scale;
                        k += 1;
                    }
                }
            }
            Prior::Fixed(_) => {}
        }
        lp
    }

    /// Natural-scale draw of `len` values.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        len: usize,
        transform: Transform,
        n_contact: usize,
        rng: &mut R,
    ) -> Vec<f64> {
        let pos = |u: f64| if transform == Transform::Positive { u.exp() } else { u };
        match *self {
            Prior::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).expect("valid normal");
                (0..len).map(|_| pos(d.sample(rng))).collect()
            }
            Prior::NegLogNormal { mean, sd } => {
                let d = Normal::new(mean, sd).expect("valid normal");
                (0..len).map(|_| (-d.sample(rng)).exp()).collect()
            }
            Prior::HalfNormal { scale } => (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    (scale * z.abs()).max(f64::MIN_POSITIVE)
                })
                .collect(),
            Prior::HalfCauchy { scale } => {
                let d = Cauchy::new(0.0, scale).expect("valid cauchy");
                (0..len)
                    .map(|_| d.sample(rng).abs().clamp(f64::MIN_POSITIVE, 1e300))
                    .collect()
            }
            Prior::Gamma { shape, rate } => {
                let d = GammaDist::new(shape, 1.0 / rate).expect("valid gamma");
                (0..len).map(|_| d.sample(rng).max(f64::MIN_POSITIVE)).collect()
            }
            Prior::ContactGamma {
                alpha_diag,
                alpha_off,
                scale,
            } => {
                let mut out = Vec::with_capacity(len);
                for a in 0..n_contact {
                    for b in 0..=a {
                        let alpha = if a == b { alpha_diag } else { alpha_off };
                        let d = GammaDist::new(alpha, scale).expect("valid gamma");
                        out.push(d.sample(rng).max(f64::MIN_POSITIVE));
                    }
                }
                out
            }
            Prior::Fixed(ref v) => v.clone(),
        }
    }
}

/// Prior family per block name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorSpec {
    entries: BTreeMap<String, Prior>,
}

impl PriorSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, block: &str, prior: Prior) -> &mut Self {
        self.entries.insert(block.to_owned(), prior);
        self
    }

    pub fn get(&self, block: &str) -> Option<&Prior> {
        self.entries.get(block)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Prior)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Named defaults. `simstudy` and `analysis` cover the rare-disease
    /// variants and differ only in the dispersion priors; `outbreak` covers
    /// the outbreak variant.
    pub fn preset(name: &str, variant: Variant, n_ages: usize) -> Result<Self> {
        let mut s = Self::new();
        let n = |mean, sd| Prior::Normal { mean, sd };
        let contact = {
            let h = ContactPriorHyper::assortative(n_ages);
            Prior::ContactGamma {
                alpha_diag: h.alpha_diag,
                alpha_off: h.alpha_offdiag,
                scale: h.scale,
            }
        };
        match (name, variant) {
            ("simstudy" | "analysis", Variant::Naive | Variant::Reduced | Variant::Full) => {
                s.set("beta0", n(3.0, 2.0));
                for b in ["beta_geo", "beta_age", "beta_sin", "beta_cos", "beta_xmas"] {
                    s.set(b, n(0.0, 3.0));
                }
                if name == "simstudy" {
                    s.set("psi", Prior::NegLogNormal { mean: -0.5, sd: 1.0 });
                } else {
                    s.set("psi", Prior::HalfCauchy { scale: 1.0 });
                }
                if variant != Variant::Naive {
                    s.set("eta0", n(2.0, 5.0));
                    s.set("eta_geo", n(0.0, 3.0));
                    s.set("eta_age", n(0.0, 3.0));
                    s.set("eta_logpop", n(0.0, 2.0));
                    s.set("rho", n(0.0, 1.0));
                }
                if variant == Variant::Reduced {
                    s.set("kappa", n(0.0, 0.75));
                }
                if variant == Variant::Full {
                    if name == "simstudy" {
                        s.set("theta", Prior::NegLogNormal { mean: -2.0, sd: 1.0 });
                    } else {
                        s.set("theta", Prior::HalfCauchy { scale: 1.0 });
                    }
                    s.set("contact", contact);
                    s.set("z", n(0.0, 1.0));
                }
            }
            ("outbreak", Variant::Outbreak) => {
                s.set("delta", Prior::HalfNormal { scale: 1.0 });
                s.set("theta", Prior::HalfCauchy { scale: 5.0 });
                s.set("k", Prior::HalfCauchy { scale: 1e4 });
                s.set("gamma", Prior::HalfCauchy { scale: 1.0 });
                s.set("log_r", n(0.0, 2.0));
                s.set("contact", contact);
                s.set("tau", n(0.0, 3.0));
                s.set("mean_log_rho", n(0.0, 2.0));
                s.set("sd_log_rho", Prior::HalfNormal { scale: 1.0 });
                s.set("rho_raw", n(0.0, 1.0));
                s.set("z", n(0.0, 1.0));
            }
            _ => {
                return Err(Error::Config(format!(
                    "no prior preset `{name}` for the {variant} variant (rare variants: simstudy, analysis; outbreak: outbreak)"
                )))
            }
        }
        Ok(s)
    }

    /// One `block = family numbers…` line per block, e.g.
    /// `psi = neglognormal -0.5 1` or `rho = fixed 1.5`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let kv = KvFile::parse(text, path)?;
        let mut s = Self::new();
        for key in kv.keys() {
            let value = kv.get(key).expect("listed key");
            let prior = Prior::parse(value).map_err(|msg| Error::Parse {
                path: path.to_owned(),
                line: text
                    .lines()
                    .position(|l| l.split('=').next().map(str::trim) == Some(key))
                    .map_or(0, |p| p + 1),
                msg: format!("{key}: {msg}"),
            })?;
            s.set(key, prior);
        }
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, p) in &self.entries {
            let _ = writeln!(out, "{k} = {}", p.to_text());
        }
        out
    }
}

/// Fixed model structure beyond the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Adjacency orders; required by the reduced and full variants.
    pub adjacency_order: Option<Array2<u32>>,
    /// Distance matrix with positive diagonal; required by the outbreak variant.
    pub distance: Option<Array2<f64>>,
    /// Known contact matrix for the eigen-deformation; required by the reduced variant.
    pub known_contact: Option<Array2<f64>>,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            adjacency_order: None,
            distance: None,
            known_contact: None,
        }
    }

    pub fn with_orders(mut self, o: Array2<u32>) -> Self {
        self.adjacency_order = Some(o);
        self
    }

    pub fn with_distance(mut self, d: Array2<f64>) -> Self {
        self.distance = Some(d);
        self
    }

    pub fn with_known_contact(mut self, c: Array2<f64>) -> Self {
        self.known_contact = Some(c);
        self
    }
}

#[derive(Debug, Clone, Default)]
struct Offsets {
    beta0: usize,
    beta_geo: usize,
    beta_age: usize,
    beta_sin: usize,
    beta_cos: usize,
    beta_xmas: usize,
    psi: usize,
    eta0: usize,
    eta_geo: usize,
    eta_age: usize,
    eta_logpop: usize,
    rho: usize,
    kappa: usize,
    theta: usize,
    contact: usize,
    z: usize,
    delta: usize,
    k: usize,
    gamma: usize,
    log_r: usize,
    tau: usize,
    mean_log_rho: usize,
    sd_log_rho: usize,
    rho_raw: usize,
}

/// Sentinel for cells without a latent innovation.
const NO_SLOT: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct RareData {
    log_share: Vec<f64>,
    /// `(sin, cos, holiday)` per week.
    season: Vec<(f64, f64, f64)>,
    /// Counts as `f64`, flat `(t, g, i)`.
    yf: Vec<f64>,
    /// Index into `distinct` per cell of weeks `1..T`.
    y_idx: Vec<u32>,
    distinct: Vec<u64>,
    ln_fact: Vec<f64>,
    log1p_order: Vec<f64>,
    eigen: Option<EigenDeformation>,
    /// Latent slot per cell of weeks `1..T`.
    slot: Vec<u32>,
}

#[derive(Debug, Clone)]
struct OutbreakData {
    pops: Vec<f64>,
    log_dist: Vec<f64>,
    distance: Array2<f64>,
    /// Remaining susceptibles per cell of weeks `1..T`.
    susceptible: Vec<u64>,
    ln_choose: Vec<f64>,
    slot: Vec<u32>,
}

/// Log posterior of one model variant on one panel.
#[derive(Debug, Clone)]
pub struct Posterior {
    variant: Variant,
    panel: PanelData,
    layout: Layout,
    prior: PriorSpec,
    off: Offsets,
    /// `(block index, prior)` for every sampled block.
    sampled: Vec<(usize, Prior)>,
    /// Position of each sampled coordinate in the full buffer.
    free: Vec<usize>,
    /// Full buffer template with fixed blocks filled in.
    template: Vec<f64>,
    names: Vec<String>,
    rare: Option<RareData>,
    outbreak: Option<OutbreakData>,
}

fn labels(name: &str, n: usize, first: usize) -> Vec<String> {
    (first..first + n).map(|k| format!("{name}[{k}]")).collect()
}

fn contact_labels(n: usize) -> Vec<String> {
    let mut v = Vec::new();
    for a in 1..=n {
        for b in 1..=a {
            v.push(format!("contact[{a},{b}]"));
        }
    }
    v
}

fn cell_labels(name: &str, g: usize, i: usize) -> Vec<String> {
    let mut v = Vec::new();
    for a in 1..=g {
        for b in 1..=i {
            v.push(format!("{name}[{a},{b}]"));
        }
    }
    v
}

impl Posterior {
    pub fn new(spec: ModelSpec, panel: PanelData, prior: PriorSpec) -> Result<Self> {
        let (nt, ng, ni) = panel.counts().dim();
        let gi = ng * ni;
        if nt < 2 {
            return Err(Error::Shape("a panel needs at least two weeks to fit".into()));
        }
        let counts = panel.counts().as_slice().expect("standard layout").to_vec();
        let mut layout = Layout::default();
        let mut off = Offsets::default();
        let scalar = |s: &str| vec![s.to_owned()];
        let variant = spec.variant;
        let mut rare = None;
        let mut outbreak = None;
        match variant {
            Variant::Naive | Variant::Reduced | Variant::Full => {
                off.beta0 = layout.push("beta0", Transform::Real, scalar("beta0"));
                off.beta_geo = layout.push("beta_geo", Transform::Real, labels("beta_geo", ng - 1, 2));
                off.beta_age = layout.push("beta_age", Transform::Real, labels("beta_age", ni - 1, 2));
                off.beta_sin = layout.push("beta_sin", Transform::Real, labels("beta_sin", ni, 1));
                off.beta_cos = layout.push("beta_cos", Transform::Real, labels("beta_cos", ni, 1));
                off.beta_xmas = layout.push("beta_xmas", Transform::Real, scalar("beta_xmas"));
                off.psi = layout.push("psi", Transform::Positive, scalar("psi"));
                let mut log1p_order = Vec::new();
                let mut eigen = None;
                if variant != Variant::Naive {
                    off.eta0 = layout.push("eta0", Transform::Real, scalar("eta0"));
                    off.eta_geo = layout.push("eta_geo", Transform::Real, labels("eta_geo", ng - 1, 2));
                    off.eta_age = layout.push("eta_age", Transform::Real, labels("eta_age", ni - 1, 2));
                    off.eta_logpop = layout.push("eta_logpop", Transform::Real, scalar("eta_logpop"));
                    off.rho = layout.push("rho", Transform::Positive, scalar("rho"));
                    let o = spec.adjacency_order.as_ref().ok_or_else(|| {
                        Error::Config(format!("the {variant} variant needs adjacency orders"))
                    })?;
                    if o.dim() != (ng, ng) {
                        return Err(Error::Shape(format!(
                            "adjacency orders {:?} for {ng} regions",
                            o.dim()
                        )));
                    }
                    log1p_order = o.iter().map(|&v| (v as f64).ln_1p()).collect();
                }
                if variant == Variant::Reduced {
                    off.kappa = layout.push("kappa", Transform::Positive, scalar("kappa"));
                    let c = spec.known_contact.as_ref().ok_or_else(|| {
                        Error::Config("the reduced variant needs a known contact matrix".into())
                    })?;
                    if c.dim() != (ni, ni) {
                        return Err(Error::Shape(format!("known contact matrix {:?} for {ni} ages", c.dim())));
                    }
                    eigen = Some(EigenDeformation::new(c)?);
                }
                let mut slot = vec![NO_SLOT; (nt - 1) * gi];
                let mut z_labels = Vec::new();
                if variant == Variant::Full {
                    off.theta = layout.push("theta", Transform::Positive, scalar("theta"));
                    off.contact = layout.push("contact", Transform::Positive, contact_labels(ni));
                    for t in 1..nt {
                        for c in 0..gi {
                            if counts[(t - 1) * gi + c] > 0 {
                                slot[(t - 1) * gi + c] = z_labels.len() as u32;
                                z_labels.push(format!("z[{},{},{}]", t + 1, c / ni + 1, c % ni + 1));
                            }
                        }
                    }
                    off.z = layout.push("z", Transform::Real, z_labels);
                }
                let mut distinct: Vec<u64> = counts[gi..].to_vec();
                distinct.sort_unstable();
                distinct.dedup();
                let y_idx = counts[gi..]
                    .iter()
                    .map(|y| distinct.binary_search(y).expect("present") as u32)
                    .collect();
                let season = panel
                    .week_of_year()
                    .iter()
                    .map(|&w| {
                        let (s, c) = (SEASON_FREQ * w as f64).sin_cos();
                        (s, c, if is_holiday(w) { 1.0 } else { 0.0 })
                    })
                    .collect();
                rare = Some(RareData {
                    log_share: log_population_share(panel.populations()).iter().copied().collect(),
                    season,
                    yf: counts.iter().map(|&y| y as f64).collect(),
                    y_idx,
                    ln_fact: distinct.iter().map(|&y| ln_gamma(y as f64 + 1.0)).collect(),
                    distinct,
                    log1p_order,
                    eigen,
                    slot,
                });
            }
            Variant::Outbreak => {
                let d = spec.distance.as_ref().ok_or_else(|| {
                    Error::Config("the outbreak variant needs a distance matrix".into())
                })?;
                if d.dim() != (ng, ng) {
                    return Err(Error::Shape(format!("distance matrix {:?} for {ng} regions", d.dim())));
                }
                if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::Domain(
                        "gravity weights need strictly positive distances, diagonal included".into(),
                    ));
                }
                off.delta = layout.push("delta", Transform::Positive, cell_labels("delta", ng, ni));
                off.theta = layout.push("theta", Transform::Positive, scalar("theta"));
                off.k = layout.push("k", Transform::Positive, scalar("k"));
                off.gamma = layout.push("gamma", Transform::Positive, scalar("gamma"));
                off.log_r = layout.push("log_r", Transform::Real, labels("log_r", nt - 1, 1));
                off.contact = layout.push("contact", Transform::Positive, contact_labels(ni));
                off.tau = layout.push("tau", Transform::Positive, labels("tau", ng, 1));
                off.mean_log_rho = layout.push("mean_log_rho", Transform::Real, scalar("mean_log_rho"));
                off.sd_log_rho = layout.push("sd_log_rho", Transform::Positive, scalar("sd_log_rho"));
                off.rho_raw = layout.push("rho_raw", Transform::Real, labels("rho_raw", ng, 1));
                let pops: Vec<u64> = panel.populations().iter().copied().collect();
                let mut cum = vec![0u64; gi];
                let mut susceptible = vec![0u64; (nt - 1) * gi];
                let mut ln_choose = vec![0.0; (nt - 1) * gi];
                let mut slot = vec![NO_SLOT; (nt - 1) * gi];
                let mut z_labels = Vec::new();
                for t in 0..nt {
                    if t > 0 {
                        for c in 0..gi {
                            let x = pops[c].saturating_sub(cum[c]);
                            let y = counts[t * gi + c];
                            if y > x {
                                return Err(Error::Validation(format!(
                                    "week {} cell ({}, {}) has {y} cases but only {x} susceptibles remain",
                                    t + 1,
                                    c / ni + 1,
                                    c % ni + 1
                                )));
                            }
                            susceptible[(t - 1) * gi + c] = x;
                            ln_choose[(t - 1) * gi + c] = ln_binomial(x, y);
                            if cum[c] > 0 {
                                slot[(t - 1) * gi + c] = z_labels.len() as u32;
                                z_labels.push(format!("z[{},{},{}]", t + 1, c / ni + 1, c % ni + 1));
                            }
                        }
                    }
                    for c in 0..gi {
                        cum[c] += counts[t * gi + c];
                    }
                }
                off.z = layout.push("z", Transform::Real, z_labels);
                outbreak = Some(OutbreakData {
                    pops: pops.iter().map(|&p| p as f64).collect(),
                    log_dist: d.iter().map(|v| v.ln()).collect(),
                    distance: d.clone(),
                    susceptible,
                    ln_choose,
                    slot,
                });
            }
        }

        // match priors to blocks
        let mut sampled = Vec::new();
        let mut free = Vec::new();
        let mut names = Vec::new();
        let mut template = vec![0.0; layout.len()];
        for (name, _) in prior.entries() {
            if layout.block(name).is_none() {
                return Err(Error::Layout(format!(
                    "prior given for `{name}`, which the {variant} variant does not have"
                )));
            }
        }
        for (bi, block) in layout.blocks().iter().enumerate() {
            let p = match prior.get(block.name) {
                Some(p) => p.clone(),
                None if block.is_empty() => continue,
                None => {
                    return Err(Error::Layout(format!("no prior for block `{}`", block.name)))
                }
            };
            if block.name == "z" && p != (Prior::Normal { mean: 0.0, sd: 1.0 }) {
                return Err(Error::Layout("latent innovations `z` must be `normal 0 1`".into()));
            }
            if matches!(p, Prior::ContactGamma { .. }) != (block.name == "contact")
                && !matches!(p, Prior::Fixed(_))
            {
                return Err(Error::Layout(format!(
                    "`contact_gamma` applies to the contact block only (block `{}`)",
                    block.name
                )));
            }
            if p.on_positive_value() && block.transform != Transform::Positive {
                return Err(Error::Layout(format!(
                    "prior `{}` needs a positive block, `{}` is real-valued",
                    p.to_text(),
                    block.name
                )));
            }
            if let Prior::Fixed(values) = &p {
                if values.len() != block.len() {
                    return Err(Error::Layout(format!(
                        "fixed `{}` has {} values, block has {}",
                        block.name,
                        values.len(),
                        block.len()
                    )));
                }
                for (k, v) in values.iter().enumerate() {
                    template[block.start + k] = match block.transform {
                        Transform::Real => *v,
                        Transform::Positive if *v > 0.0 => v.ln(),
                        Transform::Positive => {
                            return Err(Error::Domain(format!(
                                "fixed `{}` value {v} must be positive",
                                block.name
                            )))
                        }
                    };
                }
                continue;
            }
            free.extend(block.range());
            names.extend(block.labels.iter().cloned());
            sampled.push((bi, p));
        }
        Ok(Self {
            variant,
            panel,
            layout,
            prior,
            off,
            sampled,
            free,
            template,
            names,
            rare,
            outbreak,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn panel(&self) -> &PanelData {
        &self.panel
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    /// Labels of the sampled coordinates.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of latent innovations (sampled or not).
    pub fn n_latent(&self) -> usize {
        self.layout.block("z").map_or(0, Block::len)
    }

    /// Transform of each sampled coordinate.
    pub fn transforms(&self) -> Vec<Transform> {
        let mut out = Vec::with_capacity(self.free.len());
        for (bi, _) in &self.sampled {
            let b = &self.layout.blocks()[*bi];
            out.extend(std::iter::repeat_n(b.transform, b.len()));
        }
        out
    }

    fn expand(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.free.len() {
            return Err(Error::Layout(format!(
                "parameter vector has {} entries, model has {}",
                x.len(),
                self.free.len()
            )));
        }
        let mut full = self.template.clone();
        for (k, &pos) in self.free.iter().enumerate() {
            full[pos] = x[k];
        }
        Ok(full)
    }

    /// Natural-scale values of the sampled coordinates.
    pub fn constrain(&self, x: &[f64]) -> Vec<f64> {
        self.transforms()
            .iter()
            .zip(x)
            .map(|(t, &v)| if *t == Transform::Positive { v.exp() } else { v })
            .collect()
    }

    pub fn unconstrain(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.free.len() {
            return Err(Error::Layout(format!(
                "{} values for {} sampled coordinates",
                values.len(),
                self.free.len()
            )));
        }
        self.transforms()
            .iter()
            .zip(values)
            .zip(&self.names)
            .map(|((t, &v), name)| match t {
                Transform::Real if v.is_finite() => Ok(v),
                Transform::Positive if v > 0.0 && v.is_finite() => Ok(v.ln()),
                _ => Err(Error::Domain(format!("{name} = {v} violates its constraint"))),
            })
            .collect()
    }

    /// `ln |d constrain / dx|`.
    pub fn log_abs_det_jacobian(&self, x: &[f64]) -> f64 {
        self.transforms()
            .iter()
            .zip(x)
            .filter(|(t, _)| **t == Transform::Positive)
            .map(|(_, v)| v)
            .sum()
    }

    /// Unconstrained draw from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n_contact = self.panel.n_ages();
        let mut out = Vec::with_capacity(self.free.len());
        for (bi, p) in &self.sampled {
            let b = &self.layout.blocks()[*bi];
            for v in p.sample(b.len(), b.transform, n_contact, rng) {
                out.push(if b.transform == Transform::Positive { v.ln() } else { v });
            }
        }
        out
    }

    fn prior_eval(&self, full: &[f64], grad: &mut [f64]) -> f64 {
        let n_contact = self.panel.n_ages();
        let mut lp = 0.0;
        for (bi, p) in &self.sampled {
            let r = self.layout.blocks()[*bi].range();
            lp += p.log_density_grad(&full[r.clone()], &mut grad[r], n_contact);
        }
        lp
    }

    fn likelihood_eval(&self, full: &[f64], grad: &mut [f64]) -> f64 {
        // exp of a log-scale value beyond this under- or overflows downstream
        const LOG_LIMIT: f64 = 700.0;
        let out_of_range = self.layout.blocks().iter().any(|b| {
            full[b.range()]
                .iter()
                .any(|u| !u.is_finite() || (b.transform == Transform::Positive && u.abs() > LOG_LIMIT))
        });
        if out_of_range {
            return f64::NEG_INFINITY;
        }
        match self.variant {
            Variant::Outbreak => self.outbreak_eval(full, grad),
            _ => self.rare_eval(full, grad),
        }
    }

    fn gather(&self, full_grad: &[f64], grad: &mut [f64]) {
        for (k, &pos) in self.free.iter().enumerate() {
            grad[k] = full_grad[pos];
        }
    }

    /// Log prior on the unconstrained scale, Jacobians included.
    pub fn log_prior(&self, x: &[f64]) -> Result<f64> {
        let full = self.expand(x)?;
        let mut g = vec![0.0; full.len()];
        Ok(self.prior_eval(&full, &mut g))
    }

    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        let full = self.expand(x)?;
        let mut g = vec![0.0; full.len()];
        Ok(self.likelihood_eval(&full, &mut g))
    }

    /// Log posterior and its gradient; an error only for a wrong-length vector.
    pub fn log_posterior_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; self.free.len()];
        self.expand(x)?;
        let v = self.log_density_grad(x, &mut g);
        Ok((v, g))
    }

    fn contact_from(&self, full: &[f64]) -> Vec<f64> {
        let n = self.panel.n_ages();
        let mut c = vec![0.0; n * n];
        let mut k = self.off.contact;
        for a in 0..n {
            for b in 0..=a {
                let v = full[k].exp();
                c[a * n + b] = v;
                c[b * n + a] = v;
                k += 1;
            }
        }
        c
    }

    fn contact_backward(&self, full: &[f64], dc: &[f64], grad: &mut [f64]) {
        let n = self.panel.n_ages();
        let mut k = self.off.contact;
        for a in 0..n {
            for b in 0..=a {
                let d = if a == b { dc[a * n + a] } else { dc[a * n + b] + dc[b * n + a] };
                grad[k] += d * full[k].exp();
                k += 1;
            }
        }
    }

    fn rare_eval(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.rare.as_ref().expect("rare data");
        let o = &self.off;
        let (nt, ng, ni) = self.panel.counts().dim();
        let gi = ng * ni;
        let epi = self.variant != Variant::Naive;
        let full = self.variant == Variant::Full;

        let psi = u[o.psi].exp();
        let size = 1.0 / psi;
        let ln_rise: Vec<f64> = d.distinct.iter().map(|&y| ln_rising(size, y)).collect();
        let dig_rise: Vec<f64> = d.distinct.iter().map(|&y| digamma_rising(size, y)).collect();

        // geographic weights
        let mut wg = vec![0.0; ng * ng];
        let mut wg_sum = vec![0.0; ng];
        let mut rho = 0.0;
        if epi {
            rho = u[o.rho].exp();
            for (w, l) in wg.iter_mut().zip(&d.log1p_order) {
                *w = (-rho * l).exp();
            }
            normalize_flat(&mut wg, &mut wg_sum, ng);
        }
        // age weights
        let mut wi = vec![0.0; ni * ni];
        let mut wi_sum = vec![0.0; ni];
        let mut kappa = 0.0;
        if full {
            wi = self.contact_from(u);
            normalize_flat(&mut wi, &mut wi_sum, ni);
        } else if self.variant == Variant::Reduced {
            kappa = u[o.kappa].exp();
            let m = match d.eigen.as_ref().expect("eigen basis").power(kappa) {
                Ok(m) => m,
                Err(_) => return f64::NEG_INFINITY,
            };
            wi = m.iter().copied().collect();
            normalize_flat(&mut wi, &mut wi_sum, ni);
            if wi_sum.iter().any(|s| !(*s > 0.0)) {
                return f64::NEG_INFINITY;
            }
        }
        // susceptibility
        let mut phi = vec![0.0; gi];
        if epi {
            for g in 0..ng {
                for i in 0..ni {
                    let mut l = u[o.eta_logpop] * d.log_share[g * ni + i] + u[o.eta0];
                    if g > 0 {
                        l += u[o.eta_geo + g - 1];
                    }
                    if i > 0 {
                        l += u[o.eta_age + i - 1];
                    }
                    phi[g * ni + i] = l.exp();
                }
            }
        }
        let theta = if full { u[o.theta].exp() } else { 0.0 };

        let mut d_wg = vec![0.0; ng * ng];
        let mut d_wi = vec![0.0; ni * ni];
        let mut d_phi = vec![0.0; gi];
        let mut d_log_psi = 0.0;
        let mut d_log_theta = 0.0;
        let mut r = vec![0.0; gi];
        let mut q = vec![0.0; gi];
        let mut s = vec![0.0; gi];
        let mut ds = vec![0.0; gi];
        let mut dq = vec![0.0; gi];
        let mut dr = vec![0.0; gi];
        let mut ll = 0.0;

        for t in 1..nt {
            let prev = &d.yf[(t - 1) * gi..t * gi];
            let (sn, cs, hol) = d.season[t];
            if epi {
                if full {
                    for c in 0..gi {
                        let sl = d.slot[(t - 1) * gi + c];
                        r[c] = if sl == NO_SLOT {
                            0.0
                        } else {
                            let m = prev[c];
                            let s2 = (theta / m).ln_1p();
                            (m.ln() - 0.5 * s2 + s2.sqrt() * u[o.z + sl as usize]).exp()
                        };
                    }
                } else {
                    r.copy_from_slice(prev);
                }
                // q = r wIᵀ, s = wG q
                mat_abt(&r, &wi, &mut q, ng, ni, ni);
                mat_ab(&wg, &q, &mut s, ng, ng, ni);
            }
            for g in 0..ng {
                for i in 0..ni {
                    let c = g * ni + i;
                    let mut ld = d.log_share[c] + u[o.beta0] + u[o.beta_sin + i] * sn
                        + u[o.beta_cos + i] * cs
                        + u[o.beta_xmas] * hol;
                    if g > 0 {
                        ld += u[o.beta_geo + g - 1];
                    }
                    if i > 0 {
                        ld += u[o.beta_age + i - 1];
                    }
                    let delta = ld.exp();
                    let lam = delta + phi[c] * s[c];
                    if !(lam > 0.0) || !lam.is_finite() {
                        return f64::NEG_INFINITY;
                    }
                    let k = d.y_idx[(t - 1) * gi + c] as usize;
                    let nb = negbin_logpmf_grad_cached(
                        d.distinct[k],
                        lam,
                        psi,
                        ln_rise[k],
                        dig_rise[k],
                        d.ln_fact[k],
                    );
                    ll += nb.logpmf;
                    d_log_psi += nb.d_log_psi;
                    let dld = nb.d_mu * delta;
                    grad[o.beta0] += dld;
                    grad[o.beta_sin + i] += dld * sn;
                    grad[o.beta_cos + i] += dld * cs;
                    grad[o.beta_xmas] += dld * hol;
                    if g > 0 {
                        grad[o.beta_geo + g - 1] += dld;
                    }
                    if i > 0 {
                        grad[o.beta_age + i - 1] += dld;
                    }
                    if epi {
                        d_phi[c] += nb.d_mu * s[c];
                        ds[c] = nb.d_mu * phi[c];
                    }
                }
            }
            if epi {
                // dwG += ds qᵀ ; dq = wGᵀ ds ; dwI += dqᵀ r ; dr = dq wI
                acc_abt(&ds, &q, &mut d_wg, ng, ni, ng);
                mat_atb(&wg, &ds, &mut dq, ng, ng, ni);
                acc_atb(&dq, &r, &mut d_wi, ng, ni, ni);
                if full {
                    mat_ab(&dq, &wi, &mut dr, ng, ni, ni);
                    for c in 0..gi {
                        let sl = d.slot[(t - 1) * gi + c];
                        if sl == NO_SLOT {
                            continue;
                        }
                        let m = prev[c];
                        let s2 = (theta / m).ln_1p();
                        let sg = s2.sqrt();
                        let z = u[o.z + sl as usize];
                        let g_r = dr[c] * r[c];
                        grad[o.z + sl as usize] += g_r * sg;
                        let hz = if sg > 0.0 { z / (2.0 * sg) } else { 0.0 };
                        d_log_theta += g_r * (theta / (m + theta)) * (hz - 0.5);
                    }
                }
            }
        }
        if !ll.is_finite() {
            return f64::NEG_INFINITY;
        }
        grad[o.psi] += d_log_psi;
        if epi {
            for g in 0..ng {
                for i in 0..ni {
                    let c = g * ni + i;
                    let dl = d_phi[c] * phi[c];
                    grad[o.eta0] += dl;
                    grad[o.eta_logpop] += dl * d.log_share[c];
                    if g > 0 {
                        grad[o.eta_geo + g - 1] += dl;
                    }
                    if i > 0 {
                        grad[o.eta_age + i - 1] += dl;
                    }
                }
            }
            let mut da = vec![0.0; ng * ng];
            column_normalize_backward(&wg, &wg_sum, &d_wg, ng, &mut da);
            let mut d_rho = 0.0;
            for k in 0..ng * ng {
                // a = exp(−ρ ln(1 + o)), so da/dρ = −ln(1 + o) a = −ln(1 + o) w colsum
                d_rho -= da[k] * d.log1p_order[k] * wg[k] * wg_sum[k % ng];
            }
            grad[o.rho] += d_rho * rho;
            let mut dm = vec![0.0; ni * ni];
            column_normalize_backward(&wi, &wi_sum, &d_wi, ni, &mut dm);
            if full {
                let c = self.contact_from(u);
                let _ = c;
                self.contact_backward(u, &dm, grad);
                grad[o.theta] += d_log_theta;
            } else {
                let deriv = d.eigen.as_ref().expect("eigen basis").power_derivative(kappa);
                let dk: f64 = dm.iter().zip(deriv.iter()).map(|(a, b)| a * b).sum();
                grad[o.kappa] += dk * kappa;
            }
        }
        ll
    }

    fn outbreak_eval(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.outbreak.as_ref().expect("outbreak data");
        let o = &self.off;
        let (nt, ng, ni) = self.panel.counts().dim();
        let gi = ng * ni;
        let counts = self.panel.counts().as_slice().expect("standard layout");

        let delta: Vec<f64> = (0..gi).map(|c| u[o.delta + c].exp()).collect();
        let theta = u[o.theta].exp();
        let kk = u[o.k].exp();
        let gamma = u[o.gamma].exp();
        let mut wi = self.contact_from(u);
        let mut alpha = vec![0.0; ni];
        normalize_flat(&mut wi, &mut alpha, ni);
        let mu = u[o.mean_log_rho];
        let sig = u[o.sd_log_rho].exp();
        let rho: Vec<f64> = (0..ng).map(|s| (mu + sig * u[o.rho_raw + s]).exp()).collect();
        let mut wg = vec![0.0; ng * ng];
        for g in 0..ng {
            for s in 0..ng {
                wg[g * ng + s] = (u[o.tau + g] - rho[s] * d.log_dist[g * ng + s]).exp();
            }
        }
        let mut wg_sum = vec![0.0; ng];
        normalize_flat(&mut wg, &mut wg_sum, ng);
        if wg.iter().chain(&wi).any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }

        let decay = (-gamma).exp();
        let mut yhat: Vec<f64> = counts[..gi].iter().map(|&y| y as f64).collect();
        let mut dyhat = vec![0.0; gi];

        let mut d_wg = vec![0.0; ng * ng];
        let mut d_wi = vec![0.0; ni * ni];
        let mut d_alpha = vec![0.0; ni];
        let mut d_delta = vec![0.0; gi];
        let (mut d_log_theta, mut d_log_k, mut d_gamma) = (0.0, 0.0, 0.0);
        let mut r = vec![0.0; gi];
        let mut q = vec![0.0; gi];
        let mut s = vec![0.0; gi];
        let mut ds = vec![0.0; gi];
        let mut dq = vec![0.0; gi];
        let mut dr = vec![0.0; gi];
        let mut ll = 0.0;

        for t in 1..nt {
            let log_r = u[o.log_r + t - 1];
            let big_r = log_r.exp();
            for c in 0..gi {
                let sl = d.slot[(t - 1) * gi + c];
                r[c] = if sl == NO_SLOT {
                    0.0
                } else {
                    let m = big_r * alpha[c % ni] * yhat[c];
                    let s2 = (theta / m).ln_1p();
                    (m.ln() - 0.5 * s2 + s2.sqrt() * u[o.z + sl as usize]).exp()
                };
            }
            mat_abt(&r, &wi, &mut q, ng, ni, ni);
            mat_ab(&wg, &q, &mut s, ng, ng, ni);
            for c in 0..gi {
                ds[c] = 0.0;
                let x = d.susceptible[(t - 1) * gi + c];
                if x == 0 {
                    continue;
                }
                let h = delta[c] + s[c] / d.pops[c];
                let p = -(-h).exp_m1();
                if !(p > 0.0 && p < 1.0) {
                    return f64::NEG_INFINITY;
                }
                let y = counts[t * gi + c];
                let bb = betabinom_logpmf_grad(y, x, p, kk, d.ln_choose[(t - 1) * gi + c]);
                ll += bb.logpmf;
                d_log_k += bb.d_log_k;
                let dh = bb.d_p * (-h).exp();
                d_delta[c] += dh;
                ds[c] = dh / d.pops[c];
            }
            acc_abt(&ds, &q, &mut d_wg, ng, ni, ng);
            mat_atb(&wg, &ds, &mut dq, ng, ng, ni);
            acc_atb(&dq, &r, &mut d_wi, ng, ni, ni);
            mat_ab(&dq, &wi, &mut dr, ng, ni, ni);
            for c in 0..gi {
                let sl = d.slot[(t - 1) * gi + c];
                if sl == NO_SLOT {
                    continue;
                }
                let i = c % ni;
                let m = big_r * alpha[i] * yhat[c];
                let s2 = (theta / m).ln_1p();
                let sg = s2.sqrt();
                let z = u[o.z + sl as usize];
                let g_r = dr[c] * r[c];
                grad[o.z + sl as usize] += g_r * sg;
                let hz = if sg > 0.0 { z / (2.0 * sg) } else { 0.0 };
                d_log_theta += g_r * (theta / (m + theta)) * (hz - 0.5);
                // d ln r / d ln m = 1 − θ/(m+θ) (z/(2σ) − 1/2)
                let dlm = g_r * (1.0 - theta / (m + theta) * (hz - 0.5));
                grad[o.log_r + t - 1] += dlm;
                d_alpha[i] += dlm / alpha[i];
                d_gamma += dlm / yhat[c] * dyhat[c];
            }
            for c in 0..gi {
                dyhat[c] = decay * (dyhat[c] - yhat[c]);
                yhat[c] = counts[t * gi + c] as f64 + decay * yhat[c];
            }
        }
        if !ll.is_finite() {
            return f64::NEG_INFINITY;
        }
        for c in 0..gi {
            grad[o.delta + c] += d_delta[c] * delta[c];
        }
        grad[o.theta] += d_log_theta;
        grad[o.k] += d_log_k;
        grad[o.gamma] += d_gamma * gamma;

        let mut dc = vec![0.0; ni * ni];
        column_normalize_backward(&wi, &alpha, &d_wi, ni, &mut dc);
        for row in 0..ni {
            for col in 0..ni {
                dc[row * ni + col] += d_alpha[col];
            }
        }
        self.contact_backward(u, &dc, grad);

        let mut da = vec![0.0; ng * ng];
        column_normalize_backward(&wg, &wg_sum, &d_wg, ng, &mut da);
        let mut d_sig = 0.0;
        for sidx in 0..ng {
            let mut d_rho = 0.0;
            for g in 0..ng {
                let k = g * ng + sidx;
                let a = wg[k] * wg_sum[sidx];
                grad[o.tau + g] += da[k] * a;
                d_rho -= da[k] * a * d.log_dist[k];
            }
            let dl = d_rho * rho[sidx];
            grad[o.mean_log_rho] += dl;
            grad[o.rho_raw + sidx] += dl * sig;
            d_sig += dl * u[o.rho_raw + sidx];
        }
        grad[o.sd_log_rho] += d_sig * sig;
        ll
    }

    /// Simulator matching the parameter vector `x`, for forecasting and
    /// prior-predictive checks. Full-model latents are lognormal.
    pub fn dynamics(&self, x: &[f64]) -> Result<ModelDynamics> {
        let u = self.expand(x)?;
        let o = &self.off;
        let (nt, ng, ni) = self.panel.counts().dim();
        let gi = ng * ni;
        let pops = self.panel.populations();
        match self.variant {
            Variant::Outbreak => {
                let d = self.outbreak.as_ref().expect("outbreak data");
                let mu = u[o.mean_log_rho];
                let sig = u[o.sd_log_rho].exp();
                let c = Array2::from_shape_vec((ni, ni), self.contact_from(&u)).expect("square");
                let p = OutbreakParams {
                    delta: Array2::from_shape_fn((ng, ni), |(g, i)| u[o.delta + g * ni + i].exp()),
                    log_r: u[o.log_r..o.log_r + nt - 1].to_vec(),
                    contact: ContactMatrix::new(c)?,
                    tau: (0..ng).map(|g| u[o.tau + g].exp()).collect(),
                    rho_geo: (0..ng).map(|s| (mu + sig * u[o.rho_raw + s]).exp()).collect(),
                    mean_log_rho: mu,
                    sd_log_rho: sig,
                    gamma: u[o.gamma].exp(),
                    theta: u[o.theta].exp(),
                    k: u[o.k].exp(),
                };
                Ok(ModelDynamics::Outbreak(OutbreakDynamics::new(&p, pops, &d.distance)?))
            }
            variant => {
                let d = self.rare.as_ref().expect("rare data");
                let with_ref = |start: usize, n: usize| {
                    std::iter::once(0.0).chain(u[start..start + n - 1].iter().copied()).collect::<Vec<_>>()
                };
                let epi = variant != Variant::Naive;
                let contact = if variant == Variant::Full {
                    ContactMatrix::new(Array2::from_shape_vec((ni, ni), self.contact_from(&u)).expect("square"))?
                } else {
                    ContactMatrix::new(Array2::ones((ni, ni)))?
                };
                let p = RareDiseaseParams {
                    beta0: u[o.beta0],
                    beta_geo: with_ref(o.beta_geo, ng),
                    beta_age: with_ref(o.beta_age, ni),
                    beta_sin: u[o.beta_sin..o.beta_sin + ni].to_vec(),
                    beta_cos: u[o.beta_cos..o.beta_cos + ni].to_vec(),
                    beta_xmas: u[o.beta_xmas],
                    eta0: if epi { u[o.eta0] } else { 0.0 },
                    eta_geo: if epi { with_ref(o.eta_geo, ng) } else { vec![0.0; ng] },
                    eta_age: if epi { with_ref(o.eta_age, ni) } else { vec![0.0; ni] },
                    eta_logpop: if epi { u[o.eta_logpop] } else { 0.0 },
                    rho: if epi { u[o.rho].exp() } else { 1.0 },
                    psi: u[o.psi].exp(),
                    theta: if variant == Variant::Full { u[o.theta].exp() } else { 0.0 },
                    contact,
                };
                let wg = if epi {
                    let mut w: Vec<f64> = d.log1p_order.iter().map(|l| (-p.rho * l).exp()).collect();
                    normalize_flat(&mut w, &mut vec![0.0; ng], ng);
                    Array2::from_shape_vec((ng, ng), w).expect("square")
                } else {
                    Array2::eye(ng)
                };
                let wi = match variant {
                    Variant::Full => {
                        let mut w = self.contact_from(&u);
                        normalize_flat(&mut w, &mut vec![0.0; ni], ni);
                        Array2::from_shape_vec((ni, ni), w).expect("square")
                    }
                    Variant::Reduced => {
                        let mut m = d.eigen.as_ref().expect("eigen").power(u[o.kappa].exp())?;
                        clamp_negative(&mut m)?;
                        crate::mixing::normalize_columns(&mut m);
                        m
                    }
                    _ => Array2::eye(ni),
                };
                let _ = gi;
                Ok(ModelDynamics::Rare(RareDynamics::with_weights(&p, pops, wg, wi, variant)?))
            }
        }
    }
}

/// Simulator for either instance.
#[derive(Debug, Clone)]
pub enum ModelDynamics {
    Rare(RareDynamics),
    Outbreak(OutbreakDynamics),
}

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let full = match self.expand(x) {
            Ok(f) => f,
            Err(_) => return f64::NAN,
        };
        let mut g = vec![0.0; full.len()];
        let lp = self.prior_eval(&full, &mut g);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let ll = self.likelihood_eval(&full, &mut g);
        if !ll.is_finite() {
            return f64::NEG_INFINITY;
        }
        self.gather(&g, grad);
        if grad.iter().any(|v| !v.is_finite()) {
            return f64::NAN;
        }
        lp + ll
    }
}

/// Divides each column of a row-major `n × n` buffer by its sum.
fn normalize_flat(w: &mut [f64], sums: &mut [f64], n: usize) {
    for c in 0..n {
        sums[c] = (0..n).map(|r| w[r * n + c]).sum();
    }
    for r in 0..n {
        for c in 0..n {
            w[r * n + c] /= sums[c];
        }
    }
}

/// `out (m×p) = a (m×k) · b (k×p)`.
fn mat_ab(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        for j in 0..p {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * p + j];
            }
            out[i * p + j] = s;
        }
    }
}

/// `out (m×p) = a (m×k) · bᵀ` with `b` stored `p×k`.
fn mat_abt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        for j in 0..p {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[j * k + l];
            }
            out[i * p + j] = s;
        }
    }
}

/// `out (k×p) = aᵀ · b` with `a` stored `m×k` and `b` stored `m×p`.
fn mat_atb(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..k {
        for j in 0..p {
            let mut s = 0.0;
            for l in 0..m {
                s += a[l * k + i] * b[l * p + j];
            }
            out[i * p + j] = s;
        }
    }
}

/// `out (m×p) += a (m×k) · bᵀ` with `b` stored `p×k`.
fn acc_abt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        for j in 0..p {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[j * k + l];
            }
            out[i * p + j] += s;
        }
    }
}

/// `out (k×p) += aᵀ · b` with `a` stored `m×k` and `b` stored `m×p`.
fn acc_atb(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..k {
        for j in 0..p {
            let mut s = 0.0;
            for l in 0..m {
                s += a[l * k + i] * b[l * p + j];
            }
            out[i * p + j] += s;
        }
    }
}

/// Outcome of comparing one gradient coordinate against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub pass: bool,
}

/// Richardson-extrapolated central differences from steps `h` and `h/2`,
/// accurate to `O(h⁴)`, so `h` can be large enough (around 1e-3) to keep
/// cancellation in a large log density negligible. A coordinate passes
/// when `|analytic − numeric| ≤ rel_tol · max(|analytic|, |numeric|) + abs_tol`.
pub fn gradient_check<T: LogDensity + ?Sized>(
    target: &T,
    x: &[f64],
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Vec<GradientCheck> {
    let mut grad = vec![0.0; target.dim()];
    target.log_density_grad(x, &mut grad);
    let mut xp = x.to_vec();
    let mut central = |k: usize, step: f64| {
        xp[k] = x[k] + step;
        let fp = target.log_density(&xp);
        xp[k] = x[k] - step;
        let fm = target.log_density(&xp);
        xp[k] = x[k];
        (fp - fm) / (2.0 * step)
    };
    (0..x.len())
        .map(|k| {
            let numeric = (4.0 * central(k, 0.5 * h) - central(k, h)) / 3.0;
            let analytic = grad[k];
            let tol = rel_tol * analytic.abs().max(numeric.abs()) + abs_tol;
            GradientCheck {
                index: k,
                analytic,
                numeric,
                pass: (analytic - numeric).abs() <= tol,
            }
        })
        .collect()
}
