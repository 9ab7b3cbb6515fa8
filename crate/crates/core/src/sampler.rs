//! No-U-turn sampler with multinomial trajectory sampling, a diagonal
//! metric, dual-averaging step size and windowed metric adaptation, plus
//! convergence diagnostics.
//!
//! The transition follows the reference implementation used by Stan: the
//! trajectory doubles in a random direction, each subtree is checked for a
//! U-turn with the generalized criterion (including the two extra checks
//! across the subtree junction), and the proposal is drawn progressively
//! with biased sampling at the top level.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::posterior::LogDensity;
use crate::rng::{stream, SimRng};
use crate::special::{log_sum_exp, std_normal_quantile};

/// Energy error beyond which a trajectory is flagged divergent.
pub const MAX_DELTA_H: f64 = 1000.0;
const INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub seed: u64,
    /// Initial values are uniform on `(-init_radius, init_radius)`.
    pub init_radius: f64,
    /// Keep every `thin`-th post-warmup draw.
    pub thin: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            target_accept: 0.8,
            max_treedepth: 10,
            seed: 1,
            init_radius: 2.0,
            thin: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.samples == 0 || self.thin == 0 {
            return Err(Error::Config("chains, samples and thin must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_treedepth == 0 || self.max_treedepth > 30 {
            return Err(Error::Config("max_treedepth must be in 1..=30".into()));
        }
        if !(self.init_radius > 0.0) {
            return Err(Error::Config("init_radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    /// Potential energy, `-log density`.
    v: f64,
    /// Gradient of the potential.
    dv: Vec<f64>,
}

/// Dual averaging of the log step size.
#[derive(Debug, Clone)]
struct StepSizeAdapter {
    counter: f64,
    s_bar: f64,
    x_bar: f64,
    mu: f64,
    delta: f64,
}

impl StepSizeAdapter {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(delta: f64) -> Self {
        Self {
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
            mu: 10f64.ln(),
            delta,
        }
    }

    fn restart(&mut self) {
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }
}

/// Welford accumulator feeding the windowed metric estimate.
#[derive(Debug, Clone)]
struct VarianceAdapter {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    enabled: bool,
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceAdapter {
    fn new(dim: usize, num_warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        let enabled = num_warmup >= 20;
        if enabled && init + base + term > num_warmup {
            init = (0.15 * num_warmup as f64) as usize;
            term = (0.1 * num_warmup as f64) as usize;
            base = num_warmup - (init + term);
        }
        Self {
            num_warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_window: (init + base).saturating_sub(1),
            counter: 0,
            enabled,
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn end_of_window(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window = last;
        }
    }

    /// Adds a draw; returns an updated inverse metric at the end of a window.
    fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if !self.enabled {
            return None;
        }
        if self.in_window() {
            self.n += 1;
            for k in 0..q.len() {
                let d = q[k] - self.mean[k];
                self.mean[k] += d / self.n as f64;
                self.m2[k] += d * (q[k] - self.mean[k]);
            }
        }
        if self.end_of_window() {
            self.compute_next_window();
            let n = self.n as f64;
            let var = self
                .m2
                .iter()
                .map(|m| {
                    let v = if self.n > 1 { m / (n - 1.0) } else { 1.0 };
                    (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))
                })
                .collect();
            self.n = 0;
            self.mean.iter_mut().for_each(|v| *v = 0.0);
            self.m2.iter_mut().for_each(|v| *v = 0.0);
            self.counter += 1;
            return Some(var);
        }
        self.counter += 1;
        None
    }
}

/// Per-iteration sampler diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransitionStats {
    pub log_density: f64,
    pub accept_stat: f64,
    pub treedepth: u32,
    pub n_leapfrog: u32,
    pub divergent: bool,
    pub energy: f64,
}

struct Nuts<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    inv_metric: Vec<f64>,
    eps: f64,
    max_depth: usize,
    rng: SimRng,
    z: Point,
    n_leapfrog: u32,
    sum_metro_prob: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl<'a, T: LogDensity + ?Sized> Nuts<'a, T> {
    fn evaluate(&self, q: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; q.len()];
        let lp = self.target.log_density_grad(q, &mut g);
        g.iter_mut().for_each(|v| *v = -*v);
        (-lp, g)
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let kinetic: f64 = z
            .p
            .iter()
            .zip(&self.inv_metric)
            .map(|(p, m)| p * p * m)
            .sum();
        z.v + 0.5 * kinetic
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum(&mut self) {
        for k in 0..self.z.p.len() {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            self.z.p[k] = n / self.inv_metric[k].sqrt();
        }
    }

    fn leapfrog(&mut self, eps: f64) {
        let z = &mut self.z;
        for k in 0..z.p.len() {
            z.p[k] -= 0.5 * eps * z.dv[k];
        }
        for k in 0..z.q.len() {
            z.q[k] += eps * self.inv_metric[k] * z.p[k];
        }
        let (v, dv) = {
            let mut g = vec![0.0; z.q.len()];
            let lp = self.target.log_density_grad(&z.q, &mut g);
            g.iter_mut().for_each(|x| *x = -*x);
            (-lp, g)
        };
        z.v = v;
        z.dv = dv;
        for k in 0..z.p.len() {
            z.p[k] -= 0.5 * eps * z.dv[k];
        }
    }

    fn energy_at(&self) -> f64 {
        let h = self.hamiltonian(&self.z);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    /// Heuristic search for a step size with one-step acceptance near 0.8.
    fn init_stepsize(&mut self) -> Result<()> {
        if self.eps == 0.0 || self.eps > 1e7 || !self.eps.is_finite() {
            return Ok(());
        }
        let start = self.z.clone();
        let log_target = 0.8f64.ln();
        self.sample_momentum();
        let h0 = self.hamiltonian(&self.z);
        self.leapfrog(self.eps);
        let delta_h = h0 - self.energy_at();
        let direction = if delta_h > log_target { 1 } else { -1 };
        loop {
            self.z = start.clone();
            self.sample_momentum();
            let h0 = self.hamiltonian(&self.z);
            self.leapfrog(self.eps);
            let delta_h = h0 - self.energy_at();
            if (direction == 1 && !(delta_h > log_target)) || (direction == -1 && !(delta_h < log_target)) {
                break;
            }
            self.eps = if direction == 1 { 2.0 * self.eps } else { 0.5 * self.eps };
            if self.eps > 1e7 {
                self.z = start;
                return Err(Error::Numeric(
                    "step size search diverged upward; the target looks improper".into(),
                ));
            }
            if self.eps == 0.0 {
                self.z = start;
                return Err(Error::Numeric("no acceptably small step size".into()));
            }
        }
        self.z = start;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z_propose: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.energy_at();
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(&[*log_sum_weight, h0 - h]);
            self.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            *z_propose = self.z.clone();
            *p_sharp_beg = self.p_sharp(&self.z.p);
            *p_sharp_end = p_sharp_beg.clone();
            for (r, p) in rho.iter_mut().zip(&self.z.p) {
                *r += p;
            }
            *p_beg = self.z.p.clone();
            *p_end = p_beg.clone();
            return !self.divergent;
        }
        let dim = rho.len();

        let mut rho_init = vec![0.0; dim];
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            &mut lsw_init,
        ) {
            return false;
        }

        let mut z_propose_final = self.z.clone();
        let mut rho_final = vec![0.0; dim];
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            &mut lsw_final,
        ) {
            return false;
        }

        let lsw_subtree = log_sum_exp(&[lsw_init, lsw_final]);
        *log_sum_weight = log_sum_exp(&[*log_sum_weight, lsw_subtree]);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if self.rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let rho_ext = add(&rho_init, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let rho_ext = add(&rho_final, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }

    fn transition(&mut self) -> TransitionStats {
        self.sample_momentum();
        let dim = self.z.q.len();
        let mut z_fwd = self.z.clone();
        let mut z_bck = self.z.clone();
        let mut z_sample = self.z.clone();
        let mut z_propose = self.z.clone();

        let p0 = self.z.p.clone();
        let ps0 = self.p_sharp(&p0);
        let mut p_fwd_fwd = p0.clone();
        let mut p_sharp_fwd_fwd = ps0.clone();
        let mut p_fwd_bck = p0.clone();
        let mut p_sharp_fwd_bck = ps0.clone();
        let mut p_bck_fwd = p0.clone();
        let mut p_sharp_bck_fwd = ps0.clone();
        let mut p_bck_bck = p0.clone();
        let mut p_sharp_bck_bck = ps0;
        let mut rho = p0;

        let mut log_sum_weight = 0.0;
        let h0 = self.hamiltonian(&self.z);
        self.n_leapfrog = 0;
        self.sum_metro_prob = 0.0;
        self.divergent = false;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if self.rng.random::<f64>() > 0.5 {
                self.z = z_fwd.clone();
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.copy_from_slice(&p_fwd_bck);
                p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_bck);
                let v = self.build_tree(
                    depth,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut lsw_subtree,
                );
                z_fwd = self.z.clone();
                v
            } else {
                self.z = z_bck.clone();
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.copy_from_slice(&p_bck_fwd);
                p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_fwd);
                let v = self.build_tree(
                    depth,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut lsw_subtree,
                );
                z_bck = self.z.clone();
                v
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight {
                z_sample = z_propose.clone();
            } else {
                let accept = (lsw_subtree - log_sum_weight).exp();
                if self.rng.random::<f64>() < accept {
                    z_sample = z_propose.clone();
                }
            }
            log_sum_weight = log_sum_exp(&[log_sum_weight, lsw_subtree]);
            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext = add(&rho_bck, &p_fwd_bck);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext = add(&rho_fwd, &p_bck_fwd);
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }
        self.z = z_sample;
        TransitionStats {
            log_density: -self.z.v,
            accept_stat: self.sum_metro_prob / self.n_leapfrog.max(1) as f64,
            treedepth: depth as u32,
            n_leapfrog: self.n_leapfrog,
            divergent: self.divergent,
            energy: self.hamiltonian(&self.z),
        }
    }
}

/// Output of one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Array2<f64>,
    pub stats: Vec<TransitionStats>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergences: usize,
}

fn initial_point<T: LogDensity + ?Sized>(
    target: &T,
    radius: f64,
    chain: usize,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let dim = target.dim();
    let mut g = vec![0.0; dim];
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-radius..radius)).collect();
        let lp = target.log_density_grad(&q, &mut g);
        if lp.is_finite() && g.iter().all(|v| v.is_finite()) {
            return Ok(q);
        }
    }
    Err(Error::Initialization(chain))
}

/// Runs chain `chain` with its own random stream.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
    init: Option<&[f64]>,
) -> Result<ChainOutput> {
    config.validate()?;
    let dim = target.dim();
    let mut rng = stream(config.seed, chain as u64);
    let q = match init {
        Some(q) => {
            if q.len() != dim {
                return Err(Error::Shape(format!("initial point has {} entries, target {dim}", q.len())));
            }
            let mut g = vec![0.0; dim];
            if !target.log_density_grad(q, &mut g).is_finite() {
                return Err(Error::Initialization(chain));
            }
            q.to_vec()
        }
        None => initial_point(target, config.init_radius, chain, &mut rng)?,
    };
    let mut nuts = Nuts {
        target,
        inv_metric: vec![1.0; dim],
        eps: 1.0,
        max_depth: config.max_treedepth,
        rng,
        z: Point {
            q: q.clone(),
            p: vec![0.0; dim],
            v: 0.0,
            dv: vec![0.0; dim],
        },
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let (v, dv) = nuts.evaluate(&q);
    nuts.z.v = v;
    nuts.z.dv = dv;

    let mut step = StepSizeAdapter::new(config.target_accept);
    let mut metric = VarianceAdapter::new(dim, config.warmup);
    nuts.init_stepsize()?;
    let mut warmup_divergences = 0;
    for _ in 0..config.warmup {
        let s = nuts.transition();
        warmup_divergences += s.divergent as usize;
        nuts.eps = step.learn(s.accept_stat);
        if let Some(var) = metric.learn(&nuts.z.q) {
            nuts.inv_metric = var;
            nuts.init_stepsize()?;
            step.mu = (10.0 * nuts.eps).ln();
            step.restart();
        }
    }
    if config.warmup > 0 {
        nuts.eps = step.x_bar.exp();
    }

    let kept = config.samples.div_ceil(config.thin);
    let mut draws = Array2::zeros((kept, dim));
    let mut stats = Vec::with_capacity(kept);
    for it in 0..config.samples {
        let s = nuts.transition();
        if it % config.thin == 0 {
            let row = it / config.thin;
            for (k, v) in nuts.z.q.iter().enumerate() {
                draws[(row, k)] = *v;
            }
            stats.push(s);
        }
    }
    Ok(ChainOutput {
        draws,
        stats,
        step_size: nuts.eps,
        inv_metric: nuts.inv_metric,
        warmup_divergences,
    })
}

/// Runs all chains in parallel on the current rayon pool.
pub fn sample<T: LogDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    names: Vec<String>,
    inits: Option<&[Vec<f64>]>,
) -> Result<DrawSet> {
    config.validate()?;
    if names.len() != target.dim() {
        return Err(Error::Shape(format!("{} names for dimension {}", names.len(), target.dim())));
    }
    if let Some(i) = inits {
        if i.len() != config.chains {
            return Err(Error::Shape(format!("{} initial points for {} chains", i.len(), config.chains)));
        }
    }
    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c, inits.map(|i| i[c].as_slice())))
        .collect::<Result<_>>()?;
    Ok(DrawSet::from_chains(names, outputs))
}

/// Post-warmup draws of every chain plus sampler diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSet {
    pub names: Vec<String>,
    /// `(chain, draw, parameter)`.
    pub draws: Array3<f64>,
    /// `(chain, draw)` sampler statistics.
    pub stats: Array2<TransitionStats>,
    pub step_size: Vec<f64>,
    pub inv_metric: Vec<Vec<f64>>,
    pub warmup_divergences: Vec<usize>,
}

/// Posterior summary of one coordinate.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub rhat: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
    /// Empty, or `constant` when every draw is identical.
    pub flag: String,
}

const STAT_COLUMNS: [&str; 6] = [
    "lp__",
    "accept_stat__",
    "treedepth__",
    "n_leapfrog__",
    "divergent__",
    "energy__",
];

impl DrawSet {
    pub fn from_chains(names: Vec<String>, chains: Vec<ChainOutput>) -> Self {
        let m = chains.len();
        let n = chains.first().map_or(0, |c| c.draws.nrows());
        let d = names.len();
        let mut draws = Array3::zeros((m, n, d));
        let mut stats = Array2::from_elem((m, n), TransitionStats::default());
        for (c, out) in chains.iter().enumerate() {
            draws.index_axis_mut(Axis(0), c).assign(&out.draws);
            for (k, s) in out.stats.iter().enumerate() {
                stats[(c, k)] = *s;
            }
        }
        Self {
            names,
            draws,
            stats,
            step_size: chains.iter().map(|c| c.step_size).collect(),
            inv_metric: chains.iter().map(|c| c.inv_metric.clone()).collect(),
            warmup_divergences: chains.iter().map(|c| c.warmup_divergences).collect(),
        }
    }

    pub fn n_chains(&self) -> usize {
        self.draws.dim().0
    }

    pub fn n_draws(&self) -> usize {
        self.draws.dim().1
    }

    pub fn dim(&self) -> usize {
        self.draws.dim().2
    }

    /// Draws of coordinate `k` as `(chain, draw)`.
    pub fn column(&self, k: usize) -> Array2<f64> {
        self.draws.index_axis(Axis(2), k).to_owned()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// All draws pooled across chains, chain-major.
    pub fn pooled(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_chains() * self.n_draws());
        for c in 0..self.n_chains() {
            for t in 0..self.n_draws() {
                out.push(self.draws.slice(ndarray::s![c, t, ..]).to_vec());
            }
        }
        out
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    /// Applies `f` to every draw, e.g. to move to the natural scale.
    pub fn map_draws(&self, names: Vec<String>, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let (m, n, _) = self.draws.dim();
        let d = names.len();
        let mut draws = Array3::zeros((m, n, d));
        for c in 0..m {
            for t in 0..n {
                let v = f(self.draws.slice(ndarray::s![c, t, ..]).as_slice().expect("contiguous"));
                for (k, x) in v.into_iter().enumerate() {
                    draws[(c, t, k)] = x;
                }
            }
        }
        Self {
            names,
            draws,
            ..self.clone()
        }
    }

    pub fn summary(&self) -> Vec<ParamSummary> {
        (0..self.dim())
            .map(|k| {
                let col = self.column(k);
                let mut all: Vec<f64> = col.iter().copied().collect();
                let n = all.len() as f64;
                let mean = all.iter().sum::<f64>() / n;
                let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
                all.sort_by(f64::total_cmp);
                let constant = all.first() == all.last();
                ParamSummary {
                    name: self.names[k].clone(),
                    mean,
                    sd,
                    q05: quantile_sorted(&all, 0.05),
                    q50: quantile_sorted(&all, 0.5),
                    q95: quantile_sorted(&all, 0.95),
                    rhat: split_rhat(&col),
                    ess_bulk: ess_bulk(&col),
                    ess_tail: ess_tail(&col),
                    flag: if constant { "constant".into() } else { String::new() },
                }
            })
            .collect()
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in self.summary() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `chain_<k>.csv` per chain and `adaptation.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for c in 0..self.n_chains() {
            let mut w = csv::Writer::from_path(dir.join(format!("chain_{}.csv", c + 1)))?;
            let mut header: Vec<String> = STAT_COLUMNS.iter().map(|s| s.to_string()).collect();
            header.extend(self.names.iter().cloned());
            w.write_record(&header)?;
            for t in 0..self.n_draws() {
                let s = self.stats[(c, t)];
                let mut rec = vec![
                    format!("{}", s.log_density),
                    format!("{}", s.accept_stat),
                    s.treedepth.to_string(),
                    s.n_leapfrog.to_string(),
                    (s.divergent as u8).to_string(),
                    format!("{}", s.energy),
                ];
                rec.extend((0..self.dim()).map(|k| format!("{}", self.draws[(c, t, k)])));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        let mut f = fs::File::create(dir.join("adaptation.csv"))?;
        write!(f, "chain,step_size,warmup_divergences")?;
        for n in &self.names {
            write!(f, ",{n}")?;
        }
        writeln!(f)?;
        for c in 0..self.n_chains() {
            write!(f, "{},{},{}", c + 1, self.step_size[c], self.warmup_divergences[c])?;
            for v in &self.inv_metric[c] {
                write!(f, ",{v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }

    /// Reads what [`DrawSet::write_dir`] wrote.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut chains = Vec::new();
        let mut names: Option<Vec<String>> = None;
        for c in 1.. {
            let path = dir.join(format!("chain_{c}.csv"));
            if !path.exists() {
                break;
            }
            let mut r = csv::Reader::from_path(&path)?;
            let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
            if header.len() < STAT_COLUMNS.len() || header[..STAT_COLUMNS.len()] != STAT_COLUMNS {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: 1,
                    msg: "missing sampler statistic columns".into(),
                });
            }
            let these = header[STAT_COLUMNS.len()..].to_vec();
            match &names {
                Some(n) if *n != these => {
                    return Err(Error::Parse {
                        path,
                        line: 1,
                        msg: "parameter columns differ from chain 1".into(),
                    })
                }
                _ => names = Some(these),
            }
            let dim = header.len() - STAT_COLUMNS.len();
            let mut rows = Vec::new();
            let mut stats = Vec::new();
            for (ln, rec) in r.records().enumerate() {
                let rec = rec?;
                let num = |k: usize| -> Result<f64> {
                    rec.get(k).unwrap_or("").parse::<f64>().map_err(|e| Error::Parse {
                        path: path.clone(),
                        line: ln + 2,
                        msg: format!("column {}: {e}", k + 1),
                    })
                };
                stats.push(TransitionStats {
                    log_density: num(0)?,
                    accept_stat: num(1)?,
                    treedepth: num(2)? as u32,
                    n_leapfrog: num(3)? as u32,
                    divergent: num(4)? != 0.0,
                    energy: num(5)?,
                });
                for k in 0..dim {
                    rows.push(num(STAT_COLUMNS.len() + k)?);
                }
            }
            let n = stats.len();
            chains.push(ChainOutput {
                draws: Array2::from_shape_vec((n, dim), rows).map_err(|e| Error::Shape(e.to_string()))?,
                stats,
                step_size: f64::NAN,
                inv_metric: vec![f64::NAN; dim],
                warmup_divergences: 0,
            });
        }
        let names = names.ok_or_else(|| Error::Config(format!("no chain_1.csv in {}", dir.display())))?;
        if chains.windows(2).any(|w| w[0].draws.nrows() != w[1].draws.nrows()) {
            return Err(Error::Shape("chains have different numbers of draws".into()));
        }
        Ok(Self::from_chains(names, chains))
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Splits each chain in half, dropping the middle draw of odd-length chains.
fn split_chains(x: &Array2<f64>) -> Array2<f64> {
    let (m, n) = x.dim();
    let half = n / 2;
    let mut out = Array2::zeros((2 * m, half));
    for c in 0..m {
        for t in 0..half {
            out[(2 * c, t)] = x[(c, t)];
            out[(2 * c + 1, t)] = x[(c, n - half + t)];
        }
    }
    out
}

/// Normal scores of average ranks, `Φ⁻¹((r − 3/8)/(S + 1/4))`.
fn rank_normalize(x: &Array2<f64>) -> Array2<f64> {
    let flat: Vec<f64> = x.iter().copied().collect();
    let s = flat.len();
    let mut idx: Vec<usize> = (0..s).collect();
    idx.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut rank = vec![0.0; s];
    let mut k = 0;
    while k < s {
        let mut j = k;
        while j + 1 < s && flat[idx[j + 1]] == flat[idx[k]] {
            j += 1;
        }
        let avg = (k + j) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=j] {
            rank[i] = avg;
        }
        k = j + 1;
    }
    let z: Vec<f64> = rank
        .iter()
        .map(|r| std_normal_quantile((r - 0.375) / (s as f64 + 0.25)))
        .collect();
    Array2::from_shape_vec(x.dim(), z).expect("same shape")
}

fn classic_rhat(x: &Array2<f64>) -> f64 {
    let (m, n) = x.dim();
    if m < 2 || n < 2 {
        return f64::NAN;
    }
    let nf = n as f64;
    let means: Vec<f64> = x.rows().into_iter().map(|r| r.sum() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf / (m as f64 - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = x
        .rows()
        .into_iter()
        .zip(&means)
        .map(|(r, mu)| r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if !(w > 0.0) {
        return f64::NAN;
    }
    (((nf - 1.0) / nf * w + b / nf) / w).sqrt()
}

fn is_constant(x: &Array2<f64>) -> bool {
    let first = x.iter().next().copied();
    x.iter().all(|v| Some(*v) == first)
}

/// Rank-normalized split R̂: the larger of the bulk and folded versions.
/// NaN for a constant coordinate.
pub fn split_rhat(x: &Array2<f64>) -> f64 {
    if is_constant(x) || x.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let split = split_chains(x);
    let bulk = classic_rhat(&rank_normalize(&split));
    let mut all: Vec<f64> = split.iter().copied().collect();
    all.sort_by(f64::total_cmp);
    let med = quantile_sorted(&all, 0.5);
    let folded = classic_rhat(&rank_normalize(&split.mapv(|v| (v - med).abs())));
    bulk.max(folded)
}

/// Effective sample size of a `(chain, draw)` array with Geyer's initial
/// monotone sequence over averaged chain autocovariances.
pub fn ess(x: &Array2<f64>) -> f64 {
    let (m, n) = x.dim();
    if n < 4 || is_constant(x) {
        return f64::NAN;
    }
    let nf = n as f64;
    let means: Vec<f64> = x.rows().into_iter().map(|r| r.sum() / nf).collect();
    // autocovariance at lag t averaged over chains, divisor n
    let acov = |t: usize| -> f64 {
        let mut s = 0.0;
        for (c, mu) in means.iter().enumerate() {
            let r = x.row(c);
            let mut a = 0.0;
            for i in 0..n - t {
                a += (r[i] - mu) * (r[i + t] - mu);
            }
            s += a / nf;
        }
        s / m as f64
    };
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let g = means.iter().sum::<f64>() / m as f64;
        var_plus += means.iter().map(|v| (v - g).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut t = 1;
    while t < n - 5 && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 4 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let mut tau = -1.0 + 2.0 * rho[..max_t.min(n)].iter().sum::<f64>() + rho.get(max_t).copied().unwrap_or(0.0);
    tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS: [`ess`] of the rank-normalized split chains.
pub fn ess_bulk(x: &Array2<f64>) -> f64 {
    if is_constant(x) {
        return f64::NAN;
    }
    ess(&rank_normalize(&split_chains(x)))
}

/// Tail ESS: the smaller ESS of the 5% and 95% quantile indicators.
pub fn ess_tail(x: &Array2<f64>) -> f64 {
    if is_constant(x) {
        return f64::NAN;
    }
    let split = split_chains(x);
    let mut all: Vec<f64> = split.iter().copied().collect();
    all.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&all, 0.05);
    let hi = quantile_sorted(&all, 0.95);
    let a = ess(&split.mapv(|v| (v <= lo) as u8 as f64));
    let b = ess(&split.mapv(|v| (v <= hi) as u8 as f64));
    a.min(b)
}

/// One-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// Simple analytic targets for testing and benchmarking the sampler.
pub mod targets {
    use super::LogDensity;

    /// Independent normals with the given scales.
    #[derive(Debug, Clone)]
    pub struct DiagNormal {
        pub mean: Vec<f64>,
        pub sd: Vec<f64>,
    }

    impl DiagNormal {
        pub fn standard(dim: usize) -> Self {
            Self {
                mean: vec![0.0; dim],
                sd: vec![1.0; dim],
            }
        }
    }

    impl LogDensity for DiagNormal {
        fn dim(&self) -> usize {
            self.mean.len()
        }

        fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for k in 0..x.len() {
                let z = (x[k] - self.mean[k]) / self.sd[k];
                lp -= 0.5 * z * z;
                grad[k] = -z / self.sd[k];
            }
            lp
        }
    }

    /// Bivariate standard normal with correlation `rho`.
    #[derive(Debug, Clone)]
    pub struct CorrelatedNormal {
        pub rho: f64,
    }

    impl LogDensity for CorrelatedNormal {
        fn dim(&self) -> usize {
            2
        }

        fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let c = 1.0 / (1.0 - self.rho * self.rho);
            let (a, b) = (x[0], x[1]);
            grad[0] = -c * (a - self.rho * b);
            grad[1] = -c * (b - self.rho * a);
            -0.5 * c * (a * a - 2.0 * self.rho * a * b + b * b)
        }
    }
}
