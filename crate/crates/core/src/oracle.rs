//! Closed-form one-step conditional moments of the rare-disease transition
//! and a Monte Carlo engine to check simulators against them.
//!
//! With `r ~ Gamma(mean R0·Y, var θ·R0·Y)` per source cell and
//! `Y | λ ~ NegBin(λ, ψ)`:
//!
//! ```text
//! E[Y]         = δ + R0 φ Σ wG wI Y_prev
//! Var[Y]       = μ(1 + ψμ) + θ(1 + ψ) V,    V = R0 φ² Σ (wG wI)² Y_prev
//! Cov[Y_a, Y_b] = θ R0 φ_a φ_b Σ wG wI (row a) · wG wI (row b) · Y_prev
//! ```

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::Result;
use crate::rng::{stream, SimRng};

/// A recipient cell `(region, age)`.
pub type Cell = (usize, usize);

fn check_dims(delta: &Array2<f64>, phi: &Array2<f64>, wg: &Array2<f64>, wi: &Array2<f64>, y: &Array2<f64>) {
    let (g, i) = delta.dim();
    assert_eq!(phi.dim(), (g, i), "phi shape");
    assert_eq!(y.dim(), (g, i), "previous counts shape");
    assert_eq!(wg.dim(), (g, g), "geographic weights shape");
    assert_eq!(wi.dim(), (i, i), "age weights shape");
}

/// One-step conditional mean; the same for every latent dispersion.
pub fn conditional_mean(
    delta: &Array2<f64>,
    phi: &Array2<f64>,
    wg: &Array2<f64>,
    wi: &Array2<f64>,
    y_prev: &Array2<f64>,
    r0: f64,
) -> Array2<f64> {
    check_dims(delta, phi, wg, wi, y_prev);
    let s = wg.dot(y_prev).dot(&wi.t());
    delta + &(phi * &s * r0)
}

/// Excess-variance kernel `V = R0 φ² Σ (wG wI)² Y_prev`.
pub fn excess_kernel(
    phi: &Array2<f64>,
    wg: &Array2<f64>,
    wi: &Array2<f64>,
    y_prev: &Array2<f64>,
    r0: f64,
) -> Array2<f64> {
    let wg2 = wg.mapv(|v| v * v);
    let wi2 = wi.mapv(|v| v * v);
    let s = wg2.dot(y_prev).dot(&wi2.t());
    phi.mapv(|p| p * p) * &s * r0
}

#[allow(clippy::too_many_arguments)]
pub fn conditional_variance(
    delta: &Array2<f64>,
    phi: &Array2<f64>,
    wg: &Array2<f64>,
    wi: &Array2<f64>,
    y_prev: &Array2<f64>,
    r0: f64,
    theta: f64,
    psi: f64,
) -> Array2<f64> {
    let mu = conditional_mean(delta, phi, wg, wi, y_prev, r0);
    let v = excess_kernel(phi, wg, wi, y_prev, r0);
    ndarray::Zip::from(&mu)
        .and(&v)
        .map_collect(|&m, &k| m * (1.0 + psi * m) + theta * (1.0 + psi) * k)
}

/// Covariance between distinct recipient cells `a` and `b`; never negative.
#[allow(clippy::too_many_arguments)]
pub fn conditional_covariance(
    a: Cell,
    b: Cell,
    phi: &Array2<f64>,
    wg: &Array2<f64>,
    wi: &Array2<f64>,
    y_prev: &Array2<f64>,
    r0: f64,
    theta: f64,
) -> f64 {
    let (g, i) = y_prev.dim();
    let mut s = 0.0;
    for gs in 0..g {
        for is in 0..i {
            s += wg[(a.0, gs)] * wi[(a.1, is)] * wg[(b.0, gs)] * wi[(b.1, is)] * y_prev[(gs, is)];
        }
    }
    theta * r0 * phi[a] * phi[b] * s
}

/// Empirical one-step moments with jackknife standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub n_draws: usize,
    pub mean: Array2<f64>,
    pub mean_se: Array2<f64>,
    pub var: Array2<f64>,
    pub var_se: Array2<f64>,
    pub cov: Vec<f64>,
    pub cov_se: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockSums {
    n: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
    cross: Vec<f64>,
}

/// Means, variances and pair covariances.
type Estimates = (Vec<f64>, Vec<f64>, Vec<f64>);

impl BlockSums {
    fn new(cells: usize, pairs: usize) -> Self {
        Self {
            n: 0.0,
            s1: vec![0.0; cells],
            s2: vec![0.0; cells],
            cross: vec![0.0; pairs],
        }
    }

    fn add(&mut self, o: &Self) {
        self.n += o.n;
        self.s1.iter_mut().zip(&o.s1).for_each(|(a, b)| *a += b);
        self.s2.iter_mut().zip(&o.s2).for_each(|(a, b)| *a += b);
        self.cross.iter_mut().zip(&o.cross).for_each(|(a, b)| *a += b);
    }

    fn sub(&self, o: &Self) -> Self {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self {
            n: self.n - o.n,
            s1: d(&self.s1, &o.s1),
            s2: d(&self.s2, &o.s2),
            cross: d(&self.cross, &o.cross),
        }
    }

    /// `(means, variances, covariances)` with unbiased divisors.
    fn estimates(&self, pairs: &[(usize, usize)]) -> Estimates {
        let n = self.n;
        let m: Vec<f64> = self.s1.iter().map(|s| s / n).collect();
        let v = self
            .s2
            .iter()
            .zip(&m)
            .map(|(s2, mu)| (s2 - n * mu * mu) / (n - 1.0))
            .collect();
        let c = pairs
            .iter()
            .zip(&self.cross)
            .map(|((a, b), sc)| (sc - n * m[*a] * m[*b]) / (n - 1.0))
            .collect();
        (m, v, c)
    }
}

/// Runs `simulate` `n_draws` times and summarizes the draws. Work is split
/// into `blocks` blocks, block `b` using random stream `(seed, b)`, and the
/// standard errors are the delete-one-block jackknife.
pub fn mc_moments<F>(
    simulate: F,
    shape: (usize, usize),
    pairs: &[(Cell, Cell)],
    n_draws: usize,
    blocks: usize,
    seed: u64,
) -> EmpiricalMoments
where
    F: Fn(&mut SimRng) -> Array2<u64> + Sync,
{
    let (g, i) = shape;
    let cells = g * i;
    let blocks = blocks.clamp(2, n_draws.max(2));
    let flat: Vec<(usize, usize)> = pairs.iter().map(|(a, b)| (a.0 * i + a.1, b.0 * i + b.1)).collect();
    let per: Vec<BlockSums> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let n = n_draws / blocks + usize::from(b < n_draws % blocks);
            let mut acc = BlockSums::new(cells, flat.len());
            for _ in 0..n {
                let y = simulate(&mut rng);
                let y: Vec<f64> = y.iter().map(|&v| v as f64).collect();
                for c in 0..cells {
                    acc.s1[c] += y[c];
                    acc.s2[c] += y[c] * y[c];
                }
                for (k, (a, b)) in flat.iter().enumerate() {
                    acc.cross[k] += y[*a] * y[*b];
                }
            }
            acc.n = n as f64;
            acc
        })
        .collect();
    let mut total = BlockSums::new(cells, flat.len());
    for b in &per {
        total.add(b);
    }
    let (m, v, c) = total.estimates(&flat);
    let loo: Vec<_> = per.iter().map(|b| total.sub(b).estimates(&flat)).collect();
    let bf = blocks as f64;
    let se = |pick: &dyn Fn(&Estimates) -> &Vec<f64>, k: usize| {
        let vals: Vec<f64> = loo.iter().map(|e| pick(e)[k]).collect();
        let mean = vals.iter().sum::<f64>() / bf;
        ((bf - 1.0) / bf * vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt()
    };
    let grid = |v: Vec<f64>| Array2::from_shape_vec((g, i), v).expect("cell grid");
    EmpiricalMoments {
        n_draws,
        mean_se: grid((0..cells).map(|k| se(&|e| &e.0, k)).collect()),
        var_se: grid((0..cells).map(|k| se(&|e| &e.1, k)).collect()),
        cov_se: (0..flat.len()).map(|k| se(&|e| &e.2, k)).collect(),
        mean: grid(m),
        var: grid(v),
        cov: c,
    }
}

/// One compared quantity.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MomentRow {
    pub quantity: String,
    pub cell: String,
    pub analytic: f64,
    pub empirical: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

/// Analytic versus empirical moments; a row passes when
/// `|analytic − empirical| ≤ z · SE`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub z: f64,
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    pub fn compare(
        analytic_mean: &Array2<f64>,
        analytic_var: &Array2<f64>,
        pairs: &[(Cell, Cell)],
        analytic_cov: &[f64],
        empirical: &EmpiricalMoments,
        z: f64,
    ) -> Self {
        let mut rows = Vec::new();
        let mut push = |q: &str, cell: String, a: f64, e: f64, se: f64| {
            rows.push(MomentRow {
                quantity: q.into(),
                cell,
                analytic: a,
                empirical: e,
                se,
                z,
                pass: (a - e).abs() <= z * se,
            });
        };
        for ((g, i), a) in analytic_mean.indexed_iter() {
            push("mean", format!("{},{}", g + 1, i + 1), *a, empirical.mean[(g, i)], empirical.mean_se[(g, i)]);
        }
        for ((g, i), a) in analytic_var.indexed_iter() {
            push("var", format!("{},{}", g + 1, i + 1), *a, empirical.var[(g, i)], empirical.var_se[(g, i)]);
        }
        for (k, (a, b)) in pairs.iter().enumerate() {
            push(
                "cov",
                format!("{},{}|{},{}", a.0 + 1, a.1 + 1, b.0 + 1, b.1 + 1),
                analytic_cov[k],
                empirical.cov[k],
                empirical.cov_se[k],
            );
        }
        Self { z, rows }
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{linear_predictor, LatentMode, RareDiseaseParams, RareDynamics, Variant};
    use crate::panel::{adjacency_orders, grid_adjacency};
    use approx::assert_relative_eq;
    use ndarray::array;

    #[allow(clippy::type_complexity)]
    fn toy() -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let delta = array![[0.5, 1.2], [0.8, 0.3]];
        let phi = array![[0.6, 0.4], [0.9, 0.7]];
        let wg = array![[0.7, 0.2], [0.3, 0.8]];
        let wi = array![[0.6, 0.45], [0.4, 0.55]];
        let y = array![[3.0, 0.0], [5.0, 2.0]];
        (delta, phi, wg, wi, y)
    }

    #[test]
    fn mean_edge_cases() {
        let (d, p, wg, wi, y) = toy();
        assert_eq!(conditional_mean(&d, &p, &wg, &wi, &Array2::zeros((2, 2)), 1.0), d);
        let one = conditional_mean(&array![[0.5]], &array![[0.2]], &array![[1.0]], &array![[1.0]], &array![[7.0]], 2.0);
        assert_relative_eq!(one[(0, 0)], 0.5 + 2.0 * 0.2 * 7.0);
        let lp = linear_predictor(&d, &p, &wg, &wi, &(&y * 1.5));
        let m = conditional_mean(&d, &p, &wg, &wi, &y, 1.5);
        for (a, b) in lp.iter().zip(&m) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn variance_identities() {
        let (d, p, wg, wi, y) = toy();
        let mu = conditional_mean(&d, &p, &wg, &wi, &y, 1.0);
        let v0 = conditional_variance(&d, &p, &wg, &wi, &y, 1.0, 0.0, 0.4);
        for (v, m) in v0.iter().zip(&mu) {
            assert_eq!(*v, m * (1.0 + 0.4 * m));
        }
        let k = excess_kernel(&p, &wg, &wi, &y, 1.0);
        let (th, p1, p2) = (5.0, 0.05, 1.0);
        let a = conditional_variance(&d, &p, &wg, &wi, &y, 1.0, th, p2);
        let b = conditional_variance(&d, &p, &wg, &wi, &y, 1.0, th, p1);
        for idx in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let m = mu[idx];
            let lhs = a[idx] - b[idx] - (m * (1.0 + p2 * m) - m * (1.0 + p1 * m));
            assert_relative_eq!(lhs, th * (p2 - p1) * k[idx], max_relative = 1e-10);
        }
    }

    #[test]
    fn covariance_edge_cases() {
        let (_, p, wg, wi, y) = toy();
        assert_eq!(conditional_covariance((0, 0), (1, 1), &p, &wg, &wi, &y, 1.0, 0.0), 0.0);
        // orthogonal geographic rows: each recipient region hears one source only
        let eye = Array2::eye(2);
        assert_eq!(conditional_covariance((0, 0), (1, 0), &p, &eye, &wi, &y, 1.0, 5.0), 0.0);
        assert!(conditional_covariance((0, 0), (1, 1), &p, &wg, &wi, &y, 1.0, 5.0) > 0.0);
    }

    #[test]
    fn jackknife_matches_plain_estimators() {
        let m = mc_moments(
            |rng| {
                use rand::Rng;
                array![[rng.random_range(0..10u64), rng.random_range(0..4u64)]]
            },
            (1, 2),
            &[((0, 0), (0, 1))],
            200_000,
            50,
            3,
        );
        assert!((m.mean[(0, 0)] - 4.5).abs() < 4.0 * m.mean_se[(0, 0)]);
        assert!((m.var[(0, 0)] - 8.25).abs() < 4.0 * m.var_se[(0, 0)]);
        assert!(m.cov[0].abs() < 4.0 * m.cov_se[0]);
        // se of a mean ≈ sd / sqrt(n)
        assert_relative_eq!(m.mean_se[(0, 0)], (8.25f64 / 200_000.0).sqrt(), max_relative = 0.35);
    }

    #[test]
    fn small_simulator_matches_oracles() {
        let mut p = RareDiseaseParams::desk(2, 2);
        p.theta = 5.0;
        p.psi = 0.5;
        let pops = array![[1000, 2000], [1500, 800]];
        let o = adjacency_orders(&grid_adjacency(1, 2)).unwrap();
        let d = RareDynamics::new(&p, &pops, &o, Variant::Full).unwrap();
        let prev = array![[4u64, 1], [0, 6]];
        let woy = 10;
        let pairs = [((0, 0), (0, 1)), ((0, 0), (1, 1))];
        let emp = mc_moments(
            |rng| d.step(prev.view(), woy, LatentMode::Gamma, 2, rng).unwrap().0,
            (2, 2),
            &pairs,
            400_000,
            40,
            17,
        );
        let yf = prev.mapv(|v| v as f64);
        let delta = d.endemic(woy);
        let mean = conditional_mean(&delta, d.phi(), d.geo_weights(), d.age_weights(), &yf, 1.0);
        let var = conditional_variance(&delta, d.phi(), d.geo_weights(), d.age_weights(), &yf, 1.0, p.theta, p.psi);
        let cov: Vec<f64> = pairs
            .iter()
            .map(|(a, b)| conditional_covariance(*a, *b, d.phi(), d.geo_weights(), d.age_weights(), &yf, 1.0, p.theta))
            .collect();
        let rep = MomentReport::compare(&mean, &var, &pairs, &cov, &emp, 4.0);
        assert!(rep.all_pass(), "{:#?}", rep.rows);
    }
}
