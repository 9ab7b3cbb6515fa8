//! Geographic and age-group mixing weights.
//!
//! All weight matrices are indexed `[recipient, source]` and are
//! column-stochastic: every source distributes its expected secondary cases
//! over recipients with weights summing to one.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Symmetric, elementwise positive contact-rate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactMatrix(Array2<f64>);

impl ContactMatrix {
    /// Validates positivity and symmetry (to 1e-9 relative) and stores the
    /// exactly symmetrised matrix.
    pub fn new(c: Array2<f64>) -> Result<Self> {
        let (n, m) = c.dim();
        if n != m || n == 0 {
            return Err(Error::Shape(format!("contact matrix is {n}x{m}")));
        }
        if let Some(((a, b), v)) = c.indexed_iter().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("contact rate C[{a},{b}] = {v} is not positive")));
        }
        for a in 0..n {
            for b in 0..a {
                let (x, y) = (c[(a, b)], c[(b, a)]);
                if (x - y).abs() > 1e-9 * x.max(y) {
                    return Err(Error::Domain(format!("contact matrix not symmetric at ({a},{b})")));
                }
            }
        }
        let sym = Array2::from_shape_fn((n, n), |(a, b)| 0.5 * (c[(a, b)] + c[(b, a)]));
        Ok(Self(sym))
    }

    /// Builds the matrix from its lower triangle in row-major order:
    /// `(0,0), (1,0), (1,1), (2,0), (2,1), (2,2), …`.
    pub fn from_lower_triangle(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * (n + 1) / 2 {
            return Err(Error::Shape(format!(
                "{} lower-triangle entries for a {n}x{n} contact matrix",
                values.len()
            )));
        }
        let mut c = Array2::zeros((n, n));
        let mut k = 0;
        for a in 0..n {
            for b in 0..=a {
                c[(a, b)] = values[k];
                c[(b, a)] = values[k];
                k += 1;
            }
        }
        Self::new(c)
    }

    pub fn lower_triangle(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for a in 0..n {
            for b in 0..=a {
                out.push(self.0[(a, b)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn load(path: &Path) -> Result<(Vec<String>, Self)> {
        let (labels, c) = read_matrix_csv(path)?;
        Ok((labels, Self::new(c)?))
    }

    pub fn save(&self, path: &Path, labels: &[String]) -> Result<()> {
        write_matrix_csv(path, &self.0, labels)
    }
}

/// Reads a square matrix written by [`write_matrix_csv`]: a header of
/// labels, then one numeric row per label.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let labels: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_owned()).collect();
    let n = labels.len();
    let mut values = Vec::with_capacity(n * n);
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: k + 2,
                msg: format!("expected {n} columns, found {}", rec.len()),
            });
        }
        for field in rec.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: k + 2,
                msg: format!("`{field}`: {e}"),
            })?);
        }
    }
    if values.len() != n * n {
        return Err(Error::Shape(format!(
            "{}: {} rows for {n} labels",
            path.display(),
            values.len() / n.max(1)
        )));
    }
    let m = Array2::from_shape_vec((n, n), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((labels, m))
}

pub fn write_matrix_csv(path: &Path, m: &Array2<f64>, labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(labels)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Age-group mixing weights `w[i, i']`, column-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeMixing(Array2<f64>);

/// Geographic mixing weights `w[g, g']`, column-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoMixing(Array2<f64>);

macro_rules! weights_impl {
    ($t:ident) => {
        impl $t {
            /// Accepts a square matrix with entries in `[0, 1]` whose columns sum to one within 1e-9.
            pub fn new(w: Array2<f64>) -> Result<Self> {
                check_column_stochastic(&w, 1e-9)?;
                Ok(Self(w))
            }

            pub fn matrix(&self) -> &Array2<f64> {
                &self.0
            }

            pub fn into_inner(self) -> Array2<f64> {
                self.0
            }

            pub fn dim(&self) -> usize {
                self.0.nrows()
            }

            pub fn identity(n: usize) -> Self {
                Self(Array2::eye(n))
            }
        }
    };
}

weights_impl!(AgeMixing);
weights_impl!(GeoMixing);

fn check_column_stochastic(w: &Array2<f64>, tol: f64) -> Result<()> {
    let (n, m) = w.dim();
    if n != m {
        return Err(Error::Shape(format!("weight matrix is {n}x{m}")));
    }
    for (c, col) in w.columns().into_iter().enumerate() {
        if col.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("column {c} has weights outside [0, 1]")));
        }
        let s: f64 = col.sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Domain(format!("column {c} sums to {s}")));
        }
    }
    Ok(())
}

/// Divides each column by its sum. Returns the column sums.
pub(crate) fn normalize_columns(a: &mut Array2<f64>) -> Vec<f64> {
    let sums: Vec<f64> = a.columns().into_iter().map(|c| c.sum()).collect();
    for ((_, c), v) in a.indexed_iter_mut() {
        *v /= sums[c];
    }
    sums
}

/// Reverse-mode step through `w = a / colsum(a)` for row-major `n × n`
/// buffers: accumulates `d a` given `d w`.
pub(crate) fn column_normalize_backward(
    w: &[f64],
    colsum: &[f64],
    dw: &[f64],
    n: usize,
    da: &mut [f64],
) {
    for c in 0..n {
        let s: f64 = (0..n).map(|r| dw[r * n + c] * w[r * n + c]).sum();
        for r in 0..n {
            da[r * n + c] += (dw[r * n + c] - s) / colsum[c];
        }
    }
}

/// `w[i, i'] = C[i, i'] / Σ_r C[r, i']`.
pub fn normalize_contact(c: &ContactMatrix) -> AgeMixing {
    let mut w = c.0.clone();
    normalize_columns(&mut w);
    AgeMixing(w)
}

/// Column totals `α[i] = Σ_r C[r, i]` (age-group activity).
pub fn activity_from_contact(c: &ContactMatrix) -> Vec<f64> {
    c.0.columns().into_iter().map(|col| col.sum()).collect()
}

/// `w[g, g'] ∝ (1 + o[g, g'])^(−ρ)`, normalised over recipients `g`.
pub fn geo_weights_power_decay(orders: &Array2<u32>, rho: f64) -> Result<GeoMixing> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("decay rate {rho} must be nonnegative")));
    }
    let mut w = orders.mapv(|o| (-rho * (1.0 + o as f64).ln()).exp());
    normalize_columns(&mut w);
    Ok(GeoMixing(w))
}

/// Gravity weights `w[g, g'] ∝ τ[g] D[g, g']^(−ρ[g'])`, normalised over `g`.
pub fn geo_weights_gravity(d: &Array2<f64>, tau: &[f64], rho: &[f64]) -> Result<GeoMixing> {
    let n = d.nrows();
    if d.ncols() != n || tau.len() != n || rho.len() != n {
        return Err(Error::Shape(format!(
            "gravity weights need a square distance matrix and {n} attractiveness/decay values"
        )));
    }
    if let Some(t) = tau.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::Domain(format!("attractiveness {t} must be positive")));
    }
    if let Some(r) = rho.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Domain(format!("distance decay {r} must be positive")));
    }
    let mut w = Array2::zeros((n, n));
    for g in 0..n {
        for s in 0..n {
            let dist = d[(g, s)];
            if !(dist > 0.0) {
                return Err(Error::Domain(format!(
                    "D[{g},{s}] = {dist} is singular under distance decay"
                )));
            }
            w[(g, s)] = (tau[g].ln() - rho[s] * dist.ln()).exp();
        }
    }
    normalize_columns(&mut w);
    Ok(GeoMixing(w))
}

/// Precomputed eigenbasis of a known contact matrix for the one-parameter
/// family `w ∝ Ω Λ^κ Ω⁻¹`.
///
/// Accepts a symmetric matrix, or a non-symmetric one similar to a symmetric
/// matrix through a diagonal scaling (e.g. a column-normalised symmetric
/// contact matrix), so the eigenvalues are always real.
#[derive(Debug, Clone)]
pub struct EigenDeformation {
    n: usize,
    omega: Array2<f64>,
    omega_inv: Array2<f64>,
    eigenvalues: Vec<f64>,
}

impl EigenDeformation {
    pub fn new(c: &Array2<f64>) -> Result<Self> {
        let (n, m) = c.dim();
        if n != m || n == 0 {
            return Err(Error::Shape(format!("contact matrix is {n}x{m}")));
        }
        let max = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let symmetric = (0..n).all(|a| (0..a).all(|b| (c[(a, b)] - c[(b, a)]).abs() <= 1e-12 * max));
        // scale d with C[i,j] d_j = C[j,i] d_i
        let d: Vec<f64> = if symmetric {
            vec![1.0; n]
        } else {
            if (1..n).any(|j| !(c[(0, j)] > 0.0)) {
                return Err(Error::Numeric("matrix is not diagonally similar to a symmetric one".into()));
            }
            let d: Vec<f64> = (0..n).map(|j| if j == 0 { 1.0 } else { c[(j, 0)] / c[(0, j)] }).collect();
            for a in 0..n {
                for b in 0..a {
                    if (c[(a, b)] * d[b] - c[(b, a)] * d[a]).abs() > 1e-9 * max * d[a].max(d[b]) {
                        return Err(Error::Numeric(
                            "matrix is not diagonally similar to a symmetric one; eigenvalues may be complex"
                                .into(),
                        ));
                    }
                }
            }
            d
        };
        let sq: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
        let s = DMatrix::from_fn(n, n, |a, b| {
            let v = c[(a, b)] * sq[b] / sq[a];
            let u = c[(b, a)] * sq[a] / sq[b];
            0.5 * (u + v)
        });
        let eig = SymmetricEigen::new(s);
        let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(l) = eig.eigenvalues.iter().find(|l| !(**l > 1e-12 * lam_max)) {
            return Err(Error::Numeric(format!("eigenvalue {l} is not positive")));
        }
        let q = &eig.eigenvectors;
        let omega = Array2::from_shape_fn((n, n), |(a, k)| sq[a] * q[(a, k)]);
        let omega_inv = Array2::from_shape_fn((n, n), |(k, b)| q[(b, k)] / sq[b]);
        Ok(Self {
            n,
            omega,
            omega_inv,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn recompose(&self, diag: &[f64]) -> Array2<f64> {
        let n = self.n;
        Array2::from_shape_fn((n, n), |(a, b)| {
            (0..n)
                .map(|k| self.omega[(a, k)] * diag[k] * self.omega_inv[(k, b)])
                .sum()
        })
    }

    /// `Ω Λ^κ Ω⁻¹` after clamping round-off negatives (see [`clamp_negative`]).
    pub fn power(&self, kappa: f64) -> Result<Array2<f64>> {
        let diag: Vec<f64> = self.eigenvalues.iter().map(|l| l.powf(kappa)).collect();
        let mut m = self.recompose(&diag);
        clamp_negative(&mut m)?;
        Ok(m)
    }

    /// `d/dκ Ω Λ^κ Ω⁻¹`.
    pub fn power_derivative(&self, kappa: f64) -> Array2<f64> {
        let diag: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|l| l.powf(kappa) * l.ln())
            .collect();
        self.recompose(&diag)
    }

    pub fn weights(&self, kappa: f64) -> Result<AgeMixing> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Domain(format!("eigen power {kappa} must be positive")));
        }
        let mut m = self.power(kappa)?;
        normalize_columns(&mut m);
        Ok(AgeMixing(m))
    }
}

/// Zeroes entries in `[−1e-10·max|m|, 0)`; more negative entries are an error.
pub(crate) fn clamp_negative(m: &mut Array2<f64>) -> Result<()> {
    let max = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-10 * max;
    for ((a, b), v) in m.indexed_iter_mut() {
        if *v < -tol || !v.is_finite() {
            return Err(Error::Numeric(format!(
                "recomposed mixing entry [{a},{b}] = {v:e} is negative"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(())
}

/// `w ∝ Ω Λ^κ Ω⁻¹` for the eigen decomposition of a known contact matrix.
pub fn eigen_deformation(c_known: &Array2<f64>, kappa: f64) -> Result<AgeMixing> {
    EigenDeformation::new(c_known)?.weights(kappa)
}

/// Shape hyperparameters of the generative contact prior
/// `C[i,i'] ~ Gamma(shape = α, scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPriorHyper {
    pub alpha_diag: f64,
    pub alpha_offdiag: f64,
    pub scale: f64,
}

impl ContactPriorHyper {
    pub fn new(alpha_diag: f64, alpha_offdiag: f64, scale: f64) -> Result<Self> {
        if !(alpha_diag > 0.0 && alpha_offdiag > 0.0 && scale > 0.0) {
            return Err(Error::Domain(format!(
                "contact prior hyperparameters ({alpha_diag}, {alpha_offdiag}, {scale}) must be positive"
            )));
        }
        Ok(Self {
            alpha_diag,
            alpha_offdiag,
            scale,
        })
    }

    /// Shapes 4.32 (diagonal) and 1.30 (off-diagonal) with scale `1 / (2I)`.
    pub fn assortative(n_ages: usize) -> Self {
        Self {
            alpha_diag: 4.32,
            alpha_offdiag: 1.30,
            scale: 1.0 / (2.0 * n_ages as f64),
        }
    }

    pub fn shape(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.alpha_diag
        } else {
            self.alpha_offdiag
        }
    }

    /// Expected diagonal mixing weight `α₁ / (α₁ + (I − 1) α₂)`.
    pub fn expected_diagonal(&self, n_ages: usize) -> f64 {
        self.alpha_diag / (self.alpha_diag + (n_ages as f64 - 1.0) * self.alpha_offdiag)
    }
}

/// Draws the lower triangle (with diagonal) independently and mirrors it.
pub fn sample_contact_prior<R: Rng + ?Sized>(
    hyper: &ContactPriorHyper,
    n_ages: usize,
    rng: &mut R,
) -> Result<ContactMatrix> {
    if n_ages < 2 {
        return Err(Error::Domain("contact prior needs at least two age groups".into()));
    }
    let diag = Gamma::new(hyper.alpha_diag, hyper.scale)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let off = Gamma::new(hyper.alpha_offdiag, hyper.scale)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut c = Array2::zeros((n_ages, n_ages));
    for a in 0..n_ages {
        for b in 0..=a {
            // gamma draws can underflow to 0 for small shapes
            let v = if a == b { diag.sample(rng) } else { off.sample(rng) }.max(f64::MIN_POSITIVE);
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    Ok(ContactMatrix(c))
}

/// Solves `α₁ / (α₁ + (I − 1) α₂) = expected_diag` under a fixed total
/// concentration `α₁ + (I − 1) α₂ = I · concentration`, where
/// `concentration` is the mean shape per column entry. With
/// `(0.4, 1.8, I = 6)` this gives `(4.32, 1.296)`; `expected_diag = 1/I`
/// gives `α₁ = α₂ = concentration`.
pub fn hyper_from_target(
    expected_diag: f64,
    concentration: f64,
    n_ages: usize,
) -> Result<ContactPriorHyper> {
    if n_ages < 2 {
        return Err(Error::Domain("need at least two age groups".into()));
    }
    if !(expected_diag > 0.0 && expected_diag < 1.0) {
        return Err(Error::Domain(format!(
            "expected diagonal weight {expected_diag} outside (0, 1)"
        )));
    }
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(Error::Domain(format!("concentration {concentration} must be positive")));
    }
    let total = n_ages as f64 * concentration;
    let alpha_diag = expected_diag * total;
    let alpha_offdiag = (total - alpha_diag) / (n_ages as f64 - 1.0);
    ContactPriorHyper::new(alpha_diag, alpha_offdiag, 1.0 / (2.0 * n_ages as f64))
}
