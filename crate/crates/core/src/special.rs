//! Special functions used by the count likelihoods.
//!
//! The negative binomial and beta-binomial log-pmfs only ever need
//! differences `lnΓ(x + n) − lnΓ(x)` with integer `n`. Computing them as
//! differences of two `lnΓ` values loses most significant digits once `x`
//! is large (dispersion near zero, beta-binomial precision near infinity),
//! so they get dedicated routines here.

pub use statrs::function::gamma::{digamma, ln_gamma};

const SHORT_SUM: u64 = 24;
const STIRLING_MIN: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Remainder of Stirling's series for `lnΓ(z)`, valid for `z ≥ 10`.
fn stirling_tail(z: f64) -> f64 {
    let r = 1.0 / z;
    let r2 = r * r;
    r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 / 1680.0)))
}

/// `ψ(z) − ln z` asymptotic remainder, valid for `z ≥ 10`.
fn digamma_tail(z: f64) -> f64 {
    let r = 1.0 / z;
    let r2 = r * r;
    -0.5 * r - r2 * (1.0 / 12.0 - r2 * (1.0 / 120.0 - r2 * (1.0 / 252.0 - r2 / 240.0)))
}

/// `lnΓ(x + n) − lnΓ(x)`, the log of the rising factorial `x (x+1) ⋯ (x+n−1)`.
pub fn ln_rising(x: f64, n: u64) -> f64 {
    debug_assert!(x > 0.0);
    if n == 0 {
        return 0.0;
    }
    if n <= SHORT_SUM && x < 1e60 {
        let mut acc = 0.0;
        let mut j = 0u64;
        while j < n {
            let mut prod = 1.0;
            for k in j..(j + 4).min(n) {
                prod *= x + k as f64;
            }
            acc += prod.ln();
            j += 4;
        }
        return acc;
    }
    let mut x = x;
    let mut n = n;
    let mut acc = 0.0;
    while x < STIRLING_MIN && n > 0 {
        acc += x.ln();
        x += 1.0;
        n -= 1;
    }
    if n == 0 {
        return acc;
    }
    let nf = n as f64;
    acc + (x - 0.5) * (nf / x).ln_1p() + nf * (x + nf).ln() - nf + stirling_tail(x + nf)
        - stirling_tail(x)
}

/// `ψ(x + n) − ψ(x)` for integer `n`.
pub fn digamma_rising(x: f64, n: u64) -> f64 {
    debug_assert!(x > 0.0);
    if n <= SHORT_SUM {
        return (0..n).map(|j| 1.0 / (x + j as f64)).sum();
    }
    let mut x = x;
    let mut n = n;
    let mut acc = 0.0;
    while x < STIRLING_MIN && n > 0 {
        acc += 1.0 / x;
        x += 1.0;
        n -= 1;
    }
    let nf = n as f64;
    acc + (nf / x).ln_1p() + digamma_tail(x + nf) - digamma_tail(x)
}

/// `lnΓ(z)` through Stirling's series for `z ≥ 10`, exposed for tests.
pub fn ln_gamma_stirling(z: f64) -> f64 {
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + stirling_tail(z)
}

/// Numerically stable `log Σ exp(v)`. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}

/// Standard normal quantile function.
pub fn std_normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rising_matches_gamma_difference_for_moderate_arguments() {
        for &x in &[0.05, 0.7, 3.2, 11.0, 250.0] {
            for &n in &[0u64, 1, 5, 23, 24, 25, 80, 1000] {
                let direct = ln_gamma(x + n as f64) - ln_gamma(x);
                assert_relative_eq!(ln_rising(x, n), direct, epsilon = 1e-9, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn rising_is_precise_for_huge_arguments() {
        // lnΓ(x+2) − lnΓ(x) = ln(x) + ln(x+1)
        let x: f64 = 1e9;
        let exact = x.ln() + (x + 1.0).ln();
        assert_relative_eq!(ln_rising(x, 2), exact, max_relative = 1e-15);
        // long rising product at huge x against the log-sum
        let n = 40u64;
        let exact: f64 = (0..n).map(|j| (x + j as f64).ln()).sum();
        assert_relative_eq!(ln_rising(x, n), exact, max_relative = 1e-14);
    }

    #[test]
    fn digamma_rising_matches_statrs() {
        for &x in &[0.3, 2.5, 14.0, 300.0] {
            for &n in &[1u64, 7, 30, 200] {
                let direct = digamma(x + n as f64) - digamma(x);
                assert_relative_eq!(digamma_rising(x, n), direct, epsilon = 1e-10, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn stirling_agrees_with_lanczos() {
        for &z in &[10.0, 17.3, 1e3, 1e6] {
            assert_relative_eq!(ln_gamma_stirling(z), ln_gamma(z), max_relative = 1e-13);
        }
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_relative_eq!(log_mean_exp(&[-3.0, -3.0, -3.0]), -3.0);
    }
}
