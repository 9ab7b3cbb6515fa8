//! Count distributions: negative binomial in (mean, ψ) form and
//! beta-binomial in (size, mean probability, precision) form.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Poisson};
use statrs::function::factorial::ln_binomial;

use crate::special::{digamma_rising, ln_gamma, ln_rising};

/// Log-pmf of `NegBin(mu, psi)` with `Var = mu (1 + psi mu)`.
///
/// The standard size parameter is `1 / psi`; `psi = 0` is the Poisson limit.
pub fn negbin_logpmf(y: u64, mu: f64, psi: f64) -> f64 {
    if !(mu >= 0.0) || !(psi >= 0.0) {
        return f64::NAN;
    }
    let yf = y as f64;
    if mu == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if psi == 0.0 {
        return yf * mu.ln() - mu - ln_gamma(yf + 1.0);
    }
    let size = 1.0 / psi;
    ln_rising(size, y) - ln_gamma(yf + 1.0) - size * (mu / size).ln_1p()
        + yf * (mu.ln() - (size + mu).ln())
}

/// Partial derivatives of the negative binomial log-pmf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBinGrad {
    pub logpmf: f64,
    /// d logpmf / d mu
    pub d_mu: f64,
    /// d logpmf / d log(psi)
    pub d_log_psi: f64,
}

/// Log-pmf and gradient, with the `y`-dependent pieces `ln_rising(1/psi, y)`
/// and `digamma_rising(1/psi, y)` supplied by the caller (they do not depend
/// on the mean and can be cached per distinct count).
pub fn negbin_logpmf_grad_cached(
    y: u64,
    mu: f64,
    psi: f64,
    ln_rise: f64,
    dig_rise: f64,
    ln_fact_y: f64,
) -> NegBinGrad {
    let yf = y as f64;
    let size = 1.0 / psi;
    let denom = size + mu;
    let l1p = (mu / size).ln_1p();
    let logpmf = ln_rise - ln_fact_y - size * l1p + yf * (mu.ln() - denom.ln());
    let d_mu = yf / mu - (yf + size) / denom;
    let d_size = dig_rise - l1p + (mu - yf) / denom;
    NegBinGrad {
        logpmf,
        d_mu,
        d_log_psi: -size * d_size,
    }
}

pub fn negbin_logpmf_grad(y: u64, mu: f64, psi: f64) -> NegBinGrad {
    let size = 1.0 / psi;
    negbin_logpmf_grad_cached(
        y,
        mu,
        psi,
        ln_rising(size, y),
        digamma_rising(size, y),
        ln_gamma(y as f64 + 1.0),
    )
}

/// Draw from `NegBin(mu, psi)` as a gamma–Poisson mixture.
pub fn negbin_sample<R: Rng + ?Sized>(mu: f64, psi: f64, rng: &mut R) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    let rate = if psi > 0.0 {
        let size = 1.0 / psi;
        Gamma::new(size, mu / size).expect("valid gamma").sample(rng)
    } else {
        mu
    };
    poisson_sample(rate, rng)
}

pub fn poisson_sample<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("valid poisson").sample(rng) as u64
}

/// Log-pmf of `BetaBinom(n, p, k)`: `C(n, y) B(y + pk, n − y + (1−p)k) / B(pk, (1−p)k)`.
///
/// Values of `y` outside `0..=n` give `-inf`.
pub fn betabinom_logpmf(y: u64, n: u64, p: f64, k: f64) -> f64 {
    if y > n {
        return f64::NEG_INFINITY;
    }
    let a = p * k;
    let b = (1.0 - p) * k;
    ln_binomial(n, y) + ln_rising(a, y) + ln_rising(b, n - y) - ln_rising(a + b, n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBinomGrad {
    pub logpmf: f64,
    pub d_p: f64,
    /// d logpmf / d log(k)
    pub d_log_k: f64,
}

/// Log-pmf and gradient; `ln_choose` is `ln C(n, y)`, constant in the parameters.
pub fn betabinom_logpmf_grad(y: u64, n: u64, p: f64, k: f64, ln_choose: f64) -> BetaBinomGrad {
    debug_assert!(y <= n);
    let a = p * k;
    let b = (1.0 - p) * k;
    let logpmf = ln_choose + ln_rising(a, y) + ln_rising(b, n - y) - ln_rising(a + b, n);
    let tot = digamma_rising(a + b, n);
    let da = digamma_rising(a, y) - tot;
    let db = digamma_rising(b, n - y) - tot;
    BetaBinomGrad {
        logpmf,
        d_p: k * (da - db),
        d_log_k: k * (p * da + (1.0 - p) * db),
    }
}

/// Draw from `BetaBinom(n, p, k)` via `q ~ Beta(pk, (1−p)k)`, `y ~ Binomial(n, q)`.
pub fn betabinom_sample<R: Rng + ?Sized>(n: u64, p: f64, k: f64, rng: &mut R) -> u64 {
    if n == 0 {
        return 0;
    }
    let q = Beta::new(p * k, (1.0 - p) * k).expect("valid beta").sample(rng);
    Binomial::new(n, q.clamp(0.0, 1.0)).expect("valid binomial").sample(rng)
}

pub fn binomial_logpmf(y: u64, n: u64, p: f64) -> f64 {
    if y > n {
        return f64::NEG_INFINITY;
    }
    ln_binomial(n, y) + y as f64 * p.ln() + (n - y) as f64 * (-p).ln_1p()
}
