//! Scalar special functions, all routed through `libm` so results do not
//! depend on the platform C library.

use core::f64::consts::{LN_2, PI, SQRT_2};

pub use libm::{cosh, erfc, exp, lgamma, log, log1p, sqrt, tanh};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

/// `log σ(x)`
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `log cosh(x)` without overflow.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + log1p(exp(-2.0 * a)) - LN_2
}

#[inline]
pub fn normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `log Φ(z)`, accurate in both tails.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z > 5.0 {
        log1p(-0.5 * erfc(z / SQRT_2))
    } else if z > -30.0 {
        log(0.5 * erfc(-z / SQRT_2))
    } else {
        // Asymptotic Mills-ratio expansion.
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        normal_log_pdf(z) - log(-z) + log(series)
    }
}

/// `d/dz log Φ(z) = φ(z) / Φ(z)`.
pub fn d_log_normal_cdf(z: f64) -> f64 {
    exp(normal_log_pdf(z) - log_normal_cdf(z))
}

/// Negative-binomial log-PMF with `ζ` successes and logit `f` (success
/// probability `σ(f)`): `log Γ(ζ+x) − log x! − log Γ(ζ) + x log p + ζ log(1−p)`.
pub fn negbin_log_pmf(x: f64, zeta: f64, logit: f64) -> f64 {
    lgamma(zeta + x) - lgamma(x + 1.0) - lgamma(zeta) + x * log_sigmoid(logit) + zeta * log_sigmoid(-logit)
}

/// `log(mean(exp(v)))` over a slice, stabilised by the running maximum.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().map(|x| exp(x - m)).sum();
    m + log(s / v.len() as f64)
}

pub(crate) const TWO_PI_SQ: f64 = 2.0 * PI * PI;
