//! Pólya-Gamma utilities: the `(b, χ)` mapping of Bernoulli / negative-binomial
//! likelihoods, the tilted mean `E[ω]`, the KL divergence against the untilted
//! prior, and a truncated series sampler kept for Monte-Carlo checks.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{arg_err, Error, Result};
use crate::math::{self, TWO_PI_SQ};
use crate::tensor::ValueKind;

/// Below this tilt the mean and KL switch to their Taylor series.
const SMALL_C: f64 = 1e-4;

/// Local variational parameters of one observation: `q(ω) = PG(b, c)` with
/// `θ = E[ω]`, and the linear coefficient `χ` of the augmented likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgSite {
    pub b: f64,
    pub chi: f64,
    pub c: f64,
    pub theta: f64,
}

impl PgSite {
    pub fn new(b: f64, chi: f64, c: f64) -> Self {
        PgSite { b, chi, c, theta: pg_mean(b, c) }
    }

    /// `KL(PG(b, c) ‖ PG(b, 0))`
    pub fn kl(&self) -> f64 {
        pg_kl(self.b, self.c)
    }
}

/// `(b, χ)` for one observation: binary `(1, x − ½)`, count `(x + ζ, (x − ζ)/2)`.
pub fn site_params(x: f64, kind: ValueKind, zeta: f64) -> Result<(f64, f64)> {
    match kind {
        ValueKind::Binary => {
            if x == 0.0 || x == 1.0 {
                Ok((1.0, x - 0.5))
            } else {
                Err(Error::InvalidValue { entry: 0, value: x as i64, kind: "binary" })
            }
        }
        ValueKind::Count => {
            if !(zeta > 0.0) || !zeta.is_finite() {
                return arg_err(alloc::format!("negative-binomial ζ must be positive, got {zeta}"));
            }
            if x < 0.0 || libm::trunc(x) != x || !x.is_finite() {
                return Err(Error::InvalidValue { entry: 0, value: x as i64, kind: "count" });
            }
            Ok((x + zeta, 0.5 * (x - zeta)))
        }
    }
}

/// `E[ω]` for `ω ~ PG(b, c)`: `(b / 2c) tanh(c/2)`, even in `c`, `b/4` at zero.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < SMALL_C {
        b / 4.0 - b * c * c / 48.0
    } else {
        b / (2.0 * c) * math::tanh(0.5 * c)
    }
}

/// `KL(PG(b, c) ‖ PG(b, 0)) = b log cosh(c/2) − (bc/4) tanh(c/2)`.
pub fn pg_kl(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-2 {
        // x = c/2: log cosh x − (x/2)·2 tanh x/2 = x⁴/12 − 2x⁶/45 + O(x⁸)
        let x2 = 0.25 * c * c;
        return b * (x2 * x2 / 12.0 - 2.0 * x2 * x2 * x2 / 45.0);
    }
    (b * math::log_cosh(0.5 * c) - 0.25 * b * c * math::tanh(0.5 * c)).max(0.0)
}

/// One approximate draw from `PG(b, c)` via the first `k_terms` terms of the
/// infinite gamma series, plus the exact mean of the discarded tail.
pub fn pg_sample_truncated<R: Rng + ?Sized>(b: f64, c: f64, k_terms: usize, rng: &mut R) -> Result<f64> {
    if k_terms < 100 {
        return arg_err("pg_sample_truncated needs at least 100 terms");
    }
    let gamma = Gamma::new(b, 1.0).map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?;
    let shift = c * c / (4.0 * core::f64::consts::PI * core::f64::consts::PI);
    let mut draw = 0.0;
    let mut head_mean = 0.0;
    for k in 1..=k_terms {
        let h = k as f64 - 0.5;
        let denom = h * h + shift;
        draw += gamma.sample(rng) / denom;
        head_mean += b / denom;
    }
    let tail = (pg_mean(b, c) - head_mean / TWO_PI_SQ).max(0.0);
    Ok(draw / TWO_PI_SQ + tail)
}

/// Outcome of a Monte-Carlo check of the Pólya-Gamma integral identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub std_err: f64,
}

impl IdentityCheck {
    /// `|lhs − rhs|` in units of the Monte-Carlo standard error.
    pub fn z_score(&self) -> f64 {
        if self.std_err == 0.0 {
            if self.lhs == self.rhs {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.lhs - self.rhs).abs() / self.std_err
        }
    }
}

/// `e^{at}/(1+e^t)^b` against `2^{−b} e^{(a−b/2)t} E[e^{−ωt²/2}]` with `ω ~ PG(b, 0)`
/// estimated from the supplied draws.
pub fn pg_identity_from_draws(a: f64, b: f64, t: f64, draws: &[f64]) -> IdentityCheck {
    let lhs = math::exp(a * t - b * math::softplus(t));
    let pre = math::exp(-b * core::f64::consts::LN_2 + (a - 0.5 * b) * t);
    let n = draws.len() as f64;
    let vals: Vec<f64> = draws.iter().map(|w| math::exp(-0.5 * w * t * t)).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    IdentityCheck { lhs, rhs: pre * mean, std_err: pre * math::sqrt(var / n) }
}

/// Draws `samples` values from `PG(b, 0)` (1000-term series) and runs
/// [`pg_identity_from_draws`].
pub fn pg_identity_check<R: Rng + ?Sized>(
    a: f64,
    b: f64,
    t: f64,
    samples: usize,
    rng: &mut R,
) -> Result<IdentityCheck> {
    if !(b > 0.0) {
        return arg_err("pg_identity_check needs b > 0");
    }
    if samples < 10_000 {
        return arg_err("pg_identity_check needs at least 10^4 samples");
    }
    let draws = (0..samples)
        .map(|_| pg_sample_truncated(b, 0.0, 1000, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(pg_identity_from_draws(a, b, t, &draws))
}
