//! Evaluation metrics: AUC, relative RMSE, MAPE and per-entry negative log-likelihood.

use alloc::vec::Vec;

use crate::error::{arg_err, dim_err, Result};
use crate::linalg::Mat;
use crate::math;

/// Probabilities are clamped to `[PROB_FLOOR, 1 − PROB_FLOOR]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// One evaluated metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub name: &'static str,
    pub value: f64,
    pub n: usize,
}

/// How an observation depends on the latent value `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    /// `x ~ Bernoulli(σ(f))`
    Logistic,
    /// `x ~ Bernoulli(Φ(f/√2))`, the probit model with its unit-variance auxiliary marginalized.
    Probit,
    /// `x ~ NB(ζ, σ(f))`
    NegBin { zeta: f64 },
}

impl Observation {
    /// `log p(x | f)`, with Bernoulli probabilities clamped.
    pub fn log_lik(&self, x: u64, f: f64) -> f64 {
        match *self {
            Observation::Logistic => bernoulli_log(x, math::sigmoid(f)),
            Observation::Probit => bernoulli_log(x, math::normal_cdf(f * core::f64::consts::FRAC_1_SQRT_2)),
            Observation::NegBin { zeta } => math::negbin_log_pmf(x as f64, zeta, f),
        }
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[inline]
fn bernoulli_log(x: u64, p: f64) -> f64 {
    let p = clamp_prob(p);
    if x == 1 {
        math::log(p)
    } else {
        math::log(1.0 - p)
    }
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. `O(n log n)` via average ranks.
pub fn auc(scores: &[f64], labels: &[u64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return dim_err("auc: scores and labels differ in length");
    }
    if labels.iter().any(|&l| l > 1) {
        return arg_err("auc: labels must be 0 or 1");
    }
    if scores.iter().any(|s| s.is_nan()) {
        return arg_err("auc: scores contain NaN");
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return arg_err("auc: both classes must be present");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = 0.5 * ((i + 1) + j) as f64;
        rank_sum += avg_rank * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// `‖x − x̂‖₂ / ‖x‖₂`
pub fn rmse_rel(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() || x.is_empty() {
        return dim_err("rmse_rel: inputs must be non-empty and equally long");
    }
    let den: f64 = x.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return arg_err("rmse_rel: ground truth is all zero");
    }
    let num: f64 = x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(math::sqrt(num) / math::sqrt(den))
}

/// `(1/N) Σ |x − x̂| / |x + 1|`
pub fn mape(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() || x.is_empty() {
        return dim_err("mape: inputs must be non-empty and equally long");
    }
    let total: f64 = x.iter().zip(xhat).map(|(a, b)| (a - b).abs() / (a + 1.0).abs()).sum();
    Ok(total / x.len() as f64)
}

/// Mean negative log-likelihood of binary labels under predicted probabilities.
pub fn nll_bernoulli(probs: &[f64], labels: &[u64]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return dim_err("nll: inputs must be non-empty and equally long");
    }
    if labels.iter().any(|&l| l > 1) {
        return arg_err("nll: Bernoulli labels must be 0 or 1");
    }
    Ok(-probs.iter().zip(labels).map(|(&p, &x)| bernoulli_log(x, p)).sum::<f64>() / probs.len() as f64)
}

/// Mean negative log-likelihood of counts under `NB(ζ, p_n)`.
pub fn nll_negbin(probs: &[f64], counts: &[u64], zeta: f64) -> Result<f64> {
    if probs.len() != counts.len() || probs.is_empty() {
        return dim_err("nll: inputs must be non-empty and equally long");
    }
    if !(zeta > 0.0) {
        return arg_err("nll: ζ must be positive");
    }
    let total: f64 = probs
        .iter()
        .zip(counts)
        .map(|(&p, &x)| {
            let p = clamp_prob(p);
            let x = x as f64;
            math::lgamma(zeta + x) - math::lgamma(x + 1.0) - math::lgamma(zeta)
                + x * math::log(p)
                + zeta * math::log1p(-p)
        })
        .sum();
    Ok(-total / probs.len() as f64)
}

/// Posterior-averaged NLL: for each entry, `−log((1/S) Σ_s p(x | f_s))`, averaged
/// over entries. `draws` holds one row of `S` latent samples per entry.
pub fn nll_mc(draws: &Mat, x: &[u64], obs: Observation) -> Result<f64> {
    if draws.rows() != x.len() || x.is_empty() || draws.cols() == 0 {
        return dim_err("nll_mc: need one non-empty row of draws per observation");
    }
    if !matches!(obs, Observation::NegBin { .. }) && x.iter().any(|&v| v > 1) {
        return arg_err("nll_mc: Bernoulli labels must be 0 or 1");
    }
    if let Observation::NegBin { zeta } = obs {
        if !(zeta > 0.0) {
            return arg_err("nll_mc: ζ must be positive");
        }
    }
    let mut buf = Vec::with_capacity(draws.cols());
    let mut total = 0.0;
    for (n, &xn) in x.iter().enumerate() {
        buf.clear();
        buf.extend(draws.row(n).iter().map(|&f| obs.log_lik(xn, f)));
        total -= math::log_mean_exp(&buf);
    }
    Ok(total / x.len() as f64)
}
