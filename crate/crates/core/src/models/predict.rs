//! Posterior marginals of `f` and point predictions at arbitrary inputs.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Result};
use crate::linalg::Mat;
use crate::math;
use crate::metrics::{Observation, PROB_FLOOR};

use super::solve::{solve_geometry, solve_marginals};
use super::svgp::svgp_marginals;
use super::{BatchGeometry, Likelihood, ModelState};

/// Rows per geometry chunk, bounding memory on large test sets.
const CHUNK: usize = 1024;

/// Default number of posterior draws for Monte-Carlo prediction.
pub const DEFAULT_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Average over `samples` draws of `f` from its Gaussian marginal.
    MonteCarlo { samples: usize, seed: u64 },
    /// Evaluate the likelihood at the posterior mean only.
    PlugIn,
}

impl Default for PredictMode {
    fn default() -> Self {
        PredictMode::MonteCarlo { samples: DEFAULT_SAMPLES, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Probability of a one (binary) or expected count.
    pub value: Vec<f64>,
    /// Latent draws, one row per entry; a single column holding the mean in plug-in mode.
    pub draws: Mat,
    pub observation: Observation,
}

/// Mean and variance of `q(f)` at the rows of `inputs`.
pub fn posterior_f(state: &ModelState, inputs: &Mat) -> Result<(Vec<f64>, Vec<f64>)> {
    let (b, q) = match state {
        ModelState::Probit(s) => (&s.inducing, s.moments()),
        ModelState::Pg(s) => (&s.inducing, s.qu.to_moment()?),
        ModelState::Ented(s) => (&s.inducing_u, s.qu.to_moment()?),
    };
    if inputs.cols() != b.cols() {
        return dim_err("test inputs and inducing inputs differ in width");
    }
    let qv = match state {
        ModelState::Ented(s) => Some(s.qv.to_moment()?),
        _ => None,
    };
    let kernel = state.kernel();
    let kbb = kernel.gram_sym(b);
    let kbb_factor = crate::kernels::chol_psd(&kbb)?;
    let kbb_inv = kbb_factor.inverse();
    let mut mean = Vec::with_capacity(inputs.rows());
    let mut var = Vec::with_capacity(inputs.rows());
    let rows: Vec<usize> = (0..inputs.rows()).collect();
    for chunk in rows.chunks(CHUNK) {
        let m = inputs.select_rows(chunk);
        let (cm, cv) = match (state, &qv) {
            (ModelState::Ented(s), Some(qv)) => solve_marginals(&solve_geometry(s, m)?, &q, qv),
            _ => {
                let g =
                    BatchGeometry::with_factor(kernel, m, b, kbb.clone(), kbb_factor.clone(), kbb_inv.clone())?;
                svgp_marginals(&g, &q)
            }
        };
        mean.extend(cm);
        var.extend(cv);
    }
    Ok((mean, var))
}

/// Point predictions and latent draws at the rows of `inputs`.
///
/// Logistic models report `E[σ(f)]` (Monte Carlo) or `σ(E f)`. The probit model
/// reports the exact `Φ(μ/√(2+σ²))`, or `Φ(μ/√2)` in plug-in mode. Count models
/// always report the lognormal mean `ζ·exp(μ + σ²/2)`.
pub fn predict(state: &ModelState, inputs: &Mat, mode: PredictMode) -> Result<Prediction> {
    let (mean, var) = posterior_f(state, inputs)?;
    let observation = match state {
        ModelState::Probit(_) => Observation::Probit,
        ModelState::Pg(s) => observation_of(&s.likelihood),
        ModelState::Ented(s) => observation_of(&s.likelihood),
    };
    predict_from_marginals(mean, var, observation, mode)
}

/// The prediction step of [`predict`] for given Gaussian marginals of `f`.
pub fn predict_from_marginals(
    mean: Vec<f64>,
    var: Vec<f64>,
    observation: Observation,
    mode: PredictMode,
) -> Result<Prediction> {
    if mean.len() != var.len() {
        return dim_err("means and variances differ in length");
    }
    let n = mean.len();
    let draws = match mode {
        PredictMode::PlugIn => Mat::from_vec(n, 1, mean.clone()),
        PredictMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return dim_err("Monte-Carlo prediction needs at least one sample");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Mat::from_fn(n, samples, |i, _| mean[i] + math::sqrt(var[i].max(0.0)) * rng.sample::<f64, _>(StandardNormal))
        }
    };
    let value = (0..n)
        .map(|i| match (observation, mode) {
            (Observation::NegBin { zeta }, _) => zeta * math::exp(mean[i] + 0.5 * var[i]),
            (Observation::Probit, PredictMode::PlugIn) => {
                math::normal_cdf(mean[i] * core::f64::consts::FRAC_1_SQRT_2)
            }
            (Observation::Probit, _) => math::normal_cdf(mean[i] / math::sqrt(2.0 + var[i])),
            (Observation::Logistic, PredictMode::PlugIn) => math::sigmoid(mean[i]),
            (Observation::Logistic, _) => {
                let row = draws.row(i);
                row.iter().map(|&f| math::sigmoid(f)).sum::<f64>() / row.len() as f64
            }
        })
        .map(|v| match observation {
            Observation::NegBin { .. } => v,
            _ => v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR),
        })
        .collect();
    Ok(Prediction { mean, var, value, draws, observation })
}

fn observation_of(l: &Likelihood) -> Observation {
    match *l {
        Likelihood::Bernoulli => Observation::Logistic,
        Likelihood::NegBin { zeta } => Observation::NegBin { zeta },
    }
}
