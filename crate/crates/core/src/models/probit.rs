//! Probit-link sparse GP (`gptf-probit`) with a moment-form posterior
//! `q(u) = N(μ, LLᵀ)` trained by plain gradient ascent.
//!
//! The model is `x ~ Bernoulli(Φ(ω))`, `ω ~ N(f, 1)`, so that the per-entry
//! expected log likelihood has the closed form `log Φ(±κᵀμ/√2)` once the
//! variance terms are bounded out.

use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::kernels::{chol_psd, RbfKernel};
use crate::linalg::{matmul, Mat, Op};
use crate::math::{d_log_normal_cdf, log_normal_cdf};
use crate::tensor::EntryBatch;
use crate::vgauss::{kl_moments, Moments};

use super::{add_outer, kappa_backward, neg_kl_prior_adjoint, scale_rows, weighted_gram, BatchGeometry, FactorSet, ParamGrads};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbitState {
    pub kernel: RbfKernel,
    pub inducing: Mat,
    pub mean: Vec<f64>,
    /// Lower-triangular `L` with `Σ = LLᵀ`; entries above the diagonal are ignored.
    pub chol: Mat,
}

impl ProbitState {
    /// `μ = 0`, `L = chol(K_BB)`.
    pub fn at_prior(kernel: RbfKernel, inducing: Mat) -> Result<Self> {
        if inducing.rows() == 0 {
            return dim_err("at least one inducing input is required");
        }
        let f = chol_psd(&kernel.gram_sym(&inducing))?;
        Ok(ProbitState { kernel, mean: alloc::vec![0.0; inducing.rows()], chol: f.lower().clone(), inducing })
    }

    #[inline]
    pub fn num_inducing(&self) -> usize {
        self.inducing.rows()
    }

    pub fn geometry(&self, factors: &FactorSet, indices: &[usize]) -> Result<BatchGeometry> {
        if factors.input_dim() != self.inducing.cols() {
            return dim_err("inducing inputs and factors disagree on D·R");
        }
        BatchGeometry::new(&self.kernel, factors.assemble(indices)?, &self.inducing)
    }

    /// Moment form of `q(u)`.
    pub fn moments(&self) -> Moments {
        let l = lower_part(&self.chol);
        let cov = matmul(&l, Op::N, &l, Op::T);
        let logdet_cov = 2.0 * l.diag().iter().map(|d| libm::log(d.abs())).sum::<f64>();
        Moments { mean: self.mean.clone(), cov, logdet_cov }
    }
}

fn lower_part(a: &Mat) -> Mat {
    Mat::from_fn(a.rows(), a.cols(), |i, j| if j <= i { a[(i, j)] } else { 0.0 })
}

fn binary_labels(batch: &EntryBatch) -> Result<Vec<bool>> {
    batch
        .values
        .iter()
        .enumerate()
        .map(|(n, &x)| match x {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::InvalidValue { entry: n, value: x as i64, kind: "binary" }),
        })
        .collect()
}

/// `log Φ(±m/√2)` for label `x`, and its derivative in `m`.
fn probit_term(x: bool, m: f64) -> (f64, f64) {
    let z = m * core::f64::consts::FRAC_1_SQRT_2;
    if x {
        (log_normal_cdf(z), d_log_normal_cdf(z) * core::f64::consts::FRAC_1_SQRT_2)
    } else {
        (log_normal_cdf(-z), -d_log_normal_cdf(-z) * core::f64::consts::FRAC_1_SQRT_2)
    }
}

pub fn probit_elbo(state: &ProbitState, factors: &FactorSet, batch: &EntryBatch) -> Result<f64> {
    let g = state.geometry(factors, &batch.indices)?;
    probit_elbo_with(factors, batch, &g, &state.moments())
}

pub fn probit_elbo_with(factors: &FactorSet, batch: &EntryBatch, g: &BatchGeometry, q: &Moments) -> Result<f64> {
    let labels = binary_labels(batch)?;
    if labels.len() != g.len() {
        return dim_err("geometry and batch must have the same length");
    }
    let m = g.mean(q);
    let (s, _) = g.quad(q);
    let data: f64 = (0..g.len()).map(|n| probit_term(labels[n], m[n]).0 - 0.5 * g.k_tilde[n] - 0.5 * s[n]).sum();
    Ok(batch.scale * data - kl_moments(q, &g.kbb_factor, &g.kbb_inv) + factors.log_prior())
}

/// ELBO and gradients with respect to the factors, `B`, the log bandwidth, `μ`
/// and the lower triangle of `L`.
pub fn probit_elbo_grad(state: &ProbitState, factors: &FactorSet, batch: &EntryBatch) -> Result<(f64, ParamGrads)> {
    let g = state.geometry(factors, &batch.indices)?;
    let q = state.moments();
    let value = probit_elbo_with(factors, batch, &g, &q)?;
    let labels = binary_labels(batch)?;
    let scale = batch.scale;
    let m = g.mean(&q);
    let (_, ks) = g.quad(&q);
    let s = g.len();

    let gm: Vec<f64> = (0..s).map(|n| scale * probit_term(labels[n], m[n]).1).collect();
    let gs = alloc::vec![-0.5 * scale; s];
    let neg_gk: Vec<f64> = g.k_tilde_raw.iter().map(|&raw| if raw > 0.0 { 0.5 * scale } else { 0.0 }).collect();

    let mut kappa_bar = Mat::zeros(s, state.num_inducing());
    add_outer(&mut kappa_bar, &gm, &q.mean);
    kappa_bar.axpy(2.0, &scale_rows(&ks, &gs));
    kappa_bar.axpy(1.0, &scale_rows(&g.kmb, &neg_gk));
    let mut kmb_bar = scale_rows(&g.kappa, &neg_gk);

    let (dkmb, mut kbb_bar) = kappa_backward(&g.kappa, &kappa_bar, &g.kbb_inv);
    kmb_bar.axpy(1.0, &dkmb);
    kbb_bar.axpy(1.0, &neg_kl_prior_adjoint(&g.kbb_inv, &q));

    let mut grads = ParamGrads::new(factors, &state.inducing, None);
    let cross = state.kernel.gram_backward(&g.inputs, &state.inducing, &g.kmb, &kmb_bar);
    let auto = state.kernel.gram_backward(&state.inducing, &state.inducing, &g.kbb, &kbb_bar);
    factors.scatter_add(&mut grads.factors, &batch.indices, &cross.left);
    grads.inducing_u.axpy(1.0, &cross.right);
    grads.inducing_u.axpy(1.0, &auto.left);
    grads.inducing_u.axpy(1.0, &auto.right);
    grads.log_bandwidth = cross.log_bandwidth + auto.log_bandwidth;

    // μ: data pulls along κᵀ ḡ_m, the KL towards zero through K⁻¹.
    let mut mean_grad = g.kappa.tr_mat_vec(&gm);
    for (a, b) in mean_grad.iter_mut().zip(g.kbb_inv.mat_vec(&q.mean)) {
        *a -= b;
    }
    // L: 2 κᵀ diag(ḡ_s) κ L − K⁻¹ L + diag(1/L_ii), lower triangle only.
    let l = lower_part(&state.chol);
    let mut a = weighted_gram(&g.kappa, &gs).scaled(2.0);
    a.axpy(-1.0, &g.kbb_inv);
    let full = matmul(&a, Op::N, &l, Op::N);
    let chol_grad = Mat::from_fn(l.rows(), l.cols(), |i, j| {
        if j > i {
            0.0
        } else if j == i {
            full[(i, i)] + 1.0 / l[(i, i)]
        } else {
            full[(i, j)]
        }
    });
    grads.mean = mean_grad;
    grads.chol = chol_grad;
    Ok((value, grads))
}
