//! Sparse variational GP with Pólya-Gamma augmentation (`gptf-pg`).

use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::kernels::{chol_psd, RbfKernel};
use crate::linalg::Mat;
use crate::pg::PgSite;
use crate::tensor::EntryBatch;
use crate::vgauss::{kl_moments, Moments, NaturalGaussian};

use super::{
    kappa_backward, neg_kl_prior_adjoint, scale_rows, weighted_gram, BatchGeometry, FactorSet, Likelihood,
    ParamGrads,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SvgpState {
    pub kernel: RbfKernel,
    /// Inducing inputs `B`, one per row.
    pub inducing: Mat,
    pub qu: NaturalGaussian,
    pub likelihood: Likelihood,
}

impl SvgpState {
    /// A state whose `q(u)` equals the prior `N(0, K_BB)`.
    pub fn at_prior(kernel: RbfKernel, inducing: Mat, likelihood: Likelihood) -> Result<Self> {
        if inducing.rows() == 0 {
            return dim_err("at least one inducing input is required");
        }
        let qu = NaturalGaussian::from_prior(&chol_psd(&kernel.gram_sym(&inducing))?);
        Ok(SvgpState { kernel, inducing, qu, likelihood })
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
}

/// One entry's contribution to the augmented bound, before the batch scale:
/// `χm − ½θ(m² + v) − KL(PG(b, c) ‖ PG(b, 0))` where `v` is the total variance.
/// The data-only constant `−b·log 2` (and the NB binomial coefficient) is left
/// out, so Bernoulli ELBOs sit `N·log 2` above a true lower bound.
#[inline]
pub(crate) fn site_term(site: &PgSite, mean: f64, var: f64) -> f64 {
    site.chi * mean - 0.5 * site.theta * (mean * mean + var) - site.kl()
}

pub(crate) fn check_sites(batch: &EntryBatch, sites: &[PgSite], rows: usize) -> Result<()> {
    if sites.len() != batch.len() || rows != batch.len() {
        return dim_err("sites, geometry and batch must have the same length");
    }
    Ok(())
}

/// Closed-form optimum of the PG tilts: `c_n = √(k̃ + κᵀΣκ + (κᵀμ)²)`.
pub fn pg_local_update(geometry: &BatchGeometry, qu: &Moments) -> Vec<f64> {
    let m = geometry.mean(qu);
    let (s, _) = geometry.quad(qu);
    (0..geometry.len()).map(|n| libm::sqrt((geometry.k_tilde[n] + s[n] + m[n] * m[n]).max(0.0))).collect()
}

/// The ELBO with geometry computed on the fly.
pub fn pg_elbo(state: &SvgpState, factors: &FactorSet, batch: &EntryBatch, sites: &[PgSite]) -> Result<f64> {
    let geometry = state.geometry(factors, &batch.indices)?;
    pg_elbo_with(factors, batch, &geometry, &state.qu.to_moment()?, sites)
}

/// The ELBO against precomputed geometry and moments.
pub fn pg_elbo_with(
    factors: &FactorSet,
    batch: &EntryBatch,
    geometry: &BatchGeometry,
    qu: &Moments,
    sites: &[PgSite],
) -> Result<f64> {
    check_sites(batch, sites, geometry.len())?;
    let m = geometry.mean(qu);
    let (s, _) = geometry.quad(qu);
    let data: f64 = sites.iter().enumerate().map(|(n, site)| site_term(site, m[n], geometry.k_tilde[n] + s[n])).sum();
    let kl = kl_moments(qu, &geometry.kbb_factor, &geometry.kbb_inv);
    Ok(batch.scale * data - kl + factors.log_prior())
}

/// ELBO value and its gradient with respect to the factors, `B` and the log
/// bandwidth, holding `q(u)` and the sites fixed.
pub fn pg_elbo_grad(
    state: &SvgpState,
    factors: &FactorSet,
    batch: &EntryBatch,
    geometry: &BatchGeometry,
    qu: &Moments,
    sites: &[PgSite],
) -> Result<(f64, ParamGrads)> {
    let value = pg_elbo_with(factors, batch, geometry, qu, sites)?;
    let scale = batch.scale;
    let g = geometry;
    let m = g.mean(qu);
    let (_, ks) = g.quad(qu);

    // Per-entry sensitivities of the data term to m, κᵀΣκ and k̃.
    let gm: Vec<f64> = sites.iter().zip(&m).map(|(site, &mn)| scale * (site.chi - site.theta * mn)).collect();
    let gs: Vec<f64> = sites.iter().map(|site| -0.5 * scale * site.theta).collect();
    let gk: Vec<f64> =
        gs.iter().zip(&g.k_tilde_raw).map(|(&v, &raw)| if raw > 0.0 { v } else { 0.0 }).collect();

    let mut kappa_bar = Mat::zeros(g.len(), state.num_inducing());
    super::add_outer(&mut kappa_bar, &gm, &qu.mean);
    kappa_bar.axpy(2.0, &scale_rows(&ks, &gs));
    let neg_gk: Vec<f64> = gk.iter().map(|v| -v).collect();
    kappa_bar.axpy(1.0, &scale_rows(&g.kmb, &neg_gk));
    let mut kmb_bar = scale_rows(&g.kappa, &neg_gk);

    let (dkmb, mut kbb_bar) = kappa_backward(&g.kappa, &kappa_bar, &g.kbb_inv);
    kmb_bar.axpy(1.0, &dkmb);
    kbb_bar.axpy(1.0, &neg_kl_prior_adjoint(&g.kbb_inv, qu));

    let mut grads = ParamGrads::new(factors, &state.inducing, None);
    let cross = state.kernel.gram_backward(&g.inputs, &state.inducing, &g.kmb, &kmb_bar);
    let auto = state.kernel.gram_backward(&state.inducing, &state.inducing, &g.kbb, &kbb_bar);
    factors.scatter_add(&mut grads.factors, &batch.indices, &cross.left);
    grads.inducing_u.axpy(1.0, &cross.right);
    grads.inducing_u.axpy(1.0, &auto.left);
    grads.inducing_u.axpy(1.0, &auto.right);
    grads.log_bandwidth = cross.log_bandwidth + auto.log_bandwidth;
    Ok((value, grads))
}

/// Natural-parameter targets of the `q(u)` update:
/// `η₁ = (N/s) Σ χ_n κ_n`, `η₂ = −½(K_BB⁻¹ + (N/s) Σ θ_n κ_n κ_nᵀ)`.
pub fn pg_ng_targets(geometry: &BatchGeometry, batch: &EntryBatch, sites: &[PgSite]) -> Result<(Vec<f64>, Mat)> {
    check_sites(batch, sites, geometry.len())?;
    let chi: Vec<f64> = sites.iter().map(|s| batch.scale * s.chi).collect();
    let theta: Vec<f64> = sites.iter().map(|s| batch.scale * s.theta).collect();
    let eta1 = geometry.kappa.tr_mat_vec(&chi);
    let mut eta2 = weighted_gram(&geometry.kappa, &theta);
    eta2.axpy(1.0, &geometry.kbb_inv);
    eta2.scale(-0.5);
    eta2.symmetrize();
    Ok((eta1, eta2))
}

/// Mean and variance of `q(f)` at the geometry's inputs: `κᵀμ`, `k̃ + κᵀΣκ`.
pub(crate) fn svgp_marginals(geometry: &BatchGeometry, qu: &Moments) -> (Vec<f64>, Vec<f64>) {
    let m = geometry.mean(qu);
    let (s, _) = geometry.quad(qu);
    let v = s.iter().zip(&geometry.k_tilde).map(|(a, b)| (a + b).max(0.0)).collect();
    (m, v)
}
