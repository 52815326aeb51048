//! Orthogonally decoupled sparse GP (`ented`): `f = K_MB K_BB⁻¹ u + f⊥`, with
//! the residual `f⊥` summarized by a second inducing set `H` and `q(v)`.

use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::kernels::{chol_psd, chol_psd_scaled, PsdFactor, RbfKernel};
use crate::linalg::{matmul, Mat, Op};
use crate::pg::PgSite;
use crate::tensor::EntryBatch;
use crate::vgauss::{kl_moments, Moments, NaturalGaussian};

use super::svgp::{check_sites, site_term};
use super::{
    add_outer, kappa_backward, neg_kl_prior_adjoint, row_dots, scale_rows, weighted_gram, BatchGeometry, FactorSet,
    Likelihood, ParamGrads,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveState {
    pub kernel: RbfKernel,
    pub inducing_u: Mat,
    /// Inducing inputs `H` of the orthogonal component; may have zero rows.
    pub inducing_v: Mat,
    pub qu: NaturalGaussian,
    pub qv: NaturalGaussian,
    pub likelihood: Likelihood,
}

impl SolveState {
    /// A state with `q(u) = N(0, K_BB)` and `q(v) = N(0, K_HH)`.
    pub fn at_prior(kernel: RbfKernel, inducing_u: Mat, inducing_v: Mat, likelihood: Likelihood) -> Result<Self> {
        if inducing_u.rows() == 0 {
            return dim_err("at least one inducing input is required for u");
        }
        if inducing_v.cols() != inducing_u.cols() {
            return dim_err("B and H must have the same width");
        }
        let qu = NaturalGaussian::from_prior(&chol_psd(&kernel.gram_sym(&inducing_u))?);
        let qv = NaturalGaussian::from_prior(&chol_psd(&kernel.gram_sym(&inducing_v))?);
        Ok(SolveState { kernel, inducing_u, inducing_v, qu, qv, likelihood })
    }

    #[inline]
    pub fn num_inducing_u(&self) -> usize {
        self.inducing_u.rows()
    }

    #[inline]
    pub fn num_inducing_v(&self) -> usize {
        self.inducing_v.rows()
    }

    pub fn geometry(&self, factors: &FactorSet, indices: &[usize]) -> Result<SolveGeometry> {
        if factors.input_dim() != self.inducing_u.cols() {
            return dim_err("inducing inputs and factors disagree on D·R");
        }
        solve_geometry(self, factors.assemble(indices)?)
    }
}

/// Batch geometry of the decoupled model: the SVGP part against `B` plus the
/// conditional quantities `C_MH`, `C_HH` and `κ⁽ᵛ⁾ = C_MH C_HH⁻¹`.
#[derive(Debug, Clone)]
pub struct SolveGeometry {
    pub base: BatchGeometry,
    pub kmh: Mat,
    pub khh: Mat,
    pub khh_factor: PsdFactor,
    pub khh_inv: Mat,
    pub kbh: Mat,
    /// `K_BB⁻¹ K_BH`
    pub kbb_inv_kbh: Mat,
    pub chh: Mat,
    pub chh_inv: Mat,
    pub cmh: Mat,
    pub kappa_v: Mat,
    /// `c_nᵀ C_HH⁻¹ c_n` for each row `c_n` of `C_MH`.
    pub explained: Vec<f64>,
}

impl SolveGeometry {
    #[inline]
    pub fn len(&self) -> usize {
        self.base.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// `μ⁽ᶠ⊥⁾`, raw `diag Σ⁽ᶠ⊥⁾` and `κ⁽ᵛ⁾Σ⁽ᵛ⁾`.
    fn perp_parts(&self, qv: &Moments) -> (Vec<f64>, Vec<f64>, Mat) {
        let mean = self.kappa_v.mat_vec(&qv.mean);
        let ks = matmul(&self.kappa_v, Op::N, &qv.cov, Op::N);
        let quad = row_dots(&ks, &self.kappa_v);
        let var = (0..self.len()).map(|n| self.base.k_tilde_raw[n] - self.explained[n] + quad[n]).collect();
        (mean, var, ks)
    }

    /// Mean and clamped variance of `q(f⊥)` at the batch inputs.
    pub fn f_perp(&self, qv: &Moments) -> (Vec<f64>, Vec<f64>) {
        let (mean, var, _) = self.perp_parts(qv);
        (mean, var.into_iter().map(|v| v.max(0.0)).collect())
    }
}

/// Computes [`SolveGeometry`] for assembled inputs `M`.
pub fn solve_geometry(state: &SolveState, inputs: Mat) -> Result<SolveGeometry> {
    let kernel = &state.kernel;
    let (b, h) = (&state.inducing_u, &state.inducing_v);
    let base = BatchGeometry::new(kernel, inputs, b)?;
    let kmh = kernel.gram(&base.inputs, h)?;
    let khh = kernel.gram_sym(h);
    let khh_factor = chol_psd(&khh)?;
    let khh_inv = khh_factor.inverse();
    let kbh = kernel.gram(b, h)?;
    let kbb_inv_kbh = matmul(&base.kbb_inv, Op::N, &kbh, Op::N);
    let mut chh = khh.clone();
    chh.axpy(-1.0, &matmul(&kbh, Op::T, &kbb_inv_kbh, Op::N));
    chh.symmetrize();
    // C_HH collapses to (numerically) zero when H ≈ B, so the jitter unit comes
    // from K_HH rather than from C_HH's own trace.
    let pv = h.rows().max(1) as f64;
    let chh_inv = chol_psd_scaled(&chh, khh.trace() / pv)?.inverse();
    let mut cmh = kmh.clone();
    cmh.axpy(-1.0, &matmul(&base.kappa, Op::N, &kbh, Op::N));
    let kappa_v = matmul(&cmh, Op::N, &chh_inv, Op::N);
    let explained = row_dots(&kappa_v, &cmh);
    Ok(SolveGeometry {
        base,
        kmh,
        khh,
        khh_factor,
        khh_inv,
        kbh,
        kbb_inv_kbh,
        chh,
        chh_inv,
        cmh,
        kappa_v,
        explained,
    })
}

/// Per-entry marginal pieces shared by the bound, the local update and the gradient.
struct Marginals {
    mu_u: Vec<f64>,
    mu_perp: Vec<f64>,
    /// `κ⁽ᵘ⁾ᵀΣ⁽ᵘ⁾κ⁽ᵘ⁾`
    quad_u: Vec<f64>,
    ks_u: Mat,
    var_perp_raw: Vec<f64>,
    ks_v: Mat,
}

impl Marginals {
    fn new(g: &SolveGeometry, qu: &Moments, qv: &Moments) -> Self {
        let mu_u = g.base.mean(qu);
        let (quad_u, ks_u) = g.base.quad(qu);
        let (mu_perp, var_perp_raw, ks_v) = g.perp_parts(qv);
        Marginals { mu_u, mu_perp, quad_u, ks_u, var_perp_raw, ks_v }
    }

    #[inline]
    fn mean(&self, n: usize) -> f64 {
        self.mu_u[n] + self.mu_perp[n]
    }

    #[inline]
    fn var(&self, n: usize) -> f64 {
        self.var_perp_raw[n].max(0.0) + self.quad_u[n]
    }
}

/// `c_n = √(μ_n² + σ⊥_n + κ⁽ᵘ⁾ᵀΣ⁽ᵘ⁾κ⁽ᵘ⁾)` with `μ_n = μ⊥_n + κ⁽ᵘ⁾ᵀμ⁽ᵘ⁾`.
pub fn solve_local_update(geometry: &SolveGeometry, qu: &Moments, qv: &Moments) -> Vec<f64> {
    let mg = Marginals::new(geometry, qu, qv);
    (0..geometry.len()).map(|n| libm::sqrt((mg.mean(n) * mg.mean(n) + mg.var(n)).max(0.0))).collect()
}

pub fn solve_elbo(state: &SolveState, factors: &FactorSet, batch: &EntryBatch, sites: &[PgSite]) -> Result<f64> {
    let geometry = state.geometry(factors, &batch.indices)?;
    solve_elbo_with(factors, batch, &geometry, &state.qu.to_moment()?, &state.qv.to_moment()?, sites)
}

pub fn solve_elbo_with(
    factors: &FactorSet,
    batch: &EntryBatch,
    geometry: &SolveGeometry,
    qu: &Moments,
    qv: &Moments,
    sites: &[PgSite],
) -> Result<f64> {
    check_sites(batch, sites, geometry.len())?;
    let mg = Marginals::new(geometry, qu, qv);
    let data: f64 = sites.iter().enumerate().map(|(n, site)| site_term(site, mg.mean(n), mg.var(n))).sum();
    let kl_u = kl_moments(qu, &geometry.base.kbb_factor, &geometry.base.kbb_inv);
    let kl_v = kl_moments(qv, &geometry.khh_factor, &geometry.khh_inv);
    Ok(batch.scale * data - kl_u - kl_v + factors.log_prior())
}

/// ELBO and its gradient with respect to the factors, `B`, `H` and the log
/// bandwidth, holding `q(u)`, `q(v)` and the sites fixed.
pub fn solve_elbo_grad(
    state: &SolveState,
    factors: &FactorSet,
    batch: &EntryBatch,
    g: &SolveGeometry,
    qu: &Moments,
    qv: &Moments,
    sites: &[PgSite],
) -> Result<(f64, ParamGrads)> {
    let value = solve_elbo_with(factors, batch, g, qu, qv, sites)?;
    let scale = batch.scale;
    let mg = Marginals::new(g, qu, qv);
    let s = g.len();

    let gm: Vec<f64> = (0..s).map(|n| scale * (sites[n].chi - sites[n].theta * mg.mean(n))).collect();
    let gs: Vec<f64> = sites.iter().map(|site| -0.5 * scale * site.theta).collect();
    let gp: Vec<f64> = (0..s).map(|n| if mg.var_perp_raw[n] > 0.0 { gs[n] } else { 0.0 }).collect();
    let neg_gp: Vec<f64> = gp.iter().map(|v| -v).collect();

    // Direct dependence on κ⁽ᵘ⁾, κ⁽ᵛ⁾, K_MB and the conditional covariances.
    let mut ku_bar = Mat::zeros(s, state.num_inducing_u());
    add_outer(&mut ku_bar, &gm, &qu.mean);
    ku_bar.axpy(2.0, &scale_rows(&mg.ks_u, &gs));
    ku_bar.axpy(1.0, &scale_rows(&g.base.kmb, &neg_gp));
    let mut kmb_bar = scale_rows(&g.base.kappa, &neg_gp);

    let mut kv_bar = Mat::zeros(s, state.num_inducing_v());
    add_outer(&mut kv_bar, &gm, &qv.mean);
    kv_bar.axpy(2.0, &scale_rows(&mg.ks_v, &gp));
    let mut cmh_bar = scale_rows(&g.kappa_v, &neg_gp).scaled(2.0);
    let mut chh_bar = weighted_gram(&g.kappa_v, &gp);

    // κ⁽ᵛ⁾ = C_MH C_HH⁻¹
    let (dcmh, dchh) = kappa_backward(&g.kappa_v, &kv_bar, &g.chh_inv);
    cmh_bar.axpy(1.0, &dcmh);
    chh_bar.axpy(1.0, &dchh);
    chh_bar.symmetrize();

    // C_MH = K_MH − κ⁽ᵘ⁾K_BH
    let kmh_bar = cmh_bar.clone();
    ku_bar.axpy(-1.0, &matmul(&cmh_bar, Op::N, &g.kbh, Op::T));
    let mut kbh_bar = matmul(&g.base.kappa, Op::T, &cmh_bar, Op::N).scaled(-1.0);

    // C_HH = K_HH − K_BHᵀ K_BB⁻¹ K_BH
    let mut khh_bar = chh_bar.clone();
    kbh_bar.axpy(-2.0, &matmul(&g.kbb_inv_kbh, Op::N, &chh_bar, Op::N));
    let gc = matmul(&g.kbb_inv_kbh, Op::N, &chh_bar, Op::N);
    let mut kbb_bar = matmul(&gc, Op::N, &g.kbb_inv_kbh, Op::T);

    // κ⁽ᵘ⁾ = K_MB K_BB⁻¹
    let (dkmb, dkbb) = kappa_backward(&g.base.kappa, &ku_bar, &g.base.kbb_inv);
    kmb_bar.axpy(1.0, &dkmb);
    kbb_bar.axpy(1.0, &dkbb);

    kbb_bar.axpy(1.0, &neg_kl_prior_adjoint(&g.base.kbb_inv, qu));
    khh_bar.axpy(1.0, &neg_kl_prior_adjoint(&g.khh_inv, qv));

    let k = &state.kernel;
    let (b, h, m) = (&state.inducing_u, &state.inducing_v, &g.base.inputs);
    let mut grads = ParamGrads::new(factors, b, Some(h));
    let mut input_bar = Mat::zeros(m.rows(), m.cols());

    let mb = k.gram_backward(m, b, &g.base.kmb, &kmb_bar);
    let mh = k.gram_backward(m, h, &g.kmh, &kmh_bar);
    let bb = k.gram_backward(b, b, &g.base.kbb, &kbb_bar);
    let hh = k.gram_backward(h, h, &g.khh, &khh_bar);
    let bh = k.gram_backward(b, h, &g.kbh, &kbh_bar);
    input_bar.axpy(1.0, &mb.left);
    input_bar.axpy(1.0, &mh.left);
    for part in [&mb.right, &bb.left, &bb.right, &bh.left] {
        grads.inducing_u.axpy(1.0, part);
    }
    for part in [&mh.right, &hh.left, &hh.right, &bh.right] {
        grads.inducing_v.axpy(1.0, part);
    }
    grads.log_bandwidth =
        mb.log_bandwidth + mh.log_bandwidth + bb.log_bandwidth + hh.log_bandwidth + bh.log_bandwidth;
    factors.scatter_add(&mut grads.factors, &batch.indices, &input_bar);
    Ok((value, grads))
}

/// Target for `q(u)`: `η₁ = (N/s) Σ (χ_n − θ_n μ⊥_n) κ⁽ᵘ⁾_n`,
/// `η₂ = −½(K_BB⁻¹ + (N/s) Σ θ_n κ⁽ᵘ⁾_n κ⁽ᵘ⁾ᵀ_n)`.
pub fn solve_ng_target_u(
    geometry: &SolveGeometry,
    batch: &EntryBatch,
    sites: &[PgSite],
    qv: &Moments,
) -> Result<(Vec<f64>, Mat)> {
    check_sites(batch, sites, geometry.len())?;
    let other = geometry.kappa_v.mat_vec(&qv.mean);
    Ok(targets(&geometry.base.kappa, &geometry.base.kbb_inv, batch.scale, sites, &other))
}

/// Target for `q(v)`, the mirror image of [`solve_ng_target_u`] with `K_HH`
/// and the cross term `κ⁽ᵘ⁾ᵀμ⁽ᵘ⁾`.
pub fn solve_ng_target_v(
    geometry: &SolveGeometry,
    batch: &EntryBatch,
    sites: &[PgSite],
    qu: &Moments,
) -> Result<(Vec<f64>, Mat)> {
    check_sites(batch, sites, geometry.len())?;
    let other = geometry.base.kappa.mat_vec(&qu.mean);
    Ok(targets(&geometry.kappa_v, &geometry.khh_inv, batch.scale, sites, &other))
}

/// Both targets evaluated at the same `(q(u), q(v))`.
pub fn solve_ng_targets(
    geometry: &SolveGeometry,
    batch: &EntryBatch,
    sites: &[PgSite],
    qu: &Moments,
    qv: &Moments,
) -> Result<((Vec<f64>, Mat), (Vec<f64>, Mat))> {
    Ok((solve_ng_target_u(geometry, batch, sites, qv)?, solve_ng_target_v(geometry, batch, sites, qu)?))
}

fn targets(kappa: &Mat, prior_inv: &Mat, scale: f64, sites: &[PgSite], other: &[f64]) -> (Vec<f64>, Mat) {
    let lin: Vec<f64> = sites.iter().zip(other).map(|(s, &o)| scale * (s.chi - s.theta * o)).collect();
    let theta: Vec<f64> = sites.iter().map(|s| scale * s.theta).collect();
    let eta1 = kappa.tr_mat_vec(&lin);
    let mut eta2 = weighted_gram(kappa, &theta);
    eta2.axpy(1.0, prior_inv);
    eta2.scale(-0.5);
    eta2.symmetrize();
    (eta1, eta2)
}

/// Mean and variance of `q(f)` at the geometry's inputs.
pub(crate) fn solve_marginals(geometry: &SolveGeometry, qu: &Moments, qv: &Moments) -> (Vec<f64>, Vec<f64>) {
    let mg = Marginals::new(geometry, qu, qv);
    ((0..geometry.len()).map(|n| mg.mean(n)).collect(), (0..geometry.len()).map(|n| mg.var(n)).collect())
}
