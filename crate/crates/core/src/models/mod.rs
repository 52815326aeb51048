//! The three model variants and the pieces they share: latent factors, batch
//! geometry against an inducing set, and adjoint bookkeeping for gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::kernels::{chol_psd, PsdFactor, RbfKernel};
use crate::linalg::{gemm, matmul, Mat, Op};
use crate::pg::{site_params, PgSite};
use crate::tensor::{EntryBatch, ValueKind};
use crate::vgauss::Moments;

pub mod predict;
pub mod probit;
pub mod solve;
pub mod svgp;

pub use predict::{posterior_f, predict, predict_from_marginals, PredictMode, Prediction};
pub use probit::ProbitState;
pub use solve::{SolveGeometry, SolveState};
pub use svgp::SvgpState;

/// Which model variant to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    GptfProbit,
    GptfPg,
    Ented,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::GptfProbit => "gptf-probit",
            ModelKind::GptfPg => "gptf-pg",
            ModelKind::Ented => "ented",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gptf-probit" => Some(ModelKind::GptfProbit),
            "gptf-pg" => Some(ModelKind::GptfPg),
            "ented" => Some(ModelKind::Ented),
            _ => None,
        }
    }
}

/// Observation model of the Pólya-Gamma variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    Bernoulli,
    NegBin { zeta: f64 },
}

impl Likelihood {
    pub fn kind(&self) -> ValueKind {
        match self {
            Likelihood::Bernoulli => ValueKind::Binary,
            Likelihood::NegBin { .. } => ValueKind::Count,
        }
    }

    pub fn zeta(&self) -> f64 {
        match *self {
            Likelihood::Bernoulli => 0.0,
            Likelihood::NegBin { zeta } => zeta,
        }
    }

    /// `(b, χ)` for every entry of a batch.
    pub fn site_params(&self, batch: &EntryBatch) -> Result<Vec<(f64, f64)>> {
        batch
            .values
            .iter()
            .enumerate()
            .map(|(n, &x)| {
                site_params(x as f64, self.kind(), self.zeta()).map_err(|e| match e {
                    Error::InvalidValue { value, kind, .. } => Error::InvalidValue { entry: n, value, kind },
                    other => other,
                })
            })
            .collect()
    }

    /// Sites with the given tilts `c`.
    pub fn sites(&self, batch: &EntryBatch, c: &[f64]) -> Result<Vec<PgSite>> {
        if c.len() != batch.len() {
            return dim_err("one tilt per batch entry is required");
        }
        Ok(self.site_params(batch)?.into_iter().zip(c).map(|((b, chi), &c)| PgSite::new(b, chi, c)).collect())
    }
}

/// The `D` latent factor matrices `Z⁽ᵈ⁾ ∈ R^{I_d × R}` under a standard-normal prior.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    factors: Vec<Mat>,
    rank: usize,
}

impl FactorSet {
    pub fn new(factors: Vec<Mat>) -> Result<Self> {
        let rank = factors.first().map(Mat::cols).unwrap_or(0);
        if factors.is_empty() || rank == 0 {
            return arg_err("a factor set needs at least one mode and rank ≥ 1");
        }
        if factors.iter().any(|z| z.cols() != rank || z.rows() == 0) {
            return dim_err("all factor matrices must share the same rank");
        }
        Ok(FactorSet { factors, rank })
    }

    /// Draws every entry i.i.d. from the prior `N(0, 1)`.
    pub fn sample<R: Rng + ?Sized>(shape: &[usize], rank: usize, rng: &mut R) -> Result<Self> {
        let factors =
            shape.iter().map(|&s| Mat::from_fn(s, rank, |_, _| rng.sample::<f64, _>(StandardNormal))).collect();
        FactorSet::new(factors)
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.factors.iter().map(|z| Mat::zeros(z.rows(), z.cols())).collect()
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Width `D·R` of an assembled input row.
    #[inline]
    pub fn input_dim(&self) -> usize {
        self.order() * self.rank
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Mat::rows).collect()
    }

    pub fn factors(&self) -> &[Mat] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [Mat] {
        &mut self.factors
    }

    /// `−½ Σ_d ‖Z⁽ᵈ⁾‖²_F`, the log prior up to its additive constant.
    pub fn log_prior(&self) -> f64 {
        -0.5 * self.factors.iter().map(|z| z.as_slice().iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
    }

    /// Stacks `m_i = [z⁽¹⁾_{i₁}, …, z⁽ᴰ⁾_{i_D}]` for every row of `indices` (row-major `s × D`).
    pub fn assemble(&self, indices: &[usize]) -> Result<Mat> {
        let d = self.order();
        if indices.len() % d != 0 {
            return dim_err("index array length is not a multiple of the tensor order");
        }
        let s = indices.len() / d;
        let r = self.rank;
        let mut m = Mat::zeros(s, d * r);
        for (n, row) in indices.chunks_exact(d).enumerate() {
            let out = m.row_mut(n);
            for (mode, (&i, z)) in row.iter().zip(&self.factors).enumerate() {
                if i >= z.rows() {
                    return Err(Error::IndexOutOfRange { mode, index: i, size: z.rows() });
                }
                out[mode * r..(mode + 1) * r].copy_from_slice(z.row(i));
            }
        }
        Ok(m)
    }

    /// Adds the rows of an input adjoint back onto the factor rows they came from.
    pub fn scatter_add(&self, grads: &mut [Mat], indices: &[usize], input_grad: &Mat) {
        let d = self.order();
        let r = self.rank;
        for (n, row) in indices.chunks_exact(d).enumerate() {
            let g = input_grad.row(n);
            for (mode, &i) in row.iter().enumerate() {
                let dst = grads[mode].row_mut(i);
                for (a, b) in dst.iter_mut().zip(&g[mode * r..(mode + 1) * r]) {
                    *a += b;
                }
            }
        }
    }

    /// Gradient of [`FactorSet::log_prior`]: `−Z`.
    pub fn prior_grad(&self) -> Vec<Mat> {
        self.factors.iter().map(|z| z.scaled(-1.0)).collect()
    }
}

/// Kernel quantities of one batch against one inducing set `B`:
/// `κ_n` (rows of `K_MB K_BB⁻¹`) and `k̃_nn = 1 − κ_nᵀ k_n`.
#[derive(Debug, Clone)]
pub struct BatchGeometry {
    pub inputs: Mat,
    pub kmb: Mat,
    pub kbb: Mat,
    pub kbb_factor: PsdFactor,
    pub kbb_inv: Mat,
    pub kappa: Mat,
    /// `diag K̃` before clamping at zero.
    pub k_tilde_raw: Vec<f64>,
    pub k_tilde: Vec<f64>,
}

impl BatchGeometry {
    pub fn new(kernel: &RbfKernel, inputs: Mat, inducing: &Mat) -> Result<Self> {
        let kbb = kernel.gram_sym(inducing);
        let kbb_factor = chol_psd(&kbb)?;
        let kbb_inv = kbb_factor.inverse();
        BatchGeometry::with_factor(kernel, inputs, inducing, kbb, kbb_factor, kbb_inv)
    }

    /// Reuses an existing factorization of `K_BB`.
    pub fn with_factor(
        kernel: &RbfKernel,
        inputs: Mat,
        inducing: &Mat,
        kbb: Mat,
        kbb_factor: PsdFactor,
        kbb_inv: Mat,
    ) -> Result<Self> {
        let kmb = kernel.gram(&inputs, inducing)?;
        let kappa = matmul(&kmb, Op::N, &kbb_inv, Op::N);
        let k_tilde_raw: Vec<f64> = row_dots(&kappa, &kmb).into_iter().map(|q| 1.0 - q).collect();
        let k_tilde = k_tilde_raw.iter().map(|&v| v.max(0.0)).collect();
        Ok(BatchGeometry { inputs, kmb, kbb, kbb_factor, kbb_inv, kappa, k_tilde_raw, k_tilde })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    /// `κ_nᵀ μ` for every row.
    pub fn mean(&self, q: &Moments) -> Vec<f64> {
        self.kappa.mat_vec(&q.mean)
    }

    /// `κ_nᵀ Σ κ_n` for every row, together with `κ Σ`.
    pub fn quad(&self, q: &Moments) -> (Vec<f64>, Mat) {
        let ks = matmul(&self.kappa, Op::N, &q.cov, Op::N);
        (row_dots(&ks, &self.kappa), ks)
    }
}

/// `Σ_j a_ij b_ij` for each row `i`.
pub(crate) fn row_dots(a: &Mat, b: &Mat) -> Vec<f64> {
    debug_assert_eq!(a.shape(), b.shape());
    (0..a.rows()).map(|i| crate::linalg::dot(a.row(i), b.row(i))).collect()
}

/// `Aᵀ diag(w) A`, symmetrized.
pub(crate) fn weighted_gram(a: &Mat, w: &[f64]) -> Mat {
    let mut scaled = a.clone();
    for (i, &wi) in w.iter().enumerate() {
        scaled.row_mut(i).iter_mut().for_each(|v| *v *= wi);
    }
    let mut out = matmul(a, Op::T, &scaled, Op::N);
    out.symmetrize();
    out
}

/// `diag(w) A`
pub(crate) fn scale_rows(a: &Mat, w: &[f64]) -> Mat {
    let mut out = a.clone();
    for (i, &wi) in w.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v *= wi);
    }
    out
}

/// `A += u vᵀ`
pub(crate) fn add_outer(a: &mut Mat, u: &[f64], v: &[f64]) {
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            crate::linalg::axpy_slice(ui, v, a.row_mut(i));
        }
    }
}

/// Adjoint of `−KL(N(μ, Σ) ‖ N(0, K))` with respect to `K`:
/// `−½[K⁻¹ − K⁻¹(Σ + μμᵀ)K⁻¹]`.
pub(crate) fn neg_kl_prior_adjoint(kinv: &Mat, q: &Moments) -> Mat {
    let mut s = q.cov.clone();
    add_outer(&mut s, &q.mean, &q.mean);
    let t = matmul(kinv, Op::N, &s, Op::N);
    let mut inner = Mat::zeros(kinv.rows(), kinv.cols());
    gemm(1.0, &t, Op::N, kinv, Op::N, 0.0, &mut inner);
    let mut out = kinv.scaled(-0.5);
    out.axpy(0.5, &inner);
    out
}

/// `κᵀ Ā K⁻¹` pulled back through `κ = K_MB K⁻¹`; returns `(K̄_MB, K̄)` contributions.
pub(crate) fn kappa_backward(kappa: &Mat, kappa_bar: &Mat, kinv: &Mat) -> (Mat, Mat) {
    let kmb_bar = matmul(kappa_bar, Op::N, kinv, Op::N);
    let k_bar = matmul(kappa, Op::T, &kmb_bar, Op::N).scaled(-1.0);
    (kmb_bar, k_bar)
}

/// Gradients of an ELBO with respect to every non-variational parameter.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub factors: Vec<Mat>,
    pub inducing_u: Mat,
    /// Empty (`0 × D·R`) for single-inducing-set models.
    pub inducing_v: Mat,
    pub log_bandwidth: f64,
    /// Probit only: gradient w.r.t. the posterior mean and Cholesky factor.
    pub mean: Vec<f64>,
    pub chol: Mat,
}

impl ParamGrads {
    pub(crate) fn new(factors: &FactorSet, inducing_u: &Mat, inducing_v: Option<&Mat>) -> Self {
        let q = factors.input_dim();
        ParamGrads {
            factors: factors.prior_grad(),
            inducing_u: Mat::zeros(inducing_u.rows(), q),
            inducing_v: Mat::zeros(inducing_v.map_or(0, Mat::rows), q),
            log_bandwidth: 0.0,
            mean: vec![],
            chol: Mat::zeros(0, 0),
        }
    }
}

/// A trained or initialized model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelState {
    Probit(ProbitState),
    Pg(SvgpState),
    Ented(SolveState),
}

impl ModelState {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelState::Probit(_) => ModelKind::GptfProbit,
            ModelState::Pg(_) => ModelKind::GptfPg,
            ModelState::Ented(_) => ModelKind::Ented,
        }
    }

    pub fn kernel(&self) -> &RbfKernel {
        match self {
            ModelState::Probit(s) => &s.kernel,
            ModelState::Pg(s) => &s.kernel,
            ModelState::Ented(s) => &s.kernel,
        }
    }

    pub fn value_kind(&self) -> ValueKind {
        match self {
            ModelState::Probit(_) => ValueKind::Binary,
            ModelState::Pg(s) => s.likelihood.kind(),
            ModelState::Ented(s) => s.likelihood.kind(),
        }
    }

    /// `ζ` for negative-binomial models, 0 otherwise.
    pub fn zeta(&self) -> f64 {
        match self {
            ModelState::Probit(_) => 0.0,
            ModelState::Pg(s) => s.likelihood.zeta(),
            ModelState::Ented(s) => s.likelihood.zeta(),
        }
    }
}
