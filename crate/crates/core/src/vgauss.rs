//! Full-covariance Gaussian variational distributions stored in natural
//! parameters `η₁ = Σ⁻¹μ`, `η₂ = −½Σ⁻¹`.

use alloc::vec::Vec;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::kernels::{chol_psd, PsdFactor};
use crate::linalg::{self, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGaussian {
    eta1: Vec<f64>,
    eta2: Mat,
}

/// Moment form of a Gaussian, with `log |Σ|` cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub cov: Mat,
    pub logdet_cov: f64,
}

/// Cholesky factor of a negative-definite `η₂` scaled to the precision `−2η₂`,
/// with no jitter allowed.
fn precision_factor(eta2: &Mat) -> Result<Mat> {
    let mut p = eta2.scaled(-2.0);
    if p.asymmetry() > 1e-10 {
        return Err(Error::NotSymmetric);
    }
    p.symmetrize();
    if !linalg::cholesky_in_place(&mut p) {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    Ok(p)
}

impl NaturalGaussian {
    /// Builds from natural parameters, checking that `η₂` is symmetric negative definite.
    pub fn new(eta1: Vec<f64>, eta2: Mat) -> Result<Self> {
        if eta2.rows() != eta2.cols() || eta2.rows() != eta1.len() {
            return dim_err("natural parameters have inconsistent sizes");
        }
        precision_factor(&eta2)?;
        Ok(NaturalGaussian { eta1, eta2 })
    }

    pub fn from_moment(mean: &[f64], cov: &Mat) -> Result<Self> {
        if cov.rows() != cov.cols() || cov.rows() != mean.len() {
            return dim_err("mean and covariance have inconsistent sizes");
        }
        if cov.asymmetry() > 1e-10 {
            return Err(Error::NotSymmetric);
        }
        let mut l = cov.clone();
        l.symmetrize();
        if !linalg::cholesky_in_place(&mut l) {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        let f = PsdFactor::from_lower(l, 0.0)?;
        let mut eta2 = f.inverse();
        let eta1 = eta2.mat_vec(mean);
        eta2.scale(-0.5);
        Ok(NaturalGaussian { eta1, eta2 })
    }

    /// `N(0, K)` for a prior given by its factor.
    pub fn from_prior(prior: &PsdFactor) -> Self {
        let mut eta2 = prior.inverse();
        eta2.scale(-0.5);
        NaturalGaussian { eta1: alloc::vec![0.0; prior.dim()], eta2 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.eta1.len()
    }

    #[inline]
    pub fn eta1(&self) -> &[f64] {
        &self.eta1
    }

    #[inline]
    pub fn eta2(&self) -> &Mat {
        &self.eta2
    }

    pub fn to_moment(&self) -> Result<Moments> {
        let l = precision_factor(&self.eta2)?;
        let f = PsdFactor::from_lower(l, 0.0)?;
        let cov = f.inverse();
        let mean = f.solve_vec(&self.eta1);
        Ok(Moments { mean, cov, logdet_cov: -f.logdet() })
    }

    /// `KL(q ‖ N(0, K))`.
    pub fn kl_to_prior(&self, prior: &PsdFactor) -> Result<f64> {
        if prior.dim() != self.dim() {
            return dim_err("kl_to_prior: prior dimension differs");
        }
        let m = self.to_moment()?;
        Ok(kl_moments(&m, prior, &prior.inverse()))
    }

    /// Natural-gradient step `η ← η + ρ(target − η) = (1−ρ)η + ρ·target`.
    pub fn ng_step(&self, target_eta1: &[f64], target_eta2: &Mat, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return arg_err(alloc::format!("natural-gradient rate must lie in (0, 1], got {rho}"));
        }
        if target_eta1.len() != self.dim() || target_eta2.shape() != self.eta2.shape() {
            return dim_err("ng_step: target has the wrong size");
        }
        precision_factor(target_eta2)?;
        if rho == 1.0 {
            return Ok(NaturalGaussian { eta1: target_eta1.to_vec(), eta2: target_eta2.clone() });
        }
        let eta1 = self.eta1.iter().zip(target_eta1).map(|(a, b)| (1.0 - rho) * a + rho * b).collect();
        let mut eta2 = self.eta2.scaled(1.0 - rho);
        eta2.axpy(rho, target_eta2);
        Ok(NaturalGaussian { eta1, eta2 })
    }
}

/// `KL(N(μ, Σ) ‖ N(0, K)) = ½[log|K| − log|Σ| − p + tr(K⁻¹Σ) + μᵀK⁻¹μ]`, with
/// `K⁻¹` supplied by the caller.
pub fn kl_moments(q: &Moments, prior: &PsdFactor, prior_inv: &Mat) -> f64 {
    let p = q.mean.len() as f64;
    let trace: f64 = prior_inv.as_slice().iter().zip(q.cov.as_slice()).map(|(a, b)| a * b).sum();
    let maha = prior_inv.quad_form(&q.mean);
    0.5 * (prior.logdet() - q.logdet_cov - p + trace + maha)
}

/// Convenience for moment-form posteriors: `KL(N(μ, Σ) ‖ N(0, K))`.
pub fn kl_to_prior_moment(mean: &[f64], cov: &Mat, prior: &PsdFactor) -> Result<f64> {
    if cov.rows() != mean.len() || prior.dim() != mean.len() {
        return dim_err("kl_to_prior_moment: dimension mismatch");
    }
    let f = chol_psd(cov)?;
    let q = Moments { mean: mean.to_vec(), cov: cov.clone(), logdet_cov: f.logdet() };
    Ok(kl_moments(&q, prior, &prior.inverse()))
}
