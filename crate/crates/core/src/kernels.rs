//! RBF kernel, Gram matrices with their reverse-mode adjoints, and jittered
//! Cholesky factors for positive (semi)definite solves.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, gemm, Mat, Op};
use crate::math;

/// Squared-exponential kernel `k(x, y) = exp(−‖x − y‖² / (2ℓ²))` with unit amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    bandwidth: f64,
}

impl Default for RbfKernel {
    fn default() -> Self {
        RbfKernel { bandwidth: 1.0 }
    }
}

/// Gradients of a scalar objective with respect to the two arguments of a
/// Gram matrix and the kernel's log-bandwidth.
#[derive(Debug, Clone)]
pub struct GramGrad {
    pub left: Mat,
    pub right: Mat,
    pub log_bandwidth: f64,
}

impl RbfKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(RbfKernel { bandwidth })
    }

    #[inline]
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        math::exp(-0.5 * d2 / (self.bandwidth * self.bandwidth))
    }

    /// `K_ij = k(x_i, y_j)`.
    pub fn gram(&self, x: &Mat, y: &Mat) -> Result<Mat> {
        if x.cols() != y.cols() {
            return dim_err(alloc::format!("gram: {} vs {} input columns", x.cols(), y.cols()));
        }
        let mut k = Mat::zeros(x.rows(), y.rows());
        for i in 0..x.rows() {
            let xi = x.row(i);
            for j in 0..y.rows() {
                k[(i, j)] = self.eval(xi, y.row(j));
            }
        }
        Ok(k)
    }

    /// `gram(x, x)`, exploiting symmetry; the diagonal is exactly one.
    pub fn gram_sym(&self, x: &Mat) -> Mat {
        let n = x.rows();
        let mut k = Mat::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in 0..i {
                let v = self.eval(x.row(i), x.row(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Pulls an adjoint `g = ∂L/∂K` back through `K = gram(x, y)`.
    ///
    /// `k` must be the Gram matrix evaluated at `(x, y)`.
    pub fn gram_backward(&self, x: &Mat, y: &Mat, k: &Mat, g: &Mat) -> GramGrad {
        let inv_l2 = 1.0 / (self.bandwidth * self.bandwidth);
        let (n, m) = k.shape();
        let mut w = Mat::zeros(n, m);
        for ((wv, kv), gv) in w.as_mut_slice().iter_mut().zip(k.as_slice()).zip(g.as_slice()) {
            *wv = kv * gv;
        }
        let row_sum: Vec<f64> = (0..n).map(|i| w.row(i).iter().sum()).collect();
        let mut col_sum = vec![0.0; m];
        for i in 0..n {
            linalg::axpy_slice(1.0, w.row(i), &mut col_sum);
        }
        let wy = linalg::matmul(&w, Op::N, y, Op::N);
        let mut wtx = Mat::zeros(m, x.cols());
        gemm(1.0, &w, Op::T, x, Op::N, 0.0, &mut wtx);

        let mut left = Mat::zeros(n, x.cols());
        let mut sq = 0.0;
        for i in 0..n {
            let xi = x.row(i);
            let wyi = wy.row(i);
            let xx = linalg::dot(xi, xi);
            sq += row_sum[i] * xx - 2.0 * linalg::dot(xi, wyi);
            for (o, (a, b)) in left.row_mut(i).iter_mut().zip(xi.iter().zip(wyi)) {
                *o = -inv_l2 * (row_sum[i] * a - b);
            }
        }
        let mut right = Mat::zeros(m, y.cols());
        for j in 0..m {
            let yj = y.row(j);
            sq += col_sum[j] * linalg::dot(yj, yj);
            for (o, (a, b)) in right.row_mut(j).iter_mut().zip(wtx.row(j).iter().zip(yj)) {
                *o = inv_l2 * (a - col_sum[j] * b);
            }
        }
        GramGrad { left, right, log_bandwidth: sq * inv_l2 }
    }
}

/// Lower Cholesky factor of `K + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdFactor {
    lower: Mat,
    jitter: f64,
}

const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Factors a symmetric PSD matrix, escalating diagonal jitter through
/// `{0, 1e-8, 1e-6, 1e-4} · trace(K)/p` until the factorization succeeds.
pub fn chol_psd(k: &Mat) -> Result<PsdFactor> {
    if k.rows() != k.cols() {
        return dim_err("chol_psd: matrix must be square");
    }
    if k.asymmetry() > 1e-8 {
        return Err(Error::NotSymmetric);
    }
    let p = k.rows();
    if p == 0 {
        return Ok(PsdFactor { lower: Mat::zeros(0, 0), jitter: 0.0 });
    }
    chol_psd_scaled(k, k.trace() / p as f64)
}

/// Same ladder as [`chol_psd`] but with the jitter unit supplied by the caller.
///
/// Useful for Schur complements whose own trace collapses towards zero while the
/// matrix they were derived from still carries a meaningful scale.
pub fn chol_psd_scaled(k: &Mat, scale: f64) -> Result<PsdFactor> {
    if k.rows() != k.cols() {
        return dim_err("chol_psd: matrix must be square");
    }
    if k.rows() == 0 {
        return Ok(PsdFactor { lower: Mat::zeros(0, 0), jitter: 0.0 });
    }
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let mut last = 0.0;
    for &rel in &JITTER_LADDER {
        let jitter = rel * scale;
        let mut a = k.clone();
        a.add_diag(jitter);
        if linalg::cholesky_in_place(&mut a) {
            return Ok(PsdFactor { lower: a, jitter });
        }
        last = jitter;
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

impl PsdFactor {
    /// Wraps an existing lower-triangular factor with positive diagonal.
    pub fn from_lower(lower: Mat, jitter: f64) -> Result<Self> {
        if lower.rows() != lower.cols() {
            return dim_err("PsdFactor::from_lower: factor must be square");
        }
        if lower.diag().iter().any(|&d| !(d > 0.0)) {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        Ok(PsdFactor { lower, jitter })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    #[inline]
    pub fn lower(&self) -> &Mat {
        &self.lower
    }

    #[inline]
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `(K + jitter·I)⁻¹ B`
    pub fn solve(&self, b: &Mat) -> Mat {
        let mut x = b.clone();
        linalg::solve_lower_in_place(&self.lower, &mut x);
        linalg::solve_upper_t_in_place(&self.lower, &mut x);
        x
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        self.solve(&Mat::from_vec(b.len(), 1, b.to_vec())).into_vec()
    }

    /// `L⁻¹ B`
    pub fn half_solve(&self, b: &Mat) -> Mat {
        let mut x = b.clone();
        linalg::solve_lower_in_place(&self.lower, &mut x);
        x
    }

    /// `log |K + jitter·I| = 2 Σ log L_ii`
    pub fn logdet(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|&d| math::log(d)).sum::<f64>()
    }

    /// `(K + jitter·I)⁻¹`, symmetric.
    pub fn inverse(&self) -> Mat {
        let li = linalg::lower_inverse(&self.lower);
        let mut inv = linalg::matmul(&li, Op::T, &li, Op::N);
        inv.symmetrize();
        inv
    }

    /// `L Lᵀ`, i.e. the jittered matrix that was factored.
    pub fn reconstruct(&self) -> Mat {
        linalg::matmul(&self.lower, Op::N, &self.lower, Op::T)
    }
}
