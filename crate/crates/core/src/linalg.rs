//! Dense row-major matrices and the handful of BLAS/LAPACK-style kernels the
//! models need. Matrix products go through `matrixmultiply`; the Cholesky
//! factorization is blocked so that most of its flops land in the same GEMM.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec: length mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "Mat::from_rows: ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Mat {
        let mut m = self.clone();
        m.scale(alpha);
        m
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "Mat::axpy: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += v;
        }
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest |A_ij − A_ji| relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// Selects the given rows.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "Mat::mat_vec: length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`
    pub fn tr_mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "Mat::tr_mat_vec: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy_slice(xi, self.row(i), &mut out);
            }
        }
        out
    }

    /// `xᵀ A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mat_vec(x))
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn axpy_slice(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Transposition flag for [`gemm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `C = alpha * op(A) op(B) + beta * C`
pub fn gemm(alpha: f64, a: &Mat, ta: Op, b: &Mat, tb: Op, beta: f64, c: &mut Mat) {
    let (m, ka) = match ta {
        Op::N => (a.rows, a.cols),
        Op::T => (a.cols, a.rows),
    };
    let (kb, n) = match tb {
        Op::N => (b.rows, b.cols),
        Op::T => (b.cols, b.rows),
    };
    assert_eq!(ka, kb, "gemm: inner dimension mismatch");
    assert_eq!((c.rows, c.cols), (m, n), "gemm: output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if ka == 0 {
        c.scale(beta);
        return;
    }
    let (rsa, csa) = match ta {
        Op::N => (a.cols as isize, 1),
        Op::T => (1, a.cols as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (b.cols as isize, 1),
        Op::T => (1, b.cols as isize),
    };
    // SAFETY: strides and extents describe the owned buffers exactly, and `c`
    // does not alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            ka,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// `op(A) op(B)`
pub fn matmul(a: &Mat, ta: Op, b: &Mat, tb: Op) -> Mat {
    let m = if ta == Op::N { a.rows } else { a.cols };
    let n = if tb == Op::N { b.cols } else { b.rows };
    let mut c = Mat::zeros(m, n);
    gemm(1.0, a, ta, b, tb, 0.0, &mut c);
    c
}

const CHOL_BLOCK: usize = 64;

/// In-place lower Cholesky factorization of a symmetric matrix; only the
/// lower triangle is read. On success the strict upper triangle is zeroed.
/// Returns `false` if a non-positive pivot is met.
pub fn cholesky_in_place(a: &mut Mat) -> bool {
    let n = a.rows;
    assert_eq!(n, a.cols, "cholesky: matrix must be square");
    let mut k = 0;
    while k < n {
        let b = CHOL_BLOCK.min(n - k);
        // Diagonal block.
        for i in k..k + b {
            for j in k..=i {
                let (ri, rj) = (i * n, j * n);
                let s = a.data[ri + j] - dot(&a.data[ri + k..ri + j], &a.data[rj + k..rj + j]);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    a.data[ri + i] = libm::sqrt(s);
                } else {
                    a.data[ri + j] = s / a.data[rj + j];
                }
            }
        }
        let rest = n - k - b;
        if rest > 0 {
            // Panel: L21 = A21 L11^{-T}, row by row.
            for i in k + b..n {
                let ri = i * n;
                for j in k..k + b {
                    let rj = j * n;
                    let s = a.data[ri + j] - dot(&a.data[ri + k..ri + j], &a.data[rj + k..rj + j]);
                    a.data[ri + j] = s / a.data[rj + j];
                }
            }
            // Trailing update A22 -= L21 L21ᵀ.
            let mut l21 = Mat::zeros(rest, b);
            for i in 0..rest {
                let src = (k + b + i) * n + k;
                l21.row_mut(i).copy_from_slice(&a.data[src..src + b]);
            }
            let mut upd = Mat::zeros(rest, rest);
            gemm(1.0, &l21, Op::N, &l21, Op::T, 0.0, &mut upd);
            for i in 0..rest {
                let dst = (k + b + i) * n + k + b;
                let row = upd.row(i);
                for j in 0..=i {
                    a.data[dst + j] -= row[j];
                }
            }
        }
        k += b;
    }
    for i in 0..n {
        for j in i + 1..n {
            a.data[i * n + j] = 0.0;
        }
    }
    true
}

/// Solves `L X = B` in place for lower-triangular `L`.
pub fn solve_lower_in_place(l: &Mat, b: &mut Mat) {
    let n = l.rows;
    assert_eq!(b.rows, n, "solve_lower: row mismatch");
    let m = b.cols;
    for i in 0..n {
        let (done, rest) = b.data.split_at_mut(i * m);
        let bi = &mut rest[..m];
        let li = l.row(i);
        for (k, &lik) in li[..i].iter().enumerate() {
            if lik != 0.0 {
                axpy_slice(-lik, &done[k * m..(k + 1) * m], bi);
            }
        }
        let inv = 1.0 / li[i];
        bi.iter_mut().for_each(|x| *x *= inv);
    }
}

/// Solves `Lᵀ X = B` in place for lower-triangular `L`.
pub fn solve_upper_t_in_place(l: &Mat, b: &mut Mat) {
    let n = l.rows;
    assert_eq!(b.rows, n, "solve_upper_t: row mismatch");
    let m = b.cols;
    for i in (0..n).rev() {
        let inv = 1.0 / l[(i, i)];
        let (above, xi) = b.data[..(i + 1) * m].split_at_mut(i * m);
        xi.iter_mut().for_each(|x| *x *= inv);
        // Eliminate x_i from the rows above: B_k -= L_ik x_i for k < i.
        for (k, &lik) in l.row(i)[..i].iter().enumerate() {
            if lik != 0.0 {
                axpy_slice(-lik, xi, &mut above[k * m..(k + 1) * m]);
            }
        }
    }
}

/// Inverse of a lower-triangular matrix (also lower triangular).
pub fn lower_inverse(l: &Mat) -> Mat {
    let n = l.rows;
    let mut x = Mat::zeros(n, n);
    for i in 0..n {
        // Row i of L^{-1}: (e_i - sum_{k<i} L_ik X_k) / L_ii; X_k is zero past column k.
        let (done, rest) = x.data.split_at_mut(i * n);
        let xi = &mut rest[..n];
        xi[i] = 1.0;
        let li = l.row(i);
        for (k, &lik) in li[..i].iter().enumerate() {
            if lik != 0.0 {
                axpy_slice(-lik, &done[k * n..k * n + k + 1], &mut xi[..k + 1]);
            }
        }
        let inv = 1.0 / li[i];
        xi[..=i].iter_mut().for_each(|v| *v *= inv);
    }
    x
}
