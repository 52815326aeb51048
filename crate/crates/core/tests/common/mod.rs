//! Dense reference implementations and random tiny instances shared by the
//! integration tests. Everything here is written with plain nested `Vec`s and
//! textbook algorithms, independent of the crate's own linear algebra.

#![allow(dead_code)]

pub mod oracles;

use entd_core::models::FactorSet;
use entd_core::{EntryBatch, Mat, ValueKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Dense = Vec<Vec<f64>>;

pub fn to_dense(m: &Mat) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn from_dense(d: &Dense) -> Mat {
    let cols = d.first().map_or(0, Vec::len);
    Mat::from_fn(d.len(), cols, |i, j| d[i][j])
}

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn mm(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    let mut out = zeros(a.len(), cols);
    for i in 0..a.len() {
        for j in 0..cols {
            let mut s = 0.0;
            for k in 0..inner {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn tr(a: &Dense) -> Dense {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn add(a: &Dense, b: &Dense, beta: f64) -> Dense {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + beta * y).collect()).collect()
}

pub fn mv(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn inv(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a.clone();
    let mut out = zeros(n, n);
    for i in 0..n {
        out[i][i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        out.swap(col, piv);
        let d = m[col][col];
        for j in 0..n {
            m[col][j] /= d;
            out[col][j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                for j in 0..n {
                    m[r][j] -= f * m[col][j];
                    out[r][j] -= f * out[col][j];
                }
            }
        }
    }
    out
}

/// `log |det A|` by LU elimination with partial pivoting.
pub fn logdet(a: &Dense) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut total = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        total += m[col][col].abs().ln();
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for j in col..n {
                m[r][j] -= f * m[col][j];
            }
        }
    }
    total
}

pub fn trace(a: &Dense) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

pub fn rbf(x: &Dense, y: &Dense, ell: f64) -> Dense {
    x.iter()
        .map(|a| {
            y.iter()
                .map(|b| {
                    let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                    (-d2 / (2.0 * ell * ell)).exp()
                })
                .collect()
        })
        .collect()
}

/// `KL(N(μ, Σ) ‖ N(0, K))` straight from the textbook formula.
pub fn gauss_kl(mu: &[f64], sigma: &Dense, k: &Dense) -> f64 {
    let ki = inv(k);
    let p = mu.len() as f64;
    0.5 * (logdet(k) - logdet(sigma) - p + trace(&mm(&ki, sigma)) + dotv(mu, &mv(&ki, mu)))
}

pub fn random_dense(r: usize, c: usize, sd: f64, rng: &mut ChaCha8Rng) -> Dense {
    (0..r).map(|_| (0..c).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

/// A well-conditioned SPD matrix `AAᵀ/p + floor·I`.
pub fn random_spd(p: usize, floor: f64, rng: &mut ChaCha8Rng) -> Dense {
    let a = random_dense(p, p, 1.0, rng);
    let mut s = mm(&a, &tr(&a));
    for (i, row) in s.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= p as f64;
        }
        row[i] += floor;
    }
    s
}

/// A random tiny problem: factors, one batch, inducing inputs and Gaussians.
pub struct Tiny {
    pub factors: FactorSet,
    pub batch: EntryBatch,
    pub b: Dense,
    pub h: Dense,
    pub mu_u: Vec<f64>,
    pub sigma_u: Dense,
    pub mu_v: Vec<f64>,
    pub sigma_v: Dense,
    pub bandwidth: f64,
}

pub struct TinySpec {
    pub n: usize,
    pub p: usize,
    pub pv: usize,
    pub rank: usize,
    pub shape: Vec<usize>,
    pub kind: ValueKind,
    pub scale: f64,
}

impl Default for TinySpec {
    fn default() -> Self {
        TinySpec { n: 8, p: 3, pv: 3, rank: 2, shape: vec![4, 3, 5], kind: ValueKind::Binary, scale: 2.5 }
    }
}

pub fn tiny(spec: &TinySpec, seed: u64) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = FactorSet::new(
        spec.shape.iter().map(|&s| from_dense(&random_dense(s, spec.rank, 0.5, &mut rng))).collect(),
    )
    .unwrap();
    let cells: usize = spec.shape.iter().product();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < spec.n {
        let c = rng.random_range(0..cells);
        if !chosen.contains(&c) {
            chosen.push(c);
        }
    }
    let mut indices = Vec::new();
    for &c in &chosen {
        let mut rem = c;
        let mut idx = vec![0; spec.shape.len()];
        for d in (0..spec.shape.len()).rev() {
            idx[d] = rem % spec.shape[d];
            rem /= spec.shape[d];
        }
        indices.extend(idx);
    }
    let values: Vec<u64> = (0..spec.n)
        .map(|_| match spec.kind {
            ValueKind::Binary => rng.random_range(0..2),
            ValueKind::Count => rng.random_range(0..30),
        })
        .collect();
    let q = spec.shape.len() * spec.rank;
    let batch = EntryBatch { order: spec.shape.len(), indices, values, scale: spec.scale };
    Tiny {
        factors,
        batch,
        b: random_dense(spec.p, q, 0.5, &mut rng),
        h: random_dense(spec.pv, q, 0.5, &mut rng),
        mu_u: (0..spec.p).map(|_| rng.sample(StandardNormal)).collect(),
        sigma_u: random_spd(spec.p, 0.2, &mut rng),
        mu_v: (0..spec.pv).map(|_| rng.sample(StandardNormal)).collect(),
        sigma_v: random_spd(spec.pv, 0.2, &mut rng),
        bandwidth: 1.2,
    }
}

/// Relative error with a small absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite-difference check of one gradient block.
pub fn fd_check(
    name: &str,
    analytic: &Mat,
    mut eval: impl FnMut(usize, usize, f64) -> f64,
    step: f64,
    tol: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..analytic.rows() {
        for j in 0..analytic.cols() {
            let fd = (eval(i, j, step) - eval(i, j, -step)) / (2.0 * step);
            let e = rel_err(analytic[(i, j)], fd);
            assert!(e < tol, "{name}[{i},{j}]: analytic {} vs fd {fd} (rel {e:e})", analytic[(i, j)]);
            worst = worst.max(e);
        }
    }
    worst
}
