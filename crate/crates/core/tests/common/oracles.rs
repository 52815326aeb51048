//! Straight-from-the-formula dense evaluations of every bound, target and
//! geometry quantity, plus the shared finite-difference and coordinate-ascent
//! drivers.

use super::*;
use entd_core::kernels::chol_psd;
use entd_core::models::probit::ProbitState;
use entd_core::models::solve::{solve_elbo, solve_local_update, solve_ng_target_u, solve_ng_target_v, SolveState};
use entd_core::models::svgp::{pg_elbo, pg_local_update, pg_ng_targets, SvgpState};
use entd_core::models::{FactorSet, Likelihood, ParamGrads};
use entd_core::pg::PgSite;
use entd_core::{EntryBatch, Mat, NaturalGaussian, RbfKernel, ValueKind};

pub const KINDS: [ValueKind; 2] = [ValueKind::Binary, ValueKind::Count];

pub fn likelihood(kind: ValueKind) -> Likelihood {
    match kind {
        ValueKind::Binary => Likelihood::Bernoulli,
        ValueKind::Count => Likelihood::NegBin { zeta: 20.0 },
    }
}

pub fn kernel(t: &Tiny) -> RbfKernel {
    RbfKernel::new(t.bandwidth).unwrap()
}

pub fn pg_state(t: &Tiny, lik: Likelihood) -> SvgpState {
    SvgpState {
        kernel: kernel(t),
        inducing: from_dense(&t.b),
        qu: NaturalGaussian::from_moment(&t.mu_u, &from_dense(&t.sigma_u)).unwrap(),
        likelihood: lik,
    }
}

pub fn solve_state(t: &Tiny, lik: Likelihood) -> SolveState {
    SolveState {
        kernel: kernel(t),
        inducing_u: from_dense(&t.b),
        inducing_v: Mat::from_fn(t.h.len(), t.b[0].len(), |i, j| t.h[i][j]),
        qu: NaturalGaussian::from_moment(&t.mu_u, &from_dense(&t.sigma_u)).unwrap(),
        qv: NaturalGaussian::from_moment(&t.mu_v, &from_dense(&t.sigma_v)).unwrap(),
        likelihood: lik,
    }
}

pub fn probit_state(t: &Tiny) -> ProbitState {
    ProbitState {
        kernel: kernel(t),
        inducing: from_dense(&t.b),
        mean: t.mu_u.clone(),
        chol: chol_psd(&from_dense(&t.sigma_u)).unwrap().lower().clone(),
    }
}

/// Inputs assembled by hand from the dense factors.
pub fn dense_inputs(factors: &FactorSet, batch: &EntryBatch) -> Dense {
    let zs: Vec<Dense> = factors.factors().iter().map(to_dense).collect();
    (0..batch.len())
        .map(|n| batch.index(n).iter().zip(&zs).flat_map(|(&i, z)| z[i].clone()).collect())
        .collect()
}

pub fn dense_log_prior(factors: &FactorSet) -> f64 {
    -0.5 * factors.factors().iter().flat_map(|z| z.as_slice().iter().map(|v| v * v)).sum::<f64>()
}

pub fn b_chi(x: u64, lik: Likelihood) -> (f64, f64) {
    match lik {
        Likelihood::Bernoulli => (1.0, x as f64 - 0.5),
        Likelihood::NegBin { zeta } => (x as f64 + zeta, 0.5 * (x as f64 - zeta)),
    }
}

pub fn theta_of(b: f64, c: f64) -> f64 {
    b / (2.0 * c) * (0.5 * c).tanh()
}

/// The augmented per-entry term exactly as written:
/// ½{2χm − θ(var + m²) + c²θ − 2b log cosh(c/2)}.
pub fn augmented_term(b: f64, chi: f64, c: f64, m: f64, var: f64) -> f64 {
    let th = theta_of(b, c);
    0.5 * (2.0 * chi * m - th * (var + m * m) + c * c * th - 2.0 * b * (0.5 * c).cosh().ln())
}

pub struct DenseSvgp {
    pub kappa: Dense,
    pub k_tilde: Vec<f64>,
    pub kbb: Dense,
}

pub fn dense_svgp(t: &Tiny, inputs: &Dense) -> DenseSvgp {
    let kbb = rbf(&t.b, &t.b, t.bandwidth);
    let kmb = rbf(inputs, &t.b, t.bandwidth);
    let kappa = mm(&kmb, &inv(&kbb));
    let k_tilde = (0..inputs.len()).map(|n| 1.0 - dotv(&kappa[n], &kmb[n])).collect();
    DenseSvgp { kappa, k_tilde, kbb }
}

pub fn oracle_pg(t: &Tiny, lik: Likelihood, c: &[f64]) -> (f64, Vec<f64>, Dense, Vec<f64>) {
    let inputs = dense_inputs(&t.factors, &t.batch);
    let g = dense_svgp(t, &inputs);
    let mut data = 0.0;
    let mut eta1 = vec![0.0; t.b.len()];
    let mut prec = inv(&g.kbb);
    let mut c_opt = Vec::new();
    for n in 0..inputs.len() {
        let (b, chi) = b_chi(t.batch.values[n], lik);
        let k = &g.kappa[n];
        let m = dotv(k, &t.mu_u);
        let s = dotv(k, &mv(&t.sigma_u, k));
        c_opt.push((g.k_tilde[n] + s + m * m).sqrt());
        data += augmented_term(b, chi, c[n], m, g.k_tilde[n] + s);
        let th = theta_of(b, c[n]);
        for i in 0..k.len() {
            eta1[i] += t.batch.scale * chi * k[i];
            for j in 0..k.len() {
                prec[i][j] += t.batch.scale * th * k[i] * k[j];
            }
        }
    }
    let elbo = t.batch.scale * data - gauss_kl(&t.mu_u, &t.sigma_u, &g.kbb) + dense_log_prior(&t.factors);
    let eta2 = prec.iter().map(|r| r.iter().map(|v| -0.5 * v).collect()).collect();
    (elbo, eta1, eta2, c_opt)
}

pub struct DenseSolve {
    pub cmh: Dense,
    pub chh: Dense,
    pub mu_perp: Vec<f64>,
    pub var_perp: Vec<f64>,
    pub kappa_v: Dense,
}

pub fn dense_solve(t: &Tiny, inputs: &Dense, mu_v: &[f64], sigma_v: &Dense) -> (DenseSvgp, DenseSolve) {
    let base = dense_svgp(t, inputs);
    let ell = t.bandwidth;
    let kbb_inv = inv(&base.kbb);
    let kmb = rbf(inputs, &t.b, ell);
    let kbh = rbf(&t.b, &t.h, ell);
    let cmh = add(&rbf(inputs, &t.h, ell), &mm(&mm(&kmb, &kbb_inv), &kbh), -1.0);
    let chh = add(&rbf(&t.h, &t.h, ell), &mm(&mm(&tr(&kbh), &kbb_inv), &kbh), -1.0);
    let chh_inv = inv(&chh);
    let kappa_v = mm(&cmh, &chh_inv);
    let mu_perp = mv(&kappa_v, mu_v);
    let middle = mm(&mm(&kappa_v, &add(sigma_v, &chh, -1.0)), &tr(&kappa_v));
    let var_perp = (0..inputs.len()).map(|n| base.k_tilde[n] + middle[n][n]).collect();
    (base, DenseSolve { cmh, chh, mu_perp, var_perp, kappa_v })
}

pub fn oracle_solve(t: &Tiny, lik: Likelihood, c: &[f64]) -> f64 {
    let inputs = dense_inputs(&t.factors, &t.batch);
    let (base, s) = dense_solve(t, &inputs, &t.mu_v, &t.sigma_v);
    let mut data = 0.0;
    for n in 0..inputs.len() {
        let (b, chi) = b_chi(t.batch.values[n], lik);
        let th = theta_of(b, c[n]);
        let k = &base.kappa[n];
        let ku_mu = dotv(k, &t.mu_u);
        let ku_s = dotv(k, &mv(&t.sigma_u, k));
        let (mp, vp) = (s.mu_perp[n], s.var_perp[n]);
        data += 0.5
            * (2.0 * chi * mp + 2.0 * chi * ku_mu
                - th * (mp * mp + vp)
                - 2.0 * th * mp * ku_mu
                - th * (ku_s + ku_mu * ku_mu)
                + c[n] * c[n] * th
                - 2.0 * b * (0.5 * c[n]).cosh().ln());
    }
    let khh = rbf(&t.h, &t.h, t.bandwidth);
    t.batch.scale * data - gauss_kl(&t.mu_u, &t.sigma_u, &base.kbb) - gauss_kl(&t.mu_v, &t.sigma_v, &khh)
        + dense_log_prior(&t.factors)
}

pub fn oracle_solve_targets(t: &Tiny, lik: Likelihood, c: &[f64]) -> [(Vec<f64>, Dense); 2] {
    let inputs = dense_inputs(&t.factors, &t.batch);
    let (base, s) = dense_solve(t, &inputs, &t.mu_v, &t.sigma_v);
    let khh = rbf(&t.h, &t.h, t.bandwidth);
    let mut out = [(vec![0.0; t.b.len()], inv(&base.kbb)), (vec![0.0; t.h.len()], inv(&khh))];
    for n in 0..inputs.len() {
        let (b, chi) = b_chi(t.batch.values[n], lik);
        let th = theta_of(b, c[n]);
        let ku = &base.kappa[n];
        let kv = &s.kappa_v[n];
        let cross_u = dotv(kv, &t.mu_v);
        let cross_v = dotv(ku, &t.mu_u);
        let (first, second) = out.split_at_mut(1);
        for (target, kappa, cross) in [(&mut first[0], ku, cross_u), (&mut second[0], kv, cross_v)] {
            for i in 0..kappa.len() {
                target.0[i] += t.batch.scale * (chi - th * cross) * kappa[i];
                for j in 0..kappa.len() {
                    target.1[i][j] += t.batch.scale * th * kappa[i] * kappa[j];
                }
            }
        }
    }
    for target in out.iter_mut() {
        for row in target.1.iter_mut() {
            row.iter_mut().for_each(|v| *v *= -0.5);
        }
    }
    out
}

pub fn oracle_probit(t: &Tiny) -> f64 {
    let inputs = dense_inputs(&t.factors, &t.batch);
    let g = dense_svgp(t, &inputs);
    let phi = |z: f64| 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let mut data = 0.0;
    for n in 0..inputs.len() {
        let k = &g.kappa[n];
        let z = dotv(k, &t.mu_u) / std::f64::consts::SQRT_2;
        let x = t.batch.values[n] as f64;
        data += x * phi(z).ln() + (1.0 - x) * (1.0 - phi(z)).ln()
            - 0.5 * g.k_tilde[n]
            - 0.5 * dotv(k, &mv(&t.sigma_u, k));
    }
    t.batch.scale * data - gauss_kl(&t.mu_u, &t.sigma_u, &g.kbb) + dense_log_prior(&t.factors)
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12)).fold(0.0, f64::max)
}

pub fn max_rel_mat(a: &Mat, b: &Dense) -> f64 {
    max_rel(a.as_slice(), &b.concat())
}

pub fn sites_at_optimum(lik: Likelihood, batch: &EntryBatch, c: &[f64]) -> Vec<PgSite> {
    lik.sites(batch, c).unwrap()
}

/// FD check over every factor matrix, `B`, `H` and the log bandwidth. Returns
/// the worst relative error.
pub fn check_param_grads(
    t: &Tiny,
    grads: &ParamGrads,
    elbo: &dyn Fn(&FactorSet, &Mat, &Mat, f64) -> f64,
) -> f64 {
    let (h, tol) = (1e-5, 1e-4);
    let mut worst: f64 = 0.0;
    let b = from_dense(&t.b);
    let hv = if t.h.is_empty() { Mat::zeros(0, b.cols()) } else { from_dense(&t.h) };
    for d in 0..t.factors.order() {
        worst = worst.max(fd_check(
            "Z",
            &grads.factors[d],
            |i, j, s| {
                let mut f = t.factors.clone();
                f.factors_mut()[d][(i, j)] += s;
                elbo(&f, &b, &hv, t.bandwidth)
            },
            h,
            tol,
        ));
    }
    worst = worst.max(fd_check(
        "B",
        &grads.inducing_u,
        |i, j, s| {
            let mut bb = b.clone();
            bb[(i, j)] += s;
            elbo(&t.factors, &bb, &hv, t.bandwidth)
        },
        h,
        tol,
    ));
    worst = worst.max(fd_check(
        "H",
        &grads.inducing_v,
        |i, j, s| {
            let mut hh = hv.clone();
            hh[(i, j)] += s;
            elbo(&t.factors, &b, &hh, t.bandwidth)
        },
        h,
        tol,
    ));
    worst = worst.max(fd_check(
        "log ℓ",
        &Mat::from_vec(1, 1, vec![grads.log_bandwidth]),
        |_, _, s| elbo(&t.factors, &b, &hv, t.bandwidth * s.exp()),
        h,
        tol,
    ));
    worst
}

/// Full-batch coordinate ascent over (c, q(u)[, q(v)]) with ρ = 1.
pub fn ascent_trace(t: &Tiny, lik: Likelihood, decoupled: bool, sweeps: usize) -> Vec<f64> {
    let mut batch = t.batch.clone();
    batch.scale = 1.0;
    let mut out = Vec::new();
    if decoupled {
        let mut s = solve_state(t, lik);
        let g = s.geometry(&t.factors, &batch.indices).unwrap();
        for _ in 0..sweeps {
            let c = solve_local_update(&g, &s.qu.to_moment().unwrap(), &s.qv.to_moment().unwrap());
            let sites = lik.sites(&batch, &c).unwrap();
            let (e1, e2) = solve_ng_target_u(&g, &batch, &sites, &s.qv.to_moment().unwrap()).unwrap();
            s.qu = s.qu.ng_step(&e1, &e2, 1.0).unwrap();
            let (e1, e2) = solve_ng_target_v(&g, &batch, &sites, &s.qu.to_moment().unwrap()).unwrap();
            s.qv = s.qv.ng_step(&e1, &e2, 1.0).unwrap();
            let c = solve_local_update(&g, &s.qu.to_moment().unwrap(), &s.qv.to_moment().unwrap());
            out.push(solve_elbo(&s, &t.factors, &batch, &lik.sites(&batch, &c).unwrap()).unwrap());
        }
    } else {
        let mut s = pg_state(t, lik);
        let g = s.geometry(&t.factors, &batch.indices).unwrap();
        for _ in 0..sweeps {
            let c = pg_local_update(&g, &s.qu.to_moment().unwrap());
            let sites = lik.sites(&batch, &c).unwrap();
            let (e1, e2) = pg_ng_targets(&g, &batch, &sites).unwrap();
            s.qu = s.qu.ng_step(&e1, &e2, 1.0).unwrap();
            let c = pg_local_update(&g, &s.qu.to_moment().unwrap());
            out.push(pg_elbo(&s, &t.factors, &batch, &lik.sites(&batch, &c).unwrap()).unwrap());
        }
    }
    out
}
