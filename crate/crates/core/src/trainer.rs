//! The training loop: per minibatch, closed-form PG tilts, natural-gradient
//! steps on `q(u)` (and `q(v)`), then one Adam step on the factors and
//! inducing inputs with the variational Gaussians held fixed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{arg_err, Error, Result};
use crate::kernels::RbfKernel;
use crate::linalg::Mat;
use crate::models::probit::{probit_elbo_grad, ProbitState};
use crate::models::solve::{solve_elbo_grad, solve_local_update, solve_ng_target_u, solve_ng_target_v, SolveState};
use crate::models::svgp::{pg_elbo_grad, pg_local_update, pg_ng_targets, SvgpState};
use crate::models::{FactorSet, Likelihood, ModelKind, ModelState, ParamGrads};
use crate::tensor::{minibatches, EntryBatch, SparseTensor, ValueKind};

/// Standard deviation of the noise added to inducing inputs copied from data.
const INDUCING_JITTER_SD: f64 = 0.1;
/// Early stopping compares the ELBO with its value this many epochs earlier.
const EARLY_STOP_WINDOW: usize = 10;
const EARLY_STOP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub rank: usize,
    pub inducing_u: usize,
    /// Size of `H`; only used by `ented`.
    pub inducing_v: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Adam step size for factors and inducing inputs.
    pub lr: f64,
    /// Natural-gradient rate `ρ`.
    pub ng_rate: f64,
    /// Negative-binomial `ζ` for count data.
    pub zeta: f64,
    pub seed: u64,
    pub bandwidth: f64,
    pub learn_bandwidth: bool,
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Ented,
            rank: 3,
            inducing_u: 50,
            inducing_v: 50,
            batch_size: 128,
            epochs: 200,
            lr: 1e-3,
            ng_rate: 0.3,
            zeta: 20.0,
            seed: 0,
            bandwidth: 1.0,
            learn_bandwidth: false,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.inducing_u == 0 || self.batch_size == 0 {
            return arg_err("rank, inducing-u and batch size must be positive");
        }
        if self.model == ModelKind::Ented && self.inducing_v == 0 {
            return arg_err("ented needs at least one inducing input for v");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return arg_err(format!("learning rate must be a finite non-negative number, got {}", self.lr));
        }
        if !(self.ng_rate > 0.0 && self.ng_rate <= 1.0) {
            return arg_err(format!("natural-gradient rate must lie in (0, 1], got {}", self.ng_rate));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return arg_err(format!("ζ must be positive, got {}", self.zeta));
        }
        RbfKernel::new(self.bandwidth)?;
        Ok(())
    }

    /// The likelihood implied by the data kind.
    pub fn likelihood(&self, kind: ValueKind) -> Result<Likelihood> {
        match (self.model, kind) {
            (ModelKind::GptfProbit, ValueKind::Count) => arg_err("gptf-probit only models binary data"),
            (_, ValueKind::Binary) => Ok(Likelihood::Bernoulli),
            (_, ValueKind::Count) => Ok(Likelihood::NegBin { zeta: self.zeta }),
        }
    }
}

/// Summary of one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-minibatch ELBO estimates.
    pub elbo: f64,
    pub factor_norm: f64,
    pub inducing_norm: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Draws `Z ~ N(0, 1)`, copies `B` (and `H`) from randomly chosen training
/// entries plus small noise, and sets every variational Gaussian to its prior.
pub fn init_state(config: &TrainConfig, tensor: &SparseTensor) -> Result<(FactorSet, ModelState)> {
    config.validate()?;
    let likelihood = config.likelihood(tensor.kind())?;
    let n = tensor.len();
    let pv = if config.model == ModelKind::Ented { config.inducing_v } else { 0 };
    if config.inducing_u > n || pv > n {
        return arg_err(format!(
            "cannot place {} + {} inducing inputs on {} training entries",
            config.inducing_u, pv, n
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let factors = FactorSet::sample(tensor.shape(), config.rank, &mut rng)?;
    let place = |count: usize, rng: &mut ChaCha8Rng| -> Result<Mat> {
        let picks = sample(rng, n, count).into_vec();
        let mut idx = Vec::with_capacity(count * tensor.order());
        for &p in &picks {
            idx.extend_from_slice(tensor.index(p));
        }
        let mut m = factors.assemble(&idx)?;
        for v in m.as_mut_slice() {
            *v += INDUCING_JITTER_SD * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(m)
    };
    let b = place(config.inducing_u, &mut rng)?;
    let kernel = RbfKernel::new(config.bandwidth)?;
    let state = match config.model {
        ModelKind::GptfProbit => ModelState::Probit(ProbitState::at_prior(kernel, b)?),
        ModelKind::GptfPg => ModelState::Pg(SvgpState::at_prior(kernel, b, likelihood)?),
        ModelKind::Ented => {
            let h = place(pv, &mut rng)?;
            ModelState::Ented(SolveState::at_prior(kernel, b, h, likelihood)?)
        }
    };
    Ok((factors, state))
}

/// Adam ascent over a fixed list of parameter blocks.
#[derive(Debug, Clone)]
struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Moves every block uphill along its gradient.
    fn ascend(&mut self, lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] += lr * (m[i] / c1) / (libm::sqrt(v[i] / c2) + self.eps);
            }
        }
    }
}

fn block_sizes(factors: &FactorSet, state: &ModelState) -> Vec<usize> {
    let mut sizes: Vec<usize> = factors.factors().iter().map(|z| z.as_slice().len()).collect();
    match state {
        ModelState::Probit(s) => {
            sizes.extend([s.inducing.as_slice().len(), s.mean.len(), s.chol.as_slice().len()]);
        }
        ModelState::Pg(s) => sizes.push(s.inducing.as_slice().len()),
        ModelState::Ented(s) => sizes.extend([s.inducing_u.as_slice().len(), s.inducing_v.as_slice().len()]),
    }
    sizes.push(1);
    sizes
}

fn frob(ms: &[&Mat]) -> f64 {
    libm::sqrt(ms.iter().map(|m| m.as_slice().iter().map(|v| v * v).sum::<f64>()).sum())
}

/// Owns the model during training; one logical writer.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    factors: FactorSet,
    state: ModelState,
    adam: Adam,
    epoch: usize,
    history: Vec<f64>,
}

impl Trainer {
    /// Validates the configuration and initializes the model from the training data.
    pub fn new(config: TrainConfig, train: &SparseTensor) -> Result<Self> {
        let (factors, state) = init_state(&config, train)?;
        Ok(Trainer::from_parts(config, factors, state))
    }

    /// Wraps an existing model, e.g. one restored from a checkpoint.
    pub fn from_parts(config: TrainConfig, factors: FactorSet, state: ModelState) -> Self {
        let adam = Adam::new(&block_sizes(&factors, &state));
        Trainer { config, factors, state, adam, epoch: 0, history: Vec::new() }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn factors(&self) -> &FactorSet {
        &self.factors
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_parts(self) -> (FactorSet, ModelState) {
        (self.factors, self.state)
    }

    /// Completed epochs.
    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One update on a minibatch; returns the minibatch ELBO estimate.
    pub fn step(&mut self, batch: &EntryBatch) -> Result<f64> {
        let rho = self.config.ng_rate;
        let (value, grads) = match &mut self.state {
            ModelState::Pg(s) => {
                let g = s.geometry(&self.factors, &batch.indices)?;
                let c = pg_local_update(&g, &s.qu.to_moment()?);
                let sites = s.likelihood.sites(batch, &c)?;
                let (e1, e2) = pg_ng_targets(&g, batch, &sites)?;
                s.qu = s.qu.ng_step(&e1, &e2, rho)?;
                pg_elbo_grad(s, &self.factors, batch, &g, &s.qu.to_moment()?, &sites)?
            }
            ModelState::Ented(s) => {
                let g = s.geometry(&self.factors, &batch.indices)?;
                let qv = s.qv.to_moment()?;
                let c = solve_local_update(&g, &s.qu.to_moment()?, &qv);
                let sites = s.likelihood.sites(batch, &c)?;
                let (e1, e2) = solve_ng_target_u(&g, batch, &sites, &qv)?;
                s.qu = s.qu.ng_step(&e1, &e2, rho)?;
                let qu = s.qu.to_moment()?;
                let (e1, e2) = solve_ng_target_v(&g, batch, &sites, &qu)?;
                s.qv = s.qv.ng_step(&e1, &e2, rho)?;
                solve_elbo_grad(s, &self.factors, batch, &g, &qu, &s.qv.to_moment()?, &sites)?
            }
            ModelState::Probit(s) => probit_elbo_grad(s, &self.factors, batch)?,
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "ELBO is {value} at epoch {} (batch of {}, scale {})",
                self.epoch + 1,
                batch.len(),
                batch.scale
            )));
        }
        self.apply(&grads)?;
        Ok(value)
    }

    fn apply(&mut self, grads: &ParamGrads) -> Result<()> {
        let lr = self.config.lr;
        if lr == 0.0 {
            return Ok(());
        }
        let log_bw_grad = [if self.config.learn_bandwidth { grads.log_bandwidth } else { 0.0 }];
        let mut log_bw = [libm::log(self.state.kernel().bandwidth())];
        let mut params: Vec<&mut [f64]> = self.factors.factors_mut().iter_mut().map(|z| z.as_mut_slice()).collect();
        let mut g: Vec<&[f64]> = grads.factors.iter().map(Mat::as_slice).collect();
        let kernel = match &mut self.state {
            ModelState::Probit(s) => {
                params.extend([s.inducing.as_mut_slice(), s.mean.as_mut_slice(), s.chol.as_mut_slice()]);
                g.extend([grads.inducing_u.as_slice(), grads.mean.as_slice(), grads.chol.as_slice()]);
                &mut s.kernel
            }
            ModelState::Pg(s) => {
                params.push(s.inducing.as_mut_slice());
                g.push(grads.inducing_u.as_slice());
                &mut s.kernel
            }
            ModelState::Ented(s) => {
                params.extend([s.inducing_u.as_mut_slice(), s.inducing_v.as_mut_slice()]);
                g.extend([grads.inducing_u.as_slice(), grads.inducing_v.as_slice()]);
                &mut s.kernel
            }
        };
        params.push(&mut log_bw);
        g.push(&log_bw_grad);
        self.adam.ascend(lr, &mut params, &g);
        if self.config.learn_bandwidth {
            *kernel = RbfKernel::new(libm::exp(log_bw[0]))?;
        }
        Ok(())
    }

    /// One shuffled pass over the training data.
    pub fn epoch(&mut self, train: &SparseTensor) -> Result<EpochRecord> {
        let seed = epoch_seed(self.config.seed, self.epoch);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in minibatches(train, self.config.batch_size, seed) {
            total += self.step(&batch)?;
            batches += 1;
        }
        self.epoch += 1;
        let elbo = total / batches.max(1) as f64;
        self.history.push(elbo);
        let inducing_norm = match &self.state {
            ModelState::Probit(s) => frob(&[&s.inducing]),
            ModelState::Pg(s) => frob(&[&s.inducing]),
            ModelState::Ented(s) => frob(&[&s.inducing_u, &s.inducing_v]),
        };
        Ok(EpochRecord {
            epoch: self.epoch,
            elbo,
            factor_norm: frob(&self.factors.factors().iter().collect::<Vec<_>>()),
            inducing_norm,
            bandwidth: self.state.kernel().bandwidth(),
        })
    }

    /// Whether the relative ELBO change over the last window fell below tolerance.
    pub fn converged(&self) -> bool {
        let h = &self.history;
        if h.len() <= EARLY_STOP_WINDOW {
            return false;
        }
        let (now, then) = (h[h.len() - 1], h[h.len() - 1 - EARLY_STOP_WINDOW]);
        (now - then).abs() <= EARLY_STOP_TOL * then.abs()
    }

    /// Runs the configured number of epochs, calling `on_epoch` after each.
    pub fn fit(&mut self, train: &SparseTensor, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainReport> {
        if train.kind() != self.state.value_kind() {
            return arg_err(format!(
                "{} data cannot be fitted with a {} likelihood",
                train.kind(),
                self.state.value_kind()
            ));
        }
        let mut report = TrainReport::default();
        while self.epoch < self.config.epochs {
            let record = self.epoch(train)?;
            on_epoch(&record);
            report.epochs.push(record);
            if self.config.early_stop && self.converged() {
                report.stopped_early = true;
                break;
            }
        }
        Ok(report)
    }
}

/// Per-epoch shuffle seed derived from the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Initializes and trains in one call.
pub fn fit(config: &TrainConfig, train: &SparseTensor) -> Result<(TrainReport, FactorSet, ModelState)> {
    let mut trainer = Trainer::new(config.clone(), train)?;
    let report = trainer.fit(train, |_| {})?;
    let (factors, state) = trainer.into_parts();
    Ok((report, factors, state))
}
