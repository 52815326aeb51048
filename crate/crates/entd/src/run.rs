//! Training with a JSON-lines progress log, and evaluation of a fitted model.

use std::io::Write;
use std::time::Instant;

use entd_core::metrics::{self, EvalResult};
use entd_core::models::{predict, PredictMode};
use entd_core::trainer::TrainReport;
use entd_core::{math, FactorSet, ModelState, SparseTensor, Trainer, ValueKind};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};

/// Per-epoch log line.
#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub elbo: f64,
    /// Wall time since the start of training.
    pub seconds: f64,
    pub factor_norm: f64,
    pub inducing_norm: f64,
    pub bandwidth: f64,
}

/// Runs [`Trainer::fit`], writing one JSON line per epoch. A numerical abort is
/// recorded as a final `{"event": "abort", ...}` line before the error is returned.
pub fn fit_logged(trainer: &mut Trainer, train: &SparseTensor, log: &mut dyn Write) -> Result<(TrainReport, f64)> {
    let start = Instant::now();
    let mut write_err: Option<std::io::Error> = None;
    let outcome = trainer.fit(train, |r| {
        let line = LogRecord {
            epoch: r.epoch,
            elbo: r.elbo,
            seconds: start.elapsed().as_secs_f64(),
            factor_norm: r.factor_norm,
            inducing_norm: r.inducing_norm,
            bandwidth: r.bandwidth,
        };
        if write_err.is_none() {
            let text = serde_json::to_string(&line).expect("record serializes");
            if let Err(e) = writeln!(log, "{text}") {
                write_err = Some(e);
            }
        }
    });
    let seconds = start.elapsed().as_secs_f64();
    let io_err = |e: std::io::Error| Error::Usage(format!("cannot write training log: {e}"));
    if let Some(e) = write_err {
        return Err(io_err(e));
    }
    match outcome {
        Ok(report) => Ok((report, seconds)),
        Err(e) => {
            let record = json!({
                "event": "abort",
                "epoch": trainer.epochs_done() + 1,
                "seconds": seconds,
                "error": e.to_string(),
            });
            writeln!(log, "{record}").map_err(io_err)?;
            Err(e.into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Auc,
    Nll,
    Rmse,
    Mape,
}

impl Metric {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auc" => Some(Metric::Auc),
            "nll" => Some(Metric::Nll),
            "rmse" => Some(Metric::Rmse),
            "mape" => Some(Metric::Mape),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Nll => "nll",
            Metric::Rmse => "rmse",
            Metric::Mape => "mape",
        }
    }

    /// The metrics reported when none are requested.
    pub fn defaults(kind: ValueKind) -> Vec<Metric> {
        match kind {
            ValueKind::Binary => vec![Metric::Auc, Metric::Nll],
            ValueKind::Count => vec![Metric::Rmse, Metric::Mape, Metric::Nll],
        }
    }

    fn applies_to(self, kind: ValueKind) -> bool {
        match self {
            Metric::Nll => true,
            Metric::Auc => kind == ValueKind::Binary,
            Metric::Rmse | Metric::Mape => kind == ValueKind::Count,
        }
    }
}

/// Scores a model on a tensor. NLL is posterior-averaged in Monte-Carlo mode
/// and evaluated at the posterior mean in plug-in mode.
pub fn evaluate(
    factors: &FactorSet,
    state: &ModelState,
    data: &SparseTensor,
    wanted: &[Metric],
    mode: PredictMode,
) -> Result<Vec<EvalResult>> {
    let kind = data.kind();
    if kind != state.value_kind() {
        return Err(Error::Usage(format!("{kind} data cannot be scored by a model of {} data", state.value_kind())));
    }
    if let Some(m) = wanted.iter().find(|m| !m.applies_to(kind)) {
        return Err(Error::Usage(format!("metric {} is not defined for {kind} data", m.name())));
    }
    if data.shape() != factors.shape().as_slice() {
        return Err(Error::Usage(format!("data shape {:?} differs from model shape {:?}", data.shape(), factors.shape())));
    }
    let batch = data.full_batch();
    let inputs = factors.assemble(&batch.indices)?;
    let p = predict(state, &inputs, mode)?;
    let x = batch.values_f64();
    let n = data.len();
    let mut out = Vec::with_capacity(wanted.len());
    for &m in wanted {
        let value = match m {
            Metric::Auc => metrics::auc(&p.value, &batch.values)?,
            Metric::Rmse => metrics::rmse_rel(&x, &p.value)?,
            Metric::Mape => metrics::mape(&x, &p.value)?,
            Metric::Nll => match (mode, kind) {
                (PredictMode::MonteCarlo { .. }, _) => metrics::nll_mc(&p.draws, &batch.values, p.observation)?,
                (PredictMode::PlugIn, ValueKind::Binary) => metrics::nll_bernoulli(&p.value, &batch.values)?,
                (PredictMode::PlugIn, ValueKind::Count) => {
                    let probs: Vec<f64> = p.mean.iter().map(|&f| math::sigmoid(f)).collect();
                    metrics::nll_negbin(&probs, &batch.values, state.zeta())?
                }
            },
        };
        out.push(EvalResult { name: m.name(), value, n });
    }
    Ok(out)
}

/// `{"auc": 0.91, "nll": 0.35, "n": 1000}`
pub fn results_json(results: &[EvalResult]) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    for r in results {
        obj.insert(r.name.to_string(), json!(r.value));
    }
    if let Some(r) = results.first() {
        obj.insert("n".into(), json!(r.n));
    }
    serde_json::Value::Object(obj)
}
