//! Checkpoints: an 8-byte little-endian manifest length, a JSON manifest, then
//! the raw little-endian `f64` payload of every array in manifest order.
//!
//! Variational Gaussians are stored in natural parameters so a reload is
//! bit-exact. Optimizer moments are not stored; resumed training restarts Adam.

use std::path::Path;

use entd_core::models::probit::ProbitState;
use entd_core::models::solve::SolveState;
use entd_core::models::svgp::SvgpState;
use entd_core::{FactorSet, Likelihood, Mat, ModelKind, ModelState, NaturalGaussian, RbfKernel, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::ConfigRecord;
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "entd-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub likelihood: String,
    pub zeta: f64,
    pub config: ConfigRecord,
    pub arrays: Vec<ArrayEntry>,
}

/// A model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub factors: FactorSet,
    pub state: ModelState,
}

fn col(v: &[f64]) -> Mat {
    Mat::from_vec(v.len(), 1, v.to_vec())
}

fn arrays_of(factors: &FactorSet, state: &ModelState) -> Vec<(String, Mat)> {
    let mut out: Vec<(String, Mat)> =
        factors.factors().iter().enumerate().map(|(d, z)| (format!("factor.{d}"), z.clone())).collect();
    out.push(("bandwidth".into(), Mat::from_vec(1, 1, vec![state.kernel().bandwidth()])));
    match state {
        ModelState::Probit(s) => {
            out.push(("inducing_u".into(), s.inducing.clone()));
            out.push(("q_u.mean".into(), col(&s.mean)));
            out.push(("q_u.chol".into(), s.chol.clone()));
        }
        ModelState::Pg(s) => {
            out.push(("inducing_u".into(), s.inducing.clone()));
            out.push(("q_u.eta1".into(), col(s.qu.eta1())));
            out.push(("q_u.eta2".into(), s.qu.eta2().clone()));
        }
        ModelState::Ented(s) => {
            out.push(("inducing_u".into(), s.inducing_u.clone()));
            out.push(("inducing_v".into(), s.inducing_v.clone()));
            out.push(("q_u.eta1".into(), col(s.qu.eta1())));
            out.push(("q_u.eta2".into(), s.qu.eta2().clone()));
            out.push(("q_v.eta1".into(), col(s.qv.eta1())));
            out.push(("q_v.eta2".into(), s.qv.eta2().clone()));
        }
    }
    out
}

fn likelihood_name(l: &Likelihood) -> &'static str {
    match l {
        Likelihood::Bernoulli => "bernoulli",
        Likelihood::NegBin { .. } => "negbin",
    }
}

/// Serializes a model to bytes.
pub fn encode(config: &TrainConfig, factors: &FactorSet, state: &ModelState) -> Vec<u8> {
    let arrays = arrays_of(factors, state);
    let likelihood = match state {
        ModelState::Probit(_) => Likelihood::Bernoulli,
        ModelState::Pg(s) => s.likelihood,
        ModelState::Ented(s) => s.likelihood,
    };
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        model: state.kind().as_str().into(),
        likelihood: likelihood_name(&likelihood).into(),
        zeta: likelihood.zeta(),
        config: ConfigRecord::from(config),
        arrays: arrays.iter().map(|(n, m)| ArrayEntry { name: n.clone(), rows: m.rows(), cols: m.cols() }).collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let payload: usize = arrays.iter().map(|(_, m)| m.as_slice().len() * 8).sum();
    let mut out = Vec::with_capacity(8 + json.len() + payload);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in &arrays {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(path: &Path, config: &TrainConfig, factors: &FactorSet, state: &ModelState) -> Result<()> {
    std::fs::write(path, encode(config, factors, state)).map_err(|e| Error::io(path, e))
}

/// Splits bytes into the manifest and the named arrays, checking the layout.
pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<(Manifest, Vec<(String, Mat)>)> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 8 {
        return Err(bad("file too short for a checkpoint header".into()));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[8..];
    if len > body.len() {
        return Err(bad(format!("manifest length {len} exceeds file size")));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[..len]).map_err(|e| bad(format!("unreadable manifest: {e}")))?;
    if manifest.format != FORMAT_NAME {
        return Err(bad(format!("not a checkpoint (format {:?})", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(bad(format!(
            "checkpoint version {} is not supported (expected {FORMAT_VERSION})",
            manifest.version
        )));
    }
    let payload = &body[len..];
    let want: usize = manifest.arrays.iter().map(|a| a.rows * a.cols * 8).sum();
    if payload.len() != want {
        return Err(bad(format!("payload holds {} bytes but the manifest describes {want}", payload.len())));
    }
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    let mut at = 0;
    for a in &manifest.arrays {
        if arrays.iter().any(|(n, _): &(String, Mat)| n == &a.name) {
            return Err(bad(format!("array {:?} listed twice", a.name)));
        }
        let n = a.rows * a.cols;
        let data: Vec<f64> = payload[at..at + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        at += 8 * n;
        arrays.push((a.name.clone(), Mat::from_vec(a.rows, a.cols, data)));
    }
    Ok((manifest, arrays))
}

/// Rebuilds a model from bytes.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let (manifest, arrays) = decode_raw(bytes, path)?;
    let bad = |msg: String| Error::format(path, msg);
    let config = manifest.config.to_config().map_err(&bad)?;
    let model = ModelKind::parse(&manifest.model).ok_or_else(|| bad(format!("unknown model {:?}", manifest.model)))?;
    if model != config.model {
        return Err(bad("model kind disagrees with the stored configuration".into()));
    }
    let likelihood = match manifest.likelihood.as_str() {
        "bernoulli" => Likelihood::Bernoulli,
        "negbin" => Likelihood::NegBin { zeta: manifest.zeta },
        other => return Err(bad(format!("unknown likelihood {other:?}"))),
    };
    let mut by_name: std::collections::HashMap<String, Mat> = arrays.into_iter().collect();
    let mut take = |name: &str| by_name.remove(name).ok_or_else(|| bad(format!("missing array {name:?}")));
    let mut factors = Vec::new();
    for d in 0.. {
        match take(&format!("factor.{d}")) {
            Ok(z) => factors.push(z),
            Err(_) if d > 0 => break,
            Err(e) => return Err(e),
        }
    }
    let factors = FactorSet::new(factors)?;
    let bw = take("bandwidth")?;
    if bw.shape() != (1, 1) {
        return Err(bad("bandwidth must be a single value".into()));
    }
    let kernel = RbfKernel::new(bw.as_slice()[0])?;
    let gaussian = |eta1: Mat, eta2: Mat| -> Result<NaturalGaussian> {
        if eta1.cols() != 1 {
            return Err(bad("natural mean must be a column".into()));
        }
        Ok(NaturalGaussian::new(eta1.into_vec(), eta2)?)
    };
    let state = match model {
        ModelKind::GptfProbit => {
            let inducing = take("inducing_u")?;
            let mean = take("q_u.mean")?;
            let chol = take("q_u.chol")?;
            let p = inducing.rows();
            if mean.shape() != (p, 1) || chol.shape() != (p, p) {
                return Err(bad("probit posterior does not match the inducing inputs".into()));
            }
            ModelState::Probit(ProbitState { kernel, inducing, mean: mean.into_vec(), chol })
        }
        ModelKind::GptfPg => {
            let inducing = take("inducing_u")?;
            let qu = gaussian(take("q_u.eta1")?, take("q_u.eta2")?)?;
            if qu.dim() != inducing.rows() {
                return Err(bad("q(u) does not match the inducing inputs".into()));
            }
            ModelState::Pg(SvgpState { kernel, inducing, qu, likelihood })
        }
        ModelKind::Ented => {
            let inducing_u = take("inducing_u")?;
            let inducing_v = take("inducing_v")?;
            let qu = gaussian(take("q_u.eta1")?, take("q_u.eta2")?)?;
            let qv = gaussian(take("q_v.eta1")?, take("q_v.eta2")?)?;
            if qu.dim() != inducing_u.rows() || qv.dim() != inducing_v.rows() {
                return Err(bad("q(u) or q(v) does not match its inducing inputs".into()));
            }
            ModelState::Ented(SolveState { kernel, inducing_u, inducing_v, qu, qv, likelihood })
        }
    };
    let width = factors.input_dim();
    let inducing_ok = match &state {
        ModelState::Probit(s) => s.inducing.cols() == width,
        ModelState::Pg(s) => s.inducing.cols() == width,
        ModelState::Ented(s) => s.inducing_u.cols() == width && s.inducing_v.cols() == width,
    };
    if !inducing_ok {
        return Err(bad("inducing inputs and factors disagree in width".into()));
    }
    if let Some(name) = by_name.keys().next() {
        return Err(bad(format!("unexpected array {name:?}")));
    }
    Ok(Checkpoint { config, factors, state })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
