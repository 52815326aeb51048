//! The `entd` command line: `fit`, `eval`, `predict` and `synth`.
//!
//! Exit codes: 0 on success, 1 for invalid input or usage, 2 when training
//! aborts numerically.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use entd_core::models::{predict, PredictMode};
use entd_core::tensor::{train_test_split, SynthSpec};
use entd_core::{SplitSpec, Trainer, ValueKind};
use serde_json::json;

use crate::checkpoint;
use crate::coo::{self, default_meta_path};
use crate::config::ConfigRecord;
use crate::error::{Error, Result};
use crate::run::{evaluate, fit_logged, results_json, Metric};

#[derive(Debug, Parser)]
#[command(name = "entd", version, about = "Gaussian-process decomposition of sparse binary and count tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Fit(FitArgs),
    /// Score a checkpoint on a tensor and print the metrics as JSON.
    Eval(EvalArgs),
    /// Write predictions for a file of index tuples.
    Predict(PredictArgs),
    /// Generate a synthetic tensor.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LikelihoodArg {
    Bernoulli,
    Negbin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Binary,
    Count,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Tab-separated body (`.gz` accepted).
    #[arg(long)]
    pub data: PathBuf,
    /// JSON meta file; defaults to the data path with `.meta.json` in place of `.tsv[.gz]`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

impl DataArgs {
    fn meta_path(&self) -> PathBuf {
        self.meta.clone().unwrap_or_else(|| default_meta_path(&self.data))
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON file with training options; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gptf-probit, gptf-pg or ented [default: ented]
    #[arg(long)]
    pub model: Option<String>,
    /// CP rank R of each factor matrix [default: 3]
    #[arg(long)]
    pub rank: Option<usize>,
    /// Number of inducing points for u [default: 50]
    #[arg(long)]
    pub inducing_u: Option<usize>,
    /// Number of inducing points for v, ented only [default: 50]
    #[arg(long)]
    pub inducing_v: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam step size [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Natural-gradient rate ρ [default: 0.3]
    #[arg(long)]
    pub ng_rate: Option<f64>,
    /// Negative-binomial number of successes [default: 20].
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long, env = "ENTD_SEED")]
    pub seed: Option<u64>,
    /// RBF length scale [default: 1].
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Train the RBF length scale with Adam
    #[arg(long)]
    pub learn_bandwidth: bool,
    /// Stop when the ELBO changes by at most 1e-6 (relative) over 10 epochs
    #[arg(long)]
    pub early_stop: bool,
    /// Checked against the data kind when given.
    #[arg(long, value_enum)]
    pub likelihood: Option<LikelihoodArg>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the checkpoint path with `.log.jsonl` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictOpts {
    /// Evaluate at the posterior mean instead of averaging over draws.
    #[arg(long)]
    pub plug_in: bool,
    #[arg(long, default_value_t = entd_core::models::predict::DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Seed of the posterior draws.
    #[arg(long, env = "ENTD_SEED", default_value_t = 0)]
    pub seed: u64,
}

impl PredictOpts {
    fn mode(&self) -> PredictMode {
        if self.plug_in {
            PredictMode::PlugIn
        } else {
            PredictMode::MonteCarlo { samples: self.samples, seed: self.seed }
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated subset of auc, nll, rmse, mape.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    #[command(flatten)]
    pub predict: PredictOpts,
    /// Also write the JSON object here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One tab-separated index tuple per line.
    #[arg(long)]
    pub indices: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub predict: PredictOpts,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Comma-separated mode sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shape: Vec<usize>,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 20.0)]
    pub zeta: f64,
    /// Standard deviation of the latent function.
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, env = "ENTD_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output body (the training part when splitting).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Hold out this fraction into `--test-data`.
    #[arg(long, requires = "test_data")]
    pub test_fraction: Option<f64>,
    #[arg(long, requires = "test_fraction")]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub test_meta: Option<PathBuf>,
    /// Equal numbers of ones and zeros in the held-out part (binary only).
    #[arg(long)]
    pub balanced: bool,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Predict(a) => cmd_predict(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn write_out(out: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    writeln!(out, "{value}").map_err(|e| Error::Usage(format!("cannot write to stdout: {e}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Config file, then flags, on top of the library defaults.
pub fn resolve_config(a: &FitArgs) -> Result<entd_core::TrainConfig> {
    let mut rec = match &a.config {
        Some(p) => ConfigRecord::load(p)?,
        None => ConfigRecord::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field.clone() { rec.$field = v; } )* };
    }
    set!(model, rank, inducing_u, inducing_v, batch_size, epochs, lr, ng_rate, zeta, seed, bandwidth);
    rec.learn_bandwidth |= a.learn_bandwidth;
    rec.early_stop |= a.early_stop;
    let config = rec.to_config().map_err(Error::Usage)?;
    config.validate()?;
    Ok(config)
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let config = resolve_config(a)?;
    let train = coo::load_coo(&a.data.meta_path(), &a.data.data)?;
    if let Some(l) = a.likelihood {
        let expected = match l {
            LikelihoodArg::Bernoulli => ValueKind::Binary,
            LikelihoodArg::Negbin => ValueKind::Count,
        };
        if expected != train.kind() {
            return Err(Error::Usage(format!(
                "--likelihood {} needs {expected} data, but the data is {}",
                if expected == ValueKind::Binary { "bernoulli" } else { "negbin" },
                train.kind()
            )));
        }
    }
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.checkpoint.clone().into_os_string();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let mut trainer = Trainer::new(config.clone(), &train)?;
    let mut log = create(&log_path)?;
    let result = fit_logged(&mut trainer, &train, &mut log);
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let (report, seconds) = result?;
    checkpoint::save(&a.checkpoint, &config, trainer.factors(), trainer.state())?;
    write_out(
        out,
        &json!({
            "epochs": report.epochs.len(),
            "elbo": report.epochs.last().map(|r| r.elbo),
            "stopped_early": report.stopped_early,
            "seconds": seconds,
            "checkpoint": a.checkpoint.display().to_string(),
            "log": log_path.display().to_string(),
        }),
    )
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let data = coo::load_coo(&a.data.meta_path(), &a.data.data)?;
    let metrics = if a.metrics.is_empty() {
        Metric::defaults(data.kind())
    } else {
        a.metrics
            .iter()
            .map(|m| Metric::parse(m.trim()).ok_or_else(|| Error::Usage(format!("unknown metric {m:?}"))))
            .collect::<Result<Vec<_>>>()?
    };
    let results = evaluate(&ckpt.factors, &ckpt.state, &data, &metrics, a.predict.mode())?;
    let value = results_json(&results);
    if let Some(p) = &a.output {
        std::fs::write(p, format!("{value}\n")).map_err(|e| Error::io(p, e))?;
    }
    write_out(out, &value)
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let shape = ckpt.factors.shape();
    let indices = coo::load_indices(&a.indices, &shape)?;
    let inputs = ckpt.factors.assemble(&indices)?;
    let p = predict(&ckpt.state, &inputs, a.predict.mode())?;
    let mut w = create(&a.output)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        for (row, v) in indices.chunks_exact(shape.len()).zip(&p.value) {
            for i in row {
                write!(w, "{i}\t")?;
            }
            writeln!(w, "{v}")?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(&a.output, e))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::new(a.shape.clone(), a.rank, a.seed);
    spec.signal = a.signal;
    let syn = match a.kind {
        KindArg::Binary => spec.binary()?,
        KindArg::Count => spec.count(a.zeta)?,
    };
    let meta = a.meta.clone().unwrap_or_else(|| default_meta_path(&a.data));
    match (a.test_fraction, &a.test_data) {
        (Some(fraction), Some(test_data)) => {
            let split = SplitSpec { test_fraction: fraction, seed: a.seed, balanced_negatives: a.balanced };
            let (train, test) = train_test_split(&syn.tensor, &split)?;
            let test_meta = a.test_meta.clone().unwrap_or_else(|| default_meta_path(test_data));
            coo::save_coo(&train, &meta, &a.data)?;
            coo::save_coo(&test, &test_meta, test_data)
        }
        _ if a.balanced => Err(Error::Usage("--balanced needs --test-fraction".into())),
        _ => coo::save_coo(&syn.tensor, &meta, &a.data),
    }
}
