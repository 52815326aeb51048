//! Nonparametric tensor decomposition with Gaussian-process latent functions.
//!
//! Binary and count tensors are modelled through Pólya-Gamma augmented
//! Bernoulli / negative-binomial likelihoods, trained by stochastic natural
//! gradients on the inducing-point posteriors and Adam on the latent factors
//! and inducing inputs. Three variants are provided:
//!
//! * `gptf-probit`: probit link, moment-form posterior trained by gradients.
//! * `gptf-pg`: one inducing set, closed-form local updates.
//! * `ented`: orthogonally decoupled inducing sets `u` (at `B`) and `v` (at `H`).
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. File formats, checkpoints and the command line live in the `entd`
//! companion crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod kernels;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod models;
pub mod pg;
pub mod tensor;
pub mod trainer;
pub mod vgauss;

pub use error::{Error, Result};
pub use kernels::{PsdFactor, RbfKernel};
pub use linalg::Mat;
pub use models::{FactorSet, Likelihood, ModelKind, ModelState};
pub use tensor::{EntryBatch, SparseTensor, SplitSpec, ValueKind};
pub use trainer::{TrainConfig, Trainer};
pub use vgauss::NaturalGaussian;
