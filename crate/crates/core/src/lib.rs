//! Task-similarity aware kernel meta-learning for few-shot regression, with
//! MAML-family baselines and a reproducible experiment harness.
//!
//! The crate is organized around a small set of pieces:
//!
//! - [`predictors`]: linear and MLP predictor families with analytic
//!   gradients and Hessian-vector products;
//! - [`kernels`]: task descriptors, Gaussian/cosine kernels, descriptor
//!   banks;
//! - [`metalearners`]: the four adaptation functions (MAML, Meta-SGD,
//!   Generalized Meta-SGD, kernel meta-learning) and their full-batch
//!   meta-training loops;
//! - [`taskgen`]: seeded synthetic task sources (bimodal linear regression,
//!   sinusoids with linear outlier tasks);
//! - [`eval`]: NMSE and the Monte-Carlo comparison harness;
//! - [`config`] / [`checkpoint`]: experiment configs, presets, and lossless
//!   text checkpoints.
//!
//! Everything is driven by a master seed; identical configs produce
//! bit-identical results regardless of worker count.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod metalearners;
pub mod optim;
pub mod params;
pub mod predictors;
pub mod seeding;
pub mod taskgen;

pub use config::{AlgorithmConfig, AlgorithmKind, ExperimentConfig};
pub use error::{Error, Result};
pub use eval::{nmse, run_experiment, EvalReport};
pub use kernels::{DescriptorBank, KernelSpec, TaskDescriptor};
pub use metalearners::{GradientMode, MetaState, Trainer};
pub use params::{Dataset, LayerLayout, ParamVector};
pub use predictors::{Model, ModelKind};
pub use taskgen::{Task, TaskKind, TaskMeta, TaskSourceSpec};
