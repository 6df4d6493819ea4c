//! Steps-to-result measurement for data-parallel and sparse SGD training.
//!
//! A small dense engine (`nn`, `models`, `optim`, `prune`) trains models under a
//! quasi-random metaparameter search (`quasirand`); `harness` measures the
//! steps needed to reach a goal error per batch size and sparsity, and
//! `analysis` fits `K* ≈ c1/B + c2` and estimates the constants behind it.

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod optim;
pub mod prune;
pub mod quasirand;
pub mod tensor;

pub use data::{Dataset, Split, SynthSpec};
pub use error::{Error, Result};
pub use models::{Architecture, InitScheme, Model, ModelSpec};
pub use optim::{Algorithm, OptimizerConfig, OptimizerState, ScheduleKind, ScheduleSpec};
pub use prune::{prune_at_init, Mask};
pub use quasirand::{Metaparams, Scale, SearchSpace, SobolState};
pub use tensor::Tensor;
