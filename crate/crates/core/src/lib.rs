//! Skip-step diffusion training on small point clouds.
//!
//! The crate covers noise schedules ([`schedule`]), a small hand-differentiated
//! network ([`smallnet`]), base and skip-step training ([`difftrain`]), DDIM and
//! PLMS samplers ([`samplers`]), closed-form Gaussian ground truth ([`oracle`])
//! and evaluation utilities ([`evalkit`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod difftrain;
pub mod error;
pub mod evalkit;
pub mod fsio;
pub mod model;
pub mod oracle;
pub mod par;
pub mod predictor;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod smallnet;

pub use error::{Error, Result};
pub use evalkit::SampleBatch;

/// Version tag recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
