//! Deployable lifelong-learning harness.
//!
//! A frozen observation encoder and a few-shot class-incremental task-mapper
//! are pretrained on one suite of synthetic games, then deployed on an unseen
//! suite. During deployment the system learns games one session at a time,
//! recognises games it has already learnt, reloads the matching stored policy,
//! and a metrics engine scores the run on model size, inference time, learn
//! switches, model/buffer growth and normalised reward.
//!
//! Module map:
//!
//! - [`benchmark`]: `DeLL(alpha, beta)` run definitions, game meta files, genre registry.
//! - [`suite`]: synthetic game suite, rollouts, reward normalisation, calibration, dataset packing.
//! - [`encoder`]: frozen 512-d encoders (random projection and linear autoencoder).
//! - [`mapper`]: incremental task-mapper and the fixed-N meta-learning baseline.
//! - [`buffer`]: the N*K support buffer.
//! - [`policy`]: linear policies, cross-entropy-method training, half-precision storage.
//! - [`orchestrator`]: the deployment loop.
//! - [`metrics`]: run metrics and reports.
//! - [`cli`]: the `dell` command-line entry point.

pub mod benchmark;
pub mod binio;
pub mod buffer;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod mapper;
pub mod metrics;
pub mod optim;
pub mod orchestrator;
pub mod policy;
pub mod rng;
pub mod suite;

pub use error::{Error, Result};

/// Side length of a square observation frame.
pub const FRAME_SIDE: usize = 84;
/// Number of pixels in a flattened frame.
pub const FRAME_PIXELS: usize = FRAME_SIDE * FRAME_SIDE;
/// Width of every encoder embedding.
pub const LATENT_DIM: usize = 512;
/// Size of the (fixed) action set shared by every game in the suite.
pub const ACTION_COUNT: usize = 18;
