//! Mechanisms of a real-time audio-visual segmentation decoder, at desk scale.
//!
//! The crate demonstrates why single-token cross-attention fusion collapses
//! (attention dissipation), how a prompt query generator repairs it, and why
//! replacing early decoder attention stages with convolution is cheaper,
//! backed by an analytic FLOP model and a latency harness.
//!
//! Everything runs on a minimal double-precision tensor substrate with
//! deterministic, seeded synthetic inputs; there is no training and no GPU.
//! See the `examples/` directory for one runnable program per capability.

pub mod attention;
pub mod decoder;
pub mod error;
pub mod flops;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pqg;
pub mod profiler;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
