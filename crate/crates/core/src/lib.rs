//! Burst RAW restoration: a multi-scale aligned transformer network, the
//! synthetic burst pipeline that feeds it, and training and evaluation.
//!
//! Frame 0 of every burst is the reference; all others are aligned to it.
//! Bursts are packed RGGB, `(B, 4, h, w)`; predictions are linear RGB at
//! `2 * scale` times the packed resolution.

pub mod align;
pub mod cli;
pub mod dump;
pub mod error;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod params;
pub mod synth;
pub mod train;
pub mod upsampler;

pub use burstkit_tensor as tensor;
pub use error::{Error, Result};
pub use model::{Ablation, GmtNet, ModelConfig};
pub use params::{ParamStore, ParamBuilder};
