//! Tamper localization with DCT-enhanced inputs and paired CNN/Transformer encoders.
//!
//! The pipeline splits an RGB image into DCT high/low bands, runs a
//! convolutional encoder on `{x, x_h}` and an attention encoder on `{x, x_l}`
//! in parallel, decodes each of the eight scale features into a quarter
//! resolution logit map, and fuses them with per-pixel softmax weights. Scale
//! branches whose dataset-mean weight falls below a threshold can be pruned.

mod error;
pub mod eval;
pub mod freq_dct;
pub mod grid;
pub mod io;
pub mod mesorch_net;
pub mod metrics;
pub mod pruning;
pub mod seed;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
pub use grid::{Grid, Image, Mask};
