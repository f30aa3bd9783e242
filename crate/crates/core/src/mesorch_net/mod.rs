//! Dual-branch localization network: a convolutional encoder over
//! `{x, x_h}`, an attention encoder over `{x, x_l}`, one decoder per
//! branch-scale, and per-pixel fusion of the branch logits.

mod branch;
mod checkpoint;
mod config;
mod model;
mod params;
mod plan;

pub use branch::{BranchId, BranchSet, Encoder, NUM_BRANCHES};
pub use checkpoint::{config_hash, Checkpoint, OptimizerState};
pub use config::{FusionMode, GlobalEncoderConfig, LocalEncoderConfig, MesorchConfig, Preset, SCALES};
pub use model::{fuse, FinalPrediction, Forward, ForwardVars, Mesorch, PredictionSet, ScalePyramid, WeightMap};
pub use params::{round_f32, Param, ParamSet, INIT_STD};
pub use plan::{layer_plan, param_specs, Component, LayerOp, LayerSpec, ParamKind, ParamSpec, Weighting};
