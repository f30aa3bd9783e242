//! Branch pruning by dataset-mean fusion weight.
//!
//! A branch whose mean weight over a calibration split falls below `epsilon`
//! is removed structurally: its decoder, any encoder stages that only fed
//! pruned branches, and its output channel of the weighting head.

use std::path::Path;

use mesorch_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::eval::LabelledImage;
use crate::freq_dct::make_enhanced_inputs;
use crate::mesorch_net::{param_specs, BranchId, BranchSet, Mesorch, Param, ParamSet, Weighting};
use crate::train::{stack_enhanced, train_loop, TrainConfig, TrainOptions, TrainSample, TrainState};
use crate::{Error, Image, Result};

/// Weighting of the pruned model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostPrune {
    /// Keep the weighting head at width K and fine-tune.
    #[default]
    Adaptive,
    /// Drop the weighting head; fuse with the renormalized mean weights.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    /// `None` selects half the uniform weight, `0.5 / K`.
    pub epsilon: Option<f64>,
    pub min_surviving_branches: usize,
    #[serde(default)]
    pub weighting: PostPrune,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            min_surviving_branches: 1,
            weighting: PostPrune::Adaptive,
        }
    }
}

impl PruneConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon: Some(epsilon),
            ..Self::default()
        }
    }

    pub fn resolve_epsilon(&self, k: usize) -> f64 {
        self.epsilon.unwrap_or(0.5 / k as f64)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let e = self.resolve_epsilon(k);
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::Config(format!("epsilon {e} must lie in [0, 1]")));
        }
        if self.min_surviving_branches == 0 || self.min_surviving_branches > k {
            return Err(Error::Config(format!(
                "min_surviving_branches {} must lie in 1..={k}",
                self.min_surviving_branches
            )));
        }
        Ok(())
    }
}

/// Mean fusion weight of each active branch over a calibration set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanWeights {
    pub branches: BranchSet,
    pub values: Vec<f64>,
    /// Weight-map pixels averaged over: images × H/4 × W/4.
    pub pixel_count: usize,
}

/// Images per weighting-module batch.
const CALIBRATION_BATCH: usize = 8;

pub fn mean_scale_weights(model: &Mesorch, calibration: &[Image]) -> Result<MeanWeights> {
    if model.weighting != Weighting::Adaptive {
        return Err(Error::NotApplicable("mean weights need the adaptive weighting module".into()));
    }
    if calibration.is_empty() {
        return Err(Error::InvalidInput("empty calibration set".into()));
    }
    let mut maps = Vec::new();
    for chunk in calibration.chunks(CALIBRATION_BATCH) {
        let inputs = chunk
            .iter()
            .map(|img| make_enhanced_inputs(img, model.config.cutoff))
            .collect::<Result<Vec<_>>>()?;
        let input = stack_enhanced(&inputs.iter().collect::<Vec<_>>());
        maps.push(model.adaptive_weights(&input.weight)?.weights);
    }
    let (values, pixel_count) = average_weights(&maps)?;
    Ok(MeanWeights {
        branches: model.branches.clone(),
        values,
        pixel_count,
    })
}

/// Per-channel mean over every pixel of `[.., K]` weight maps, and the pixel count.
pub fn average_weights(maps: &[Tensor]) -> Result<(Vec<f64>, usize)> {
    let k = maps.first().map(Tensor::last_dim).ok_or_else(|| Error::InvalidInput("no weight maps".into()))?;
    let mut sums = vec![0.0; k];
    let mut pixels = 0;
    for m in maps {
        if m.last_dim() != k {
            return Err(Error::InvalidInput("weight maps disagree on the branch count".into()));
        }
        for px in m.data().chunks_exact(k) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
            pixels += 1;
        }
    }
    Ok((sums.iter().map(|s| s / pixels as f64).collect(), pixels))
}

/// Indices (into `mean`) to prune and to keep, and whether the guard fired.
pub fn select_branches(mean: &[f64], epsilon: f64, min_surviving: usize) -> (Vec<usize>, Vec<usize>, bool) {
    let mut keep: Vec<usize> = (0..mean.len()).filter(|&i| mean[i] >= epsilon).collect();
    let guard = keep.len() < min_surviving;
    if guard {
        let mut order: Vec<usize> = (0..mean.len()).collect();
        // largest weight first, lower index on ties
        order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(a.cmp(&b)));
        keep = order[..min_surviving.min(mean.len())].to_vec();
        keep.sort();
    }
    let pruned = (0..mean.len()).filter(|i| !keep.contains(i)).collect();
    (pruned, keep, guard)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub epsilon: f64,
    /// In the order of `branches_before`.
    pub mean_weights: Vec<f64>,
    pub pixel_count: usize,
    pub branches_before: Vec<String>,
    pub pruned_branches: Vec<String>,
    pub surviving_branches: Vec<String>,
    /// 1-based branch numbers (L1..L4 = 1..4, G1..G4 = 5..8).
    pub pruned_indices: Vec<usize>,
    pub surviving_indices: Vec<usize>,
    pub guard_engaged: bool,
    pub weighting: PostPrune,
    pub params_before: u64,
    pub params_after: u64,
    pub param_delta: u64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub flop_delta: u64,
}

impl PruneReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

/// Remove every branch whose mean weight is below epsilon.
pub fn prune(model: &Mesorch, mean: &MeanWeights, cfg: &PruneConfig) -> Result<(Mesorch, PruneReport)> {
    if mean.branches != model.branches {
        return Err(Error::InvalidInput("mean weights were computed for a different branch set".into()));
    }
    let k = model.branches.len();
    cfg.validate(k)?;
    let eps = cfg.resolve_epsilon(k);
    let (pruned, keep, guard) = select_branches(&mean.values, eps, cfg.min_surviving_branches);
    let ids = model.branches.ids();
    let kept_ids: Vec<BranchId> = keep.iter().map(|&i| ids[i]).collect();
    let branches = BranchSet::new(kept_ids)?;
    let weighting = if pruned.is_empty() {
        model.weighting.clone()
    } else {
        match cfg.weighting {
            PostPrune::Adaptive => Weighting::Adaptive,
            PostPrune::Frozen => {
                let total: f64 = keep.iter().map(|&i| mean.values[i]).sum();
                Weighting::Frozen(keep.iter().map(|&i| mean.values[i] / total).collect())
            }
        }
    };
    let specs = param_specs(&model.config, &branches, &weighting);
    let mut params = ParamSet::default();
    for s in &specs {
        let src = model.params.get(&s.name)?;
        let value = match s.name.as_str() {
            "weight.head.w" | "weight.head.b" => slice_last(&src.value, &keep),
            _ => src.value.clone(),
        };
        params.insert(s.name.clone(), Param { value, kind: src.kind });
    }
    params.check_against(&specs)?;
    let out = Mesorch {
        config: model.config.clone(),
        branches,
        weighting,
        params,
    };
    let (before, after) = (model.cost(), out.cost());
    let names = |v: &[usize]| v.iter().map(|&i| ids[i].to_string()).collect();
    let numbers = |v: &[usize]| v.iter().map(|&i| ids[i].index() + 1).collect();
    let report = PruneReport {
        epsilon: eps,
        mean_weights: mean.values.clone(),
        pixel_count: mean.pixel_count,
        branches_before: ids.iter().map(|b| b.to_string()).collect(),
        pruned_branches: names(&pruned),
        surviving_branches: names(&keep),
        pruned_indices: numbers(&pruned),
        surviving_indices: numbers(&keep),
        guard_engaged: guard,
        weighting: cfg.weighting,
        params_before: before.params,
        params_after: after.params,
        param_delta: before.params - after.params,
        flops_before: before.flops,
        flops_after: after.flops,
        flop_delta: before.flops - after.flops,
    };
    Ok((out, report))
}

/// Keep the listed positions of the last axis.
fn slice_last(t: &Tensor, keep: &[usize]) -> Tensor {
    let last = t.last_dim();
    let mut shape = t.shape().to_vec();
    *shape.last_mut().unwrap() = keep.len();
    let data = t
        .data()
        .chunks_exact(last)
        .flat_map(|row| keep.iter().map(move |&i| row[i]))
        .collect();
    Tensor::from_vec(&shape, data)
}

/// Calibrate on `calibration` and prune in one call.
pub fn prune_with_calibration(model: &Mesorch, calibration: &[LabelledImage], cfg: &PruneConfig) -> Result<(Mesorch, PruneReport)> {
    let images: Vec<Image> = calibration.iter().map(|c| c.image.clone()).collect();
    let mean = mean_scale_weights(model, &images)?;
    prune(model, &mean, cfg)
}

/// The training recipe shortened to `epochs`, warmup capped to fit.
pub fn finetune_config(base: &TrainConfig, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        warmup_epochs: base.warmup_epochs.min(epochs.saturating_sub(1)),
        ..base.clone()
    }
}

/// Fine-tune a pruned model with a fresh optimizer. The weighting head
/// already emits a K-way softmax, so the fused weights are a simplex again.
pub fn renormalize_and_finetune(model: Mesorch, data: &[TrainSample], cfg: &TrainConfig, opts: TrainOptions) -> Result<TrainState> {
    if model.branches.len() == crate::mesorch_net::NUM_BRANCHES {
        return Err(Error::NotApplicable("model has all eight branches; nothing was pruned".into()));
    }
    let mut state = TrainState::new(model);
    train_loop(&mut state, data, cfg, opts)?;
    Ok(state)
}
