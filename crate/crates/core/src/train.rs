//! Mean-reduced BCE training with warmup + cosine learning rate, AdamW and
//! gradient accumulation. Runs are a pure function of the seed: every epoch
//! shuffles with an RNG derived from `(seed, epoch)`, so a resumed run replays
//! the same batches as an uninterrupted one.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use mesorch_tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::freq_dct::{make_enhanced_inputs, EnhancedInput};
use crate::mesorch_net::{round_f32, Checkpoint, Mesorch, OptimizerState, ParamKind};
use crate::seed::derive_seed;
use crate::{Error, Image, Mask, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accumulation_steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    /// Must match the model; `None` accepts the model's size.
    #[serde(default)]
    pub input_size: Option<(usize, usize)>,
    /// Execution is always single-stream; the flag is recorded for provenance.
    pub deterministic: bool,
}

impl TrainConfig {
    /// Full-scale recipe (150 epochs, batch 12).
    pub fn paper() -> Self {
        Self {
            epochs: 150,
            batch_size: 12,
            accumulation_steps: 2,
            lr_max: 1e-4,
            lr_min: 5e-7,
            warmup_epochs: 2,
            weight_decay: 0.05,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            input_size: None,
            deterministic: true,
        }
    }

    /// CPU recipe for 64×64 synthetic data.
    pub fn toy() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr_max: TOY_LR_MAX,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.accumulation_steps == 0 {
            return bad("batch_size and accumulation_steps must be at least 1".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return bad(format!("need 0 <= lr_min < lr_max, got {} / {}", self.lr_min, self.lr_max));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return bad(format!("betas {:?} must lie in [0, 1)", self.betas));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay nonnegative".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size).div_ceil(self.accumulation_steps)
    }
}

/// Peak learning rate of the toy preset.
pub const TOY_LR_MAX: f64 = 4e-3;

/// Learning-rate schedule over optimizer updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(cfg: &TrainConfig, samples: usize) -> Self {
        let per = cfg.steps_per_epoch(samples);
        let total = per * cfg.epochs;
        Self {
            lr_max: cfg.lr_max,
            lr_min: cfg.lr_min,
            warmup_steps: (per * cfg.warmup_epochs).min(total),
            total_steps: total,
        }
    }

    /// Linear ramp to `lr_max` at the end of warmup, cosine down to `lr_min`
    /// at `total_steps`. Update `t` (0-based) uses `lr_at(t + 1)`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.lr_max * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 || step == self.warmup_steps {
            return self.lr_max;
        }
        if step == self.total_steps {
            return self.lr_min;
        }
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * progress).cos())
    }
}

pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, cfg: &TrainConfig) -> f64 {
    Schedule {
        lr_max: cfg.lr_max,
        lr_min: cfg.lr_min,
        warmup_steps: warmup_steps.min(total_steps),
        total_steps,
    }
    .lr_at(step)
}

/// Mean per-pixel BCE between fused logits `[N, H, W, 1]` and binary targets.
pub fn loss(logits: &Tensor, mask: &Tensor) -> Result<f64> {
    if logits.shape() != mask.shape() {
        return Err(Error::InvalidInput(format!(
            "logits {:?} and mask {:?} differ in shape",
            logits.shape(),
            mask.shape()
        )));
    }
    let n = logits.numel() as f64;
    Ok(logits
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &y)| mesorch_tensor::bce_logit_scalar(x, y))
        .sum::<f64>()
        / n)
}

/// A prepared training example.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: EnhancedInput,
    /// `[1, H, W, 1]` in {0, 1}.
    pub target: Tensor,
}

impl TrainSample {
    pub fn new(image: &Image, mask: &Mask, cutoff: f64) -> Result<Self> {
        if (image.height(), image.width()) != (mask.height(), mask.width()) {
            return Err(Error::InvalidInput("image and mask sizes differ".into()));
        }
        Ok(Self {
            input: make_enhanced_inputs(image, cutoff)?,
            target: mask.to_tensor(),
        })
    }
}

/// Concatenate `[1, ...]` inputs along the batch axis.
pub fn stack_enhanced(inputs: &[&EnhancedInput]) -> EnhancedInput {
    let pick = |f: fn(&EnhancedInput) -> &Tensor| Tensor::stack_batch(&inputs.iter().map(|s| f(s)).collect::<Vec<_>>());
    EnhancedInput {
        local: pick(|s| &s.local),
        global: pick(|s| &s.global),
        weight: pick(|s| &s.weight),
    }
}

pub fn stack_inputs(samples: &[&TrainSample]) -> (EnhancedInput, Tensor) {
    let inputs: Vec<&EnhancedInput> = samples.iter().map(|s| &s.input).collect();
    let targets: Vec<&Tensor> = samples.iter().map(|s| &s.target).collect();
    (stack_enhanced(&inputs), Tensor::stack_batch(&targets))
}

/// Mean loss of one batch and its gradient for every parameter.
pub fn loss_and_grads(model: &Mesorch, input: &EnhancedInput, target: &Tensor) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let vars = model.forward_vars(&mut g, input)?;
    if g.shape(vars.full) != target.shape() {
        return Err(Error::InvalidInput(format!(
            "prediction {:?} and target {:?} differ in shape",
            g.shape(vars.full),
            target.shape()
        )));
    }
    let l = g.bce_with_logits(vars.full, target);
    let value = g.value(l).item();
    let mut grads = g.backward(l);
    let mut out = BTreeMap::new();
    for (name, v) in vars.params {
        let t = grads
            .take(v)
            .unwrap_or_else(|| Tensor::zeros(model.params.get(&name).map(|p| p.value.shape()).unwrap_or(&[0])));
        out.insert(name, t);
    }
    Ok((value, out))
}

/// Decoupled AdamW update. Only `Weight` parameters are decayed. Parameters
/// and moments are kept at f32 precision so checkpoints restore them exactly.
pub fn adamw_step(model: &mut Mesorch, opt: &mut OptimizerState, grads: &BTreeMap<String, Tensor>, lr: f64, cfg: &TrainConfig) -> Result<()> {
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in model.params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("no gradient for {name}")))?;
        let m = opt.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.value.shape()));
        let v = opt.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.value.shape()));
        let decay = if p.kind == ParamKind::Weight { 1.0 - lr * cfg.weight_decay } else { 1.0 };
        let pd = p.value.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let upd = (md[i] / c1) / ((vd[i] / c2).sqrt() + cfg.adam_eps);
            pd[i] = pd[i] * decay - lr * upd;
        }
        round_f32(&mut p.value);
        round_f32(m);
        round_f32(v);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Mesorch,
    pub optimizer: OptimizerState,
    pub step: u64,
    pub epoch: u64,
    pub trace: Vec<LossRecord>,
}

pub const TRACE_FILE: &str = "loss.csv";

impl TrainState {
    pub fn new(model: Mesorch) -> Self {
        Self {
            model,
            optimizer: OptimizerState::default(),
            step: 0,
            epoch: 0,
            trace: Vec::new(),
        }
    }

    pub fn save(&self, dir: &Path, cfg: &TrainConfig) -> Result<()> {
        let ck = Checkpoint {
            model: self.model.clone(),
            seed: cfg.seed,
            step: self.step,
            epoch: self.epoch,
            optimizer: Some(self.optimizer.clone()),
            extra: serde_json::json!({ "train_config": cfg }),
        };
        ck.save(dir)?;
        write_trace(&dir.join(TRACE_FILE), &self.trace)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = Checkpoint::load(dir)?;
        let path = dir.join(TRACE_FILE);
        let trace = if path.is_file() { read_trace(&path)? } else { Vec::new() };
        Ok(Self {
            model: ck.model,
            optimizer: ck.optimizer.unwrap_or_default(),
            step: ck.step,
            epoch: ck.epoch,
            trace,
        })
    }
}

pub fn write_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::io::csv_err(path, e))?;
    for r in trace {
        w.serialize(r).map_err(|e| crate::io::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| crate::io::csv_err(path, e))?;
    r.deserialize()
        .map(|x| x.map_err(|e| crate::io::csv_err(path, e)))
        .collect()
}

/// Summary handed to the progress callback after each epoch.
#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub epoch: u64,
    pub step: u64,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Per-epoch checkpoints go to `out_dir/epoch_XXX`, plus `out_dir/loss.csv`.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many epochs in total (for resumability checks).
    pub stop_after_epoch: Option<u64>,
    pub on_epoch: Option<Box<dyn FnMut(&EpochSummary) + 'a>>,
}

pub fn epoch_dir(out: &Path, epoch: u64) -> PathBuf {
    out.join(format!("epoch_{epoch:03}"))
}

/// Batch order of one epoch.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("epoch/{epoch}")));
    idx.shuffle(&mut rng);
    idx
}

/// Train `state` on `data` until `cfg.epochs` epochs are complete.
pub fn train_loop(state: &mut TrainState, data: &[TrainSample], cfg: &TrainConfig, mut opts: TrainOptions) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if let Some(sz) = cfg.input_size {
        if sz != state.model.config.input_size {
            return Err(Error::Config(format!(
                "train input_size {sz:?} differs from the model's {:?}",
                state.model.config.input_size
            )));
        }
    }
    let sched = Schedule::new(cfg, data.len());
    let last = opts.stop_after_epoch.map_or(cfg.epochs as u64, |e| e.min(cfg.epochs as u64));
    while state.epoch < last {
        let epoch = state.epoch;
        let order = epoch_order(cfg.seed, epoch, data.len());
        let micro: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        let mut lr = 0.0;
        for group in micro.chunks(cfg.accumulation_steps) {
            let n_step: usize = group.iter().map(|b| b.len()).sum();
            let mut acc: Option<BTreeMap<String, Tensor>> = None;
            let mut step_loss = 0.0;
            for batch in group {
                let refs: Vec<&TrainSample> = batch.iter().map(|&i| &data[i]).collect();
                let (input, target) = stack_inputs(&refs);
                let (l, grads) = loss_and_grads(&state.model, &input, &target)?;
                let wgt = batch.len() as f64 / n_step as f64;
                step_loss += wgt * l;
                match &mut acc {
                    None => {
                        let mut g = grads;
                        g.values_mut().for_each(|t| t.scale_assign(wgt));
                        acc = Some(g);
                    }
                    Some(a) => {
                        for (k, mut t) in grads {
                            t.scale_assign(wgt);
                            a.get_mut(&k).expect("same parameter set").add_assign(&t);
                        }
                    }
                }
            }
            if !step_loss.is_finite() {
                let snapshot = opts
                    .out_dir
                    .as_ref()
                    .map(|d| d.join("nan_snapshot"))
                    .unwrap_or_else(|| std::env::temp_dir().join("mesorch_nan_snapshot"));
                state.save(&snapshot, cfg)?;
                return Err(Error::NonFiniteLoss {
                    step: state.step as usize,
                    snapshot,
                });
            }
            lr = sched.lr_at(state.step as usize + 1);
            adamw_step(&mut state.model, &mut state.optimizer, acc.as_ref().expect("non-empty group"), lr, cfg)?;
            state.step += 1;
            state.trace.push(LossRecord {
                step: state.step,
                epoch,
                lr,
                loss: step_loss,
            });
            loss_sum += step_loss;
            loss_n += 1;
        }
        state.epoch += 1;
        if let Some(out) = &opts.out_dir {
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            state.save(&epoch_dir(out, state.epoch), cfg)?;
            write_trace(&out.join(TRACE_FILE), &state.trace)?;
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&EpochSummary {
                epoch: state.epoch,
                step: state.step,
                mean_loss: loss_sum / loss_n as f64,
                lr,
            });
        }
    }
    Ok(())
}
