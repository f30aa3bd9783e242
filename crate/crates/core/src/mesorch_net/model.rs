use std::collections::BTreeMap;

use mesorch_tensor::{Graph, Tensor, Var};

use super::branch::{BranchId, BranchSet, Encoder};
use super::config::{FusionMode, MesorchConfig, SCALES};
use super::params::{Bound, ParamSet};
use super::plan::{param_specs, Weighting};
use crate::freq_dct::{make_enhanced_inputs, EnhancedInput};
use crate::{Error, Image, Result};

const LN_EPS: f64 = 1e-6;

/// Encoder features, one NHWC map per computed stage.
#[derive(Clone, Debug)]
pub struct ScalePyramid {
    pub maps: Vec<Tensor>,
}

/// Per-branch quarter-resolution logits, in branch order.
#[derive(Clone, Debug)]
pub struct PredictionSet {
    pub branches: BranchSet,
    pub maps: Vec<Tensor>,
}

impl PredictionSet {
    pub fn get(&self, id: BranchId) -> Option<&Tensor> {
        self.branches.position(id).map(|i| &self.maps[i])
    }

    /// `[N, H/4, W/4, K]` stack of all branch logits.
    pub fn combined(&self) -> Tensor {
        let refs: Vec<&Tensor> = self.maps.iter().collect();
        Tensor::concat_last(&refs)
    }
}

/// Per-pixel fusion weights `[N, H/4, W/4, K]`.
#[derive(Clone, Debug)]
pub struct WeightMap {
    pub weights: Tensor,
}

#[derive(Clone, Debug)]
pub struct FinalPrediction {
    /// Fused logits at `H/4 × W/4`.
    pub summed: Tensor,
    /// Fused logits resized to `H × W`.
    pub full: Tensor,
}

impl FinalPrediction {
    pub fn probability(&self) -> Tensor {
        self.full.map(mesorch_tensor::sigmoid_scalar)
    }
}

/// Everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct Forward {
    pub local: ScalePyramid,
    pub global: ScalePyramid,
    pub preds: PredictionSet,
    pub weights: Option<WeightMap>,
    pub output: FinalPrediction,
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    pub local: Vec<Var>,
    pub global: Vec<Var>,
    pub preds: Vec<Var>,
    pub weights: Option<Var>,
    pub summed: Var,
    pub full: Var,
    /// Parameter leaves by name.
    pub params: BTreeMap<String, Var>,
}

impl ForwardVars {
    pub fn to_forward(&self, g: &Graph, branches: &BranchSet) -> Forward {
        let take = |v: &[Var]| v.iter().map(|&x| g.value(x).clone()).collect();
        Forward {
            local: ScalePyramid { maps: take(&self.local) },
            global: ScalePyramid { maps: take(&self.global) },
            preds: PredictionSet {
                branches: branches.clone(),
                maps: take(&self.preds),
            },
            weights: self.weights.map(|w| WeightMap {
                weights: g.value(w).clone(),
            }),
            output: FinalPrediction {
                summed: g.value(self.summed).clone(),
                full: g.value(self.full).clone(),
            },
        }
    }
}

/// Layer helpers sharing the parameter naming used by the plan.
pub(crate) struct Layers<'a, 'p> {
    pub g: &'a mut Graph,
    pub b: &'a mut Bound<'p>,
}

impl Layers<'_, '_> {
    fn wb(&mut self, name: &str) -> Result<(Var, Var)> {
        let w = self.b.var(self.g, &format!("{name}.w"))?;
        let b = self.b.var(self.g, &format!("{name}.b"))?;
        Ok((w, b))
    }

    fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let (w, b) = self.wb(name)?;
        Ok(self.g.linear(x, w, Some(b)))
    }

    fn conv(&mut self, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
        let (w, b) = self.wb(name)?;
        Ok(self.g.conv2d(x, w, Some(b), stride, pad))
    }

    fn dw(&mut self, name: &str, x: Var) -> Result<Var> {
        let (w, b) = self.wb(name)?;
        let pad = self.g.shape(w)[0] / 2;
        Ok(self.g.depthwise_conv2d(x, w, Some(b), pad))
    }

    fn norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.b.var(self.g, &format!("{name}.g"))?;
        let beta = self.b.var(self.g, &format!("{name}.beta"))?;
        Ok(self.g.layer_norm(x, gamma, beta, LN_EPS))
    }
}

fn check_input(g: &Graph, x: Var, cfg: &MesorchConfig, channels: usize, what: &str) -> Result<usize> {
    let s = g.shape(x);
    let (h, w) = cfg.input_size;
    if s.len() != 4 || s[1] != h || s[2] != w || s[3] != channels {
        return Err(Error::Config(format!(
            "{what} input has shape {s:?}, expected [N, {h}, {w}, {channels}]"
        )));
    }
    Ok(s[0])
}

pub(crate) fn local_encode_vars(l: &mut Layers, cfg: &MesorchConfig, x: Var, stages: usize) -> Result<Vec<Var>> {
    check_input(l.g, x, cfg, 6, "local")?;
    let mut maps = Vec::with_capacity(stages);
    let mut cur = x;
    for i in 0..stages {
        if i == 0 {
            cur = l.conv("local.stem", cur, 4, 0)?;
            cur = l.norm("local.stem.norm", cur)?;
        } else {
            cur = l.norm(&format!("local.down{i}.norm"), cur)?;
            cur = l.conv(&format!("local.down{i}"), cur, 2, 0)?;
        }
        for j in 0..cfg.local.depths[i] {
            let p = format!("local.s{i}.b{j}");
            let mut y = l.dw(&format!("{p}.dw"), cur)?;
            y = l.norm(&format!("{p}.norm"), y)?;
            y = l.linear(&format!("{p}.fc1"), y)?;
            y = l.g.gelu(y);
            y = l.linear(&format!("{p}.fc2"), y)?;
            cur = l.g.add(cur, y);
        }
        maps.push(l.norm(&format!("local.s{i}.out"), cur)?);
    }
    Ok(maps)
}

pub(crate) fn global_encode_vars(l: &mut Layers, cfg: &MesorchConfig, x: Var, stages: usize) -> Result<Vec<Var>> {
    let n = check_input(l.g, x, cfg, 6, "global")?;
    let mut maps = Vec::with_capacity(stages);
    let mut spatial = x;
    for i in 0..stages {
        let (h, w) = cfg.scale_size(i);
        let c = cfg.global.channels[i];
        let sr = cfg.global.sr_ratios[i];
        let hidden = c * cfg.global.mlp_ratio;
        let t = h * w;
        let emb = if i == 0 {
            l.conv("global.embed0", spatial, 4, 3)?
        } else {
            l.conv(&format!("global.embed{i}"), spatial, 2, 1)?
        };
        let emb = l.norm(&format!("global.embed{i}.norm"), emb)?;
        let mut tok = l.g.reshape(emb, &[n, t, c]);
        for j in 0..cfg.global.depths[i] {
            let p = format!("global.s{i}.b{j}");
            let y = l.norm(&format!("{p}.norm1"), tok)?;
            let q = l.linear(&format!("{p}.q"), y)?;
            let kv_in = if sr > 1 {
                let ys = l.g.reshape(y, &[n, h, w, c]);
                let r = l.conv(&format!("{p}.sr"), ys, sr, 0)?;
                let r = l.norm(&format!("{p}.sr_norm"), r)?;
                l.g.reshape(r, &[n, t / (sr * sr), c])
            } else {
                y
            };
            let k = l.linear(&format!("{p}.k"), kv_in)?;
            let v = l.linear(&format!("{p}.v"), kv_in)?;
            let a = l.g.attention(q, k, v, cfg.global.heads[i]);
            let a = l.linear(&format!("{p}.proj"), a)?;
            tok = l.g.add(tok, a);

            let y = l.norm(&format!("{p}.norm2"), tok)?;
            let y = l.linear(&format!("{p}.fc1"), y)?;
            let y = l.g.reshape(y, &[n, h, w, hidden]);
            let y = l.dw(&format!("{p}.dw"), y)?;
            let y = l.g.gelu(y);
            let y = l.g.reshape(y, &[n, t, hidden]);
            let y = l.linear(&format!("{p}.fc2"), y)?;
            tok = l.g.add(tok, y);
        }
        let out = l.norm(&format!("global.s{i}.out"), tok)?;
        spatial = l.g.reshape(out, &[n, h, w, c]);
        maps.push(spatial);
    }
    Ok(maps)
}

pub(crate) fn decode_vars(l: &mut Layers, cfg: &MesorchConfig, feature: Var, branch: BranchId) -> Result<Var> {
    let s = l.g.shape(feature).to_vec();
    let (sh, sw) = cfg.scale_size(branch.scale());
    let c = match branch.encoder() {
        Encoder::Local => cfg.local.channels[branch.scale()],
        Encoder::Global => cfg.global.channels[branch.scale()],
    };
    if s.len() != 4 || s[1] != sh || s[2] != sw || s[3] != c {
        return Err(Error::Config(format!(
            "branch {branch} feature has shape {s:?}, expected [N, {sh}, {sw}, {c}]"
        )));
    }
    let (ph, pw) = cfg.pred_size();
    let y = l.linear(&format!("dec.{branch}.proj"), feature)?;
    let y = l.g.resize_bilinear(y, ph, pw);
    let y = l.g.gelu(y);
    l.linear(&format!("dec.{branch}.head"), y)
}

pub(crate) fn weights_vars(l: &mut Layers, cfg: &MesorchConfig, x: Var) -> Result<Var> {
    check_input(l.g, x, cfg, 9, "weighting")?;
    let y = l.conv("weight.conv1", x, 2, 1)?;
    let y = l.g.gelu(y);
    let y = l.conv("weight.conv2", y, 2, 1)?;
    let y = l.g.gelu(y);
    let y = l.conv("weight.head", y, 1, 0)?;
    Ok(l.g.softmax_last(y))
}

/// Sum in a balanced tree, so `K = 2^m` identical maps add up exactly.
fn tree_sum(g: &mut Graph, mut parts: Vec<Var>) -> Var {
    while parts.len() > 1 {
        parts = parts
            .chunks(2)
            .map(|c| if c.len() == 2 { g.add(c[0], c[1]) } else { c[0] })
            .collect();
    }
    parts[0]
}

/// Fuse branch logits at quarter resolution and resize to `H × W`.
pub(crate) fn fuse_vars(
    g: &mut Graph,
    preds: &[Var],
    weighting: &Weighting,
    weights: Option<Var>,
    out_size: (usize, usize),
) -> Result<(Var, Var)> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("no branch predictions to fuse".into()));
    }
    let s0 = g.shape(preds[0]).to_vec();
    if s0.len() != 4 || s0[3] != 1 || preds.iter().any(|&p| g.shape(p) != s0.as_slice()) {
        return Err(Error::InvalidInput("branch predictions must share an [N, h, w, 1] shape".into()));
    }
    let k = preds.len();
    let summed = match weighting {
        Weighting::Uniform => tree_sum(g, preds.to_vec()),
        Weighting::Adaptive | Weighting::Frozen(_) => {
            let w = match (weighting, weights) {
                (Weighting::Adaptive, Some(w)) => w,
                (Weighting::Adaptive, None) => {
                    return Err(Error::InvalidInput("adaptive fusion needs a weight map".into()))
                }
                (Weighting::Frozen(fw), _) => {
                    if fw.len() != k {
                        return Err(Error::InvalidInput(format!(
                            "{} frozen weights for {k} branches",
                            fw.len()
                        )));
                    }
                    let rows = s0[0] * s0[1] * s0[2];
                    let data = (0..rows).flat_map(|_| fw.iter().copied()).collect();
                    g.constant(Tensor::from_vec(&[s0[0], s0[1], s0[2], k], data))
                }
                _ => unreachable!(),
            };
            let ws = g.shape(w);
            if ws != [s0[0], s0[1], s0[2], k] {
                return Err(Error::InvalidInput(format!(
                    "weight map shape {ws:?} does not align with {k} predictions of shape {s0:?}"
                )));
            }
            let all = g.concat_last(preds);
            let prod = g.mul(all, w);
            g.sum_last(prod)
        }
    };
    let full = g.resize_bilinear(summed, out_size.0, out_size.1);
    Ok((summed, full))
}

/// The dual-encoder localization model.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesorch {
    pub config: MesorchConfig,
    pub branches: BranchSet,
    pub weighting: Weighting,
    pub params: ParamSet,
}

impl Mesorch {
    /// Full eight-branch model with fusion from `config.fusion_mode`.
    pub fn new(config: MesorchConfig, seed: u64) -> Result<Self> {
        let weighting = match config.fusion_mode {
            FusionMode::Uniform => Weighting::Uniform,
            FusionMode::Adaptive => Weighting::Adaptive,
        };
        Self::with_structure(config, BranchSet::full(), weighting, seed)
    }

    pub fn with_structure(config: MesorchConfig, branches: BranchSet, weighting: Weighting, seed: u64) -> Result<Self> {
        config.validate()?;
        if let Weighting::Frozen(w) = &weighting {
            if w.len() != branches.len() {
                return Err(Error::Config(format!(
                    "{} frozen weights for {} branches",
                    w.len(),
                    branches.len()
                )));
            }
        }
        let params = ParamSet::init(&param_specs(&config, &branches, &weighting), seed);
        Ok(Self {
            config,
            branches,
            weighting,
            params,
        })
    }

    pub fn param_count(&self) -> u64 {
        self.params.numel()
    }

    /// Record one forward pass on `g` for a batch of enhanced inputs.
    pub fn forward_vars(&self, g: &mut Graph, input: &EnhancedInput) -> Result<ForwardVars> {
        let mut bound = Bound::new(&self.params);
        let cfg = &self.config;
        let mut l = Layers { g, b: &mut bound };
        let xl = l.g.constant(input.local.clone());
        let xg = l.g.constant(input.global.clone());
        let local = local_encode_vars(&mut l, cfg, xl, self.branches.stages_needed(Encoder::Local))
            .map_err(|e| e.at_stage("local_encode"))?;
        let global = global_encode_vars(&mut l, cfg, xg, self.branches.stages_needed(Encoder::Global))
            .map_err(|e| e.at_stage("global_encode"))?;
        let mut preds = Vec::with_capacity(self.branches.len());
        for &id in self.branches.ids() {
            let f = match id.encoder() {
                Encoder::Local => local[id.scale()],
                Encoder::Global => global[id.scale()],
            };
            preds.push(decode_vars(&mut l, cfg, f, id).map_err(|e| e.at_stage("decode_scale"))?);
        }
        let weights = if self.weighting == Weighting::Adaptive {
            let xw = l.g.constant(input.weight.clone());
            Some(weights_vars(&mut l, cfg, xw).map_err(|e| e.at_stage("adaptive_weights"))?)
        } else {
            None
        };
        let (summed, full) = fuse_vars(l.g, &preds, &self.weighting, weights, cfg.input_size)
            .map_err(|e| e.at_stage("fuse"))?;
        Ok(ForwardVars {
            local,
            global,
            preds,
            weights,
            summed,
            full,
            params: bound.into_vars(),
        })
    }

    /// Inference on a prepared (possibly batched) input.
    pub fn forward_input(&self, input: &EnhancedInput) -> Result<Forward> {
        let mut g = Graph::inference();
        let vars = self.forward_vars(&mut g, input)?;
        Ok(vars.to_forward(&g, &self.branches))
    }

    /// Inference on a single image.
    pub fn forward(&self, image: &Image) -> Result<Forward> {
        let (h, w) = self.config.input_size;
        if (image.height(), image.width()) != (h, w) {
            return Err(Error::Config(format!(
                "image is {}x{}, model expects {h}x{w}",
                image.height(),
                image.width()
            )));
        }
        let input = make_enhanced_inputs(image, self.config.cutoff).map_err(|e| e.at_stage("make_enhanced_inputs"))?;
        self.forward_input(&input)
    }

    /// Encode a `[N, H, W, 6]` local input through all four stages.
    pub fn local_encode(&self, local_input: &Tensor) -> Result<ScalePyramid> {
        self.encode(local_input, Encoder::Local)
    }

    pub fn global_encode(&self, global_input: &Tensor) -> Result<ScalePyramid> {
        self.encode(global_input, Encoder::Global)
    }

    fn encode(&self, input: &Tensor, encoder: Encoder) -> Result<ScalePyramid> {
        let stages = self.branches.stages_needed(encoder);
        if stages < SCALES {
            return Err(Error::NotApplicable(format!(
                "{} encoder has only {stages} of {SCALES} stages after pruning",
                encoder.name()
            )));
        }
        let mut g = Graph::inference();
        let mut bound = Bound::new(&self.params);
        let mut l = Layers { g: &mut g, b: &mut bound };
        let x = l.g.constant(input.clone());
        let maps = match encoder {
            Encoder::Local => local_encode_vars(&mut l, &self.config, x, stages)?,
            Encoder::Global => global_encode_vars(&mut l, &self.config, x, stages)?,
        };
        Ok(ScalePyramid {
            maps: maps.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }

    pub fn decode_scale(&self, feature: &Tensor, branch: BranchId) -> Result<Tensor> {
        if !self.branches.contains(branch) {
            return Err(Error::NotApplicable(format!("branch {branch} is not active")));
        }
        let mut g = Graph::inference();
        let mut bound = Bound::new(&self.params);
        let mut l = Layers { g: &mut g, b: &mut bound };
        let x = l.g.constant(feature.clone());
        let y = decode_vars(&mut l, &self.config, x, branch)?;
        Ok(g.value(y).clone())
    }

    pub fn adaptive_weights(&self, weight_input: &Tensor) -> Result<WeightMap> {
        if self.weighting != Weighting::Adaptive {
            return Err(Error::NotApplicable("model does not use adaptive fusion".into()));
        }
        let mut g = Graph::inference();
        let mut bound = Bound::new(&self.params);
        let mut l = Layers { g: &mut g, b: &mut bound };
        let x = l.g.constant(weight_input.clone());
        let w = weights_vars(&mut l, &self.config, x)?;
        Ok(WeightMap {
            weights: g.value(w).clone(),
        })
    }
}

/// Fuse a prediction set: uniform sum when `weights` is `None`, otherwise the
/// per-pixel weighted sum. The result is resized to `out_size`.
pub fn fuse(preds: &PredictionSet, weights: Option<&WeightMap>, out_size: (usize, usize)) -> Result<FinalPrediction> {
    let mut g = Graph::inference();
    let pv: Vec<Var> = preds.maps.iter().map(|m| g.constant(m.clone())).collect();
    let (mode, wv) = match weights {
        None => (Weighting::Uniform, None),
        Some(w) => (Weighting::Adaptive, Some(g.constant(w.weights.clone()))),
    };
    let (summed, full) = fuse_vars(&mut g, &pv, &mode, wv, out_size)?;
    Ok(FinalPrediction {
        summed: g.value(summed).clone(),
        full: g.value(full).clone(),
    })
}
