//! Static layer inventory of a network configuration.
//!
//! The plan lists every parameterized layer and every attention product of
//! one forward pass, with the spatial extent it runs at. Parameter shapes
//! and analytic FLOP counts are both derived from it.

use serde::Serialize;

use super::branch::{BranchId, BranchSet, Encoder};
use super::config::MesorchConfig;

/// Which top-level component a layer belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Component {
    LocalEncoder,
    GlobalEncoder,
    Decoder(BranchId),
    Weighting,
}

impl Component {
    pub fn label(&self) -> String {
        match self {
            Component::LocalEncoder => "local_encoder".into(),
            Component::GlobalEncoder => "global_encoder".into(),
            Component::Decoder(b) => format!("decoder_{b}"),
            Component::Weighting => "weighting".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Conv {
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
        out: (usize, usize),
    },
    Depthwise {
        kernel: usize,
        channels: usize,
        out: (usize, usize),
    },
    Linear {
        fan_in: usize,
        fan_out: usize,
        positions: usize,
    },
    Norm {
        channels: usize,
    },
    Attention {
        queries: usize,
        keys: usize,
        channels: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub component: Component,
    pub op: LayerOp,
    pub zero_init: bool,
}

impl LayerSpec {
    pub fn params(&self) -> Vec<ParamSpec> {
        let w_init = if self.zero_init { Init::Zeros } else { Init::TruncNormal };
        let wb = |w: Vec<usize>, b: usize| {
            vec![
                ParamSpec {
                    name: format!("{}.w", self.name),
                    shape: w,
                    kind: ParamKind::Weight,
                    init: w_init,
                },
                ParamSpec {
                    name: format!("{}.b", self.name),
                    shape: vec![b],
                    kind: ParamKind::Bias,
                    init: Init::Zeros,
                },
            ]
        };
        match self.op {
            LayerOp::Conv {
                kernel, cin, cout, ..
            } => wb(vec![kernel, kernel, cin, cout], cout),
            LayerOp::Depthwise {
                kernel, channels, ..
            } => wb(vec![kernel, kernel, channels], channels),
            LayerOp::Linear {
                fan_in, fan_out, ..
            } => wb(vec![fan_in, fan_out], fan_out),
            LayerOp::Norm { channels } => vec![
                ParamSpec {
                    name: format!("{}.g", self.name),
                    shape: vec![channels],
                    kind: ParamKind::NormScale,
                    init: Init::Ones,
                },
                ParamSpec {
                    name: format!("{}.beta", self.name),
                    shape: vec![channels],
                    kind: ParamKind::NormShift,
                    init: Init::Zeros,
                },
            ],
            LayerOp::Attention { .. } => Vec::new(),
        }
    }

    pub fn param_count(&self) -> u64 {
        self.params().iter().map(|p| p.numel() as u64).sum()
    }

    /// FLOPs at batch 1, counted as 2 × multiply-accumulates of the
    /// convolution, linear and attention products (norms and resizes excluded).
    pub fn flops(&self) -> u64 {
        let f = match self.op {
            LayerOp::Conv {
                kernel,
                cin,
                cout,
                out,
                ..
            } => 2 * kernel * kernel * cin * cout * out.0 * out.1,
            LayerOp::Depthwise {
                kernel,
                channels,
                out,
            } => 2 * kernel * kernel * channels * out.0 * out.1,
            LayerOp::Linear {
                fan_in,
                fan_out,
                positions,
            } => 2 * fan_in * fan_out * positions,
            LayerOp::Norm { .. } => 0,
            // Q·Kᵀ and P·V, each queries × keys × channels MACs summed over heads
            LayerOp::Attention {
                queries,
                keys,
                channels,
            } => 2 * 2 * queries * keys * channels,
        };
        f as u64
    }
}

/// How branch predictions are combined.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "weights")]
pub enum Weighting {
    Uniform,
    Adaptive,
    /// Constant per-branch weights (weighting module removed after pruning).
    Frozen(Vec<f64>),
}

struct Builder<'a> {
    cfg: &'a MesorchConfig,
    layers: Vec<LayerSpec>,
    component: Component,
}

impl Builder<'_> {
    fn push(&mut self, name: String, op: LayerOp) {
        self.layers.push(LayerSpec {
            name,
            component: self.component.clone(),
            op,
            zero_init: false,
        });
    }

    fn conv(&mut self, name: String, kernel: usize, cin: usize, cout: usize, stride: usize, pad: usize, out: (usize, usize)) {
        self.push(
            name,
            LayerOp::Conv {
                kernel,
                cin,
                cout,
                stride,
                pad,
                out,
            },
        );
    }

    fn linear(&mut self, name: String, fan_in: usize, fan_out: usize, positions: usize) {
        self.push(
            name,
            LayerOp::Linear {
                fan_in,
                fan_out,
                positions,
            },
        );
    }

    fn norm(&mut self, name: String, channels: usize) {
        self.push(name, LayerOp::Norm { channels });
    }

    fn local(&mut self, stages: usize) {
        let cfg = &self.cfg.local;
        let ch = cfg.channels;
        self.component = Component::LocalEncoder;
        for i in 0..stages {
            let out = self.cfg.scale_size(i);
            let c = ch[i];
            if i == 0 {
                self.conv("local.stem".into(), 4, 6, c, 4, 0, out);
                self.norm("local.stem.norm".into(), c);
            } else {
                self.norm(format!("local.down{i}.norm"), ch[i - 1]);
                self.conv(format!("local.down{i}"), 2, ch[i - 1], c, 2, 0, out);
            }
            let pos = out.0 * out.1;
            let hidden = c * cfg.mlp_ratio;
            for j in 0..cfg.depths[i] {
                let p = format!("local.s{i}.b{j}");
                self.push(
                    format!("{p}.dw"),
                    LayerOp::Depthwise {
                        kernel: cfg.kernel,
                        channels: c,
                        out,
                    },
                );
                self.norm(format!("{p}.norm"), c);
                self.linear(format!("{p}.fc1"), c, hidden, pos);
                self.linear(format!("{p}.fc2"), hidden, c, pos);
            }
            self.norm(format!("local.s{i}.out"), c);
        }
    }

    fn global(&mut self, stages: usize) {
        let cfg = &self.cfg.global;
        let ch = cfg.channels;
        self.component = Component::GlobalEncoder;
        for i in 0..stages {
            let out = self.cfg.scale_size(i);
            let c = ch[i];
            if i == 0 {
                self.conv("global.embed0".into(), 7, 6, c, 4, 3, out);
            } else {
                self.conv(format!("global.embed{i}"), 3, ch[i - 1], c, 2, 1, out);
            }
            self.norm(format!("global.embed{i}.norm"), c);
            let tokens = out.0 * out.1;
            let sr = cfg.sr_ratios[i];
            let keys = tokens / (sr * sr);
            let hidden = c * cfg.mlp_ratio;
            for j in 0..cfg.depths[i] {
                let p = format!("global.s{i}.b{j}");
                self.norm(format!("{p}.norm1"), c);
                self.linear(format!("{p}.q"), c, c, tokens);
                if sr > 1 {
                    self.conv(format!("{p}.sr"), sr, c, c, sr, 0, (out.0 / sr, out.1 / sr));
                    self.norm(format!("{p}.sr_norm"), c);
                }
                self.linear(format!("{p}.k"), c, c, keys);
                self.linear(format!("{p}.v"), c, c, keys);
                self.push(
                    format!("{p}.attn"),
                    LayerOp::Attention {
                        queries: tokens,
                        keys,
                        channels: c,
                    },
                );
                self.linear(format!("{p}.proj"), c, c, tokens);
                self.norm(format!("{p}.norm2"), c);
                self.linear(format!("{p}.fc1"), c, hidden, tokens);
                self.push(
                    format!("{p}.dw"),
                    LayerOp::Depthwise {
                        kernel: 3,
                        channels: hidden,
                        out,
                    },
                );
                self.linear(format!("{p}.fc2"), hidden, c, tokens);
            }
            self.norm(format!("global.s{i}.out"), c);
        }
    }

    fn decoder(&mut self, branch: BranchId) {
        self.component = Component::Decoder(branch);
        let scale = branch.scale();
        let cin = match branch.encoder() {
            Encoder::Local => self.cfg.local.channels[scale],
            Encoder::Global => self.cfg.global.channels[scale],
        };
        let (sh, sw) = self.cfg.scale_size(scale);
        let (ph, pw) = self.cfg.pred_size();
        let d = self.cfg.decoder_width;
        self.linear(format!("dec.{branch}.proj"), cin, d, sh * sw);
        self.linear(format!("dec.{branch}.head"), d, 1, ph * pw);
    }

    fn weighting(&mut self, k: usize) {
        self.component = Component::Weighting;
        let (h, w) = self.cfg.input_size;
        let hid = self.cfg.weighting_hidden;
        self.conv("weight.conv1".into(), 3, 9, hid, 2, 1, (h / 2, w / 2));
        self.conv("weight.conv2".into(), 3, hid, hid, 2, 1, (h / 4, w / 4));
        self.conv("weight.head".into(), 1, hid, k, 1, 0, (h / 4, w / 4));
        self.layers.last_mut().unwrap().zero_init = true;
    }
}

/// Every layer that runs in one forward pass of the given structure.
pub fn layer_plan(cfg: &MesorchConfig, branches: &BranchSet, weighting: &Weighting) -> Vec<LayerSpec> {
    let mut b = Builder {
        cfg,
        layers: Vec::new(),
        component: Component::LocalEncoder,
    };
    b.local(branches.stages_needed(Encoder::Local));
    b.global(branches.stages_needed(Encoder::Global));
    for &id in branches.ids() {
        b.decoder(id);
    }
    if matches!(weighting, Weighting::Adaptive) {
        b.weighting(branches.len());
    }
    b.layers
}

pub fn param_specs(cfg: &MesorchConfig, branches: &BranchSet, weighting: &Weighting) -> Vec<ParamSpec> {
    layer_plan(cfg, branches, weighting)
        .iter()
        .flat_map(|l| l.params())
        .collect()
}
