use serde::{Deserialize, Serialize};

use crate::freq_dct::{validate_cutoff, DEFAULT_CUTOFF};
use crate::{Error, Result};

pub const SCALES: usize = 4;

/// Built-in size presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// CPU-trainable: 16/32/64/128 channels, two blocks per stage.
    Toy,
    /// Published stage widths/depths of the two winning backbones, randomly initialized.
    Paper,
    /// Hand-specified (tests, micro models).
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Plain sum of all branch logits.
    Uniform,
    /// Per-pixel softmax weights from the weighting module.
    Adaptive,
}

/// Convolutional (local, high-frequency) encoder shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalEncoderConfig {
    pub channels: [usize; SCALES],
    pub depths: [usize; SCALES],
    /// Depthwise kernel of each block.
    pub kernel: usize,
    pub mlp_ratio: usize,
}

/// Attention (global, low-frequency) encoder shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalEncoderConfig {
    pub channels: [usize; SCALES],
    pub depths: [usize; SCALES],
    pub heads: [usize; SCALES],
    /// Key/value spatial reduction per stage (1 = full attention).
    pub sr_ratios: [usize; SCALES],
    pub mlp_ratio: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MesorchConfig {
    pub preset: Preset,
    /// `(H, W)`, both multiples of 32.
    pub input_size: (usize, usize),
    pub local: LocalEncoderConfig,
    pub global: GlobalEncoderConfig,
    /// Shared projection width of the per-scale decoders.
    pub decoder_width: usize,
    pub weighting_hidden: usize,
    pub fusion_mode: FusionMode,
    /// DCT low-band cutoff fraction τ.
    pub cutoff: f64,
}

impl MesorchConfig {
    pub fn toy() -> Self {
        Self {
            preset: Preset::Toy,
            input_size: (64, 64),
            local: LocalEncoderConfig {
                channels: [16, 32, 64, 128],
                depths: [2, 2, 2, 2],
                kernel: 7,
                mlp_ratio: 2,
            },
            global: GlobalEncoderConfig {
                channels: [16, 32, 64, 128],
                depths: [2, 2, 2, 2],
                heads: [1, 1, 2, 2],
                sr_ratios: [2, 1, 1, 1],
                mlp_ratio: 2,
            },
            decoder_width: 32,
            weighting_hidden: 16,
            fusion_mode: FusionMode::Adaptive,
            cutoff: DEFAULT_CUTOFF,
        }
    }

    /// ConvNeXt-Tiny and SegFormer-B3 stage layout at 512×512.
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            input_size: (512, 512),
            local: LocalEncoderConfig {
                channels: [96, 192, 384, 768],
                depths: [3, 3, 9, 3],
                kernel: 7,
                mlp_ratio: 4,
            },
            global: GlobalEncoderConfig {
                channels: [64, 128, 320, 512],
                depths: [3, 4, 18, 3],
                heads: [1, 2, 5, 8],
                sr_ratios: [8, 4, 2, 1],
                mlp_ratio: 4,
            },
            decoder_width: 256,
            weighting_hidden: 32,
            fusion_mode: FusionMode::Adaptive,
            cutoff: DEFAULT_CUTOFF,
        }
    }

    /// A model small enough for exhaustive finite-difference checks (32×32 input).
    pub fn micro() -> Self {
        Self {
            preset: Preset::Custom,
            input_size: (32, 32),
            local: LocalEncoderConfig {
                channels: [4, 4, 8, 8],
                depths: [1, 1, 1, 1],
                kernel: 3,
                mlp_ratio: 2,
            },
            global: GlobalEncoderConfig {
                channels: [4, 4, 8, 8],
                depths: [1, 1, 1, 1],
                heads: [1, 1, 2, 1],
                sr_ratios: [2, 1, 1, 1],
                mlp_ratio: 2,
            },
            decoder_width: 4,
            weighting_hidden: 4,
            fusion_mode: FusionMode::Adaptive,
            cutoff: DEFAULT_CUTOFF,
        }
    }

    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::Toy => Self::toy(),
            Preset::Paper => Self::paper(),
            Preset::Custom => Self::micro(),
        }
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    /// Spatial extent of scale `i` (0-based): `(H / 2^(i+2), W / 2^(i+2))`.
    pub fn scale_size(&self, scale: usize) -> (usize, usize) {
        let div = 1 << (scale + 2);
        (self.input_size.0 / div, self.input_size.1 / div)
    }

    /// Resolution of decoder outputs and weight maps, `(H/4, W/4)`.
    pub fn pred_size(&self) -> (usize, usize) {
        self.scale_size(0)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!("input size {h}x{w} must be positive multiples of 32")));
        }
        validate_cutoff(self.cutoff)?;
        let all = self
            .local
            .channels
            .iter()
            .chain(&self.global.channels)
            .chain(&self.global.heads)
            .chain(&self.global.sr_ratios);
        if all.copied().any(|c| c == 0)
            || self.decoder_width == 0
            || self.weighting_hidden == 0
            || self.local.mlp_ratio == 0
            || self.global.mlp_ratio == 0
        {
            return Err(Error::Config("channel counts, heads and ratios must all be ≥ 1".into()));
        }
        if self.local.kernel % 2 == 0 {
            return Err(Error::Config("local depthwise kernel must be odd".into()));
        }
        for i in 0..SCALES {
            let (sh, sw) = self.scale_size(i);
            let c = self.global.channels[i];
            let heads = self.global.heads[i];
            if c % heads != 0 {
                return Err(Error::Config(format!(
                    "global stage {} width {c} not divisible by {heads} heads",
                    i + 1
                )));
            }
            let sr = self.global.sr_ratios[i];
            if sh % sr != 0 || sw % sr != 0 {
                return Err(Error::Config(format!(
                    "global stage {} size {sh}x{sw} not divisible by reduction {sr}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}
