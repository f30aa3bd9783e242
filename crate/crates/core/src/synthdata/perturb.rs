use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Image, Result};

/// Noise standard deviations on the 0–255 scale.
pub const NOISE_LEVELS: [u32; 6] = [3, 7, 11, 15, 19, 23];
/// Odd Gaussian blur kernel sides.
pub const BLUR_LEVELS: [u32; 6] = [3, 7, 11, 15, 19, 23];
pub const JPEG_LEVELS: [u32; 6] = [100, 90, 80, 70, 60, 50];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    GaussNoise,
    GaussBlur,
    Jpeg,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 3] = [PerturbKind::GaussNoise, PerturbKind::GaussBlur, PerturbKind::Jpeg];

    pub fn levels(self) -> [u32; 6] {
        match self {
            PerturbKind::GaussNoise => NOISE_LEVELS,
            PerturbKind::GaussBlur => BLUR_LEVELS,
            PerturbKind::Jpeg => JPEG_LEVELS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbKind::GaussNoise => "gauss_noise",
            PerturbKind::GaussBlur => "gauss_blur",
            PerturbKind::Jpeg => "jpeg",
        }
    }
}

/// A perturbation: `kind` at `level`, or the identity when `kind` is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kind: Option<PerturbKind>,
    pub level: Option<u32>,
}

impl PerturbSpec {
    pub const NONE: PerturbSpec = PerturbSpec { kind: None, level: None };

    pub fn new(kind: PerturbKind, level: u32) -> Result<Self> {
        let s = PerturbSpec {
            kind: Some(kind),
            level: Some(level),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.level) {
            (None, None) => Ok(()),
            (Some(k), Some(l)) if k.levels().contains(&l) => Ok(()),
            (Some(k), Some(l)) => Err(Error::Config(format!(
                "{} level {l} is not one of {:?}",
                k.name(),
                k.levels()
            ))),
            _ => Err(Error::Config("perturbation kind and level must be given together".into())),
        }
    }

    /// The 19 evaluation cells: identity followed by every kind × level.
    pub fn grid() -> Vec<PerturbSpec> {
        let mut v = vec![PerturbSpec::NONE];
        for k in PerturbKind::ALL {
            for l in k.levels() {
                v.push(PerturbSpec {
                    kind: Some(k),
                    level: Some(l),
                });
            }
        }
        v
    }
}

impl fmt::Display for PerturbSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.level) {
            (Some(k), Some(l)) => write!(f, "{}:{l}", k.name()),
            _ => write!(f, "none"),
        }
    }
}

pub fn perturb(image: &Image, spec: PerturbSpec, seed: u64) -> Result<Image> {
    spec.validate()?;
    match (spec.kind, spec.level) {
        (Some(PerturbKind::GaussNoise), Some(l)) => Ok(gauss_noise(image, l as f64, seed)),
        (Some(PerturbKind::GaussBlur), Some(l)) => Ok(gauss_blur(image, l as usize)),
        (Some(PerturbKind::Jpeg), Some(l)) => jpeg_round_trip(image, l as u8),
        _ => Ok(image.clone()),
    }
}

/// Additive i.i.d. `N(0, (std/255)²)` noise, then clamped.
pub fn gauss_noise(image: &Image, std_255: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, std_255 / 255.0).unwrap();
    let data = image.data().iter().map(|&v| v + n.sample(&mut rng)).collect();
    Image::from_clamped(image.height(), image.width(), data).expect("size unchanged")
}

/// Standard deviation used for a `k`-tap Gaussian kernel.
pub fn blur_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

pub fn gaussian_kernel(k: usize) -> Vec<f64> {
    let s = blur_sigma(k);
    let c = (k / 2) as f64;
    let raw: Vec<f64> = (0..k).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * s * s)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable `k×k` Gaussian blur with reflect-101 borders.
pub fn gauss_blur(image: &Image, k: usize) -> Image {
    let (h, w) = (image.height(), image.width());
    let kern = gaussian_kernel(k);
    let r = (k / 2) as isize;
    let src = image.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, kv) in kern.iter().enumerate() {
                    let xx = reflect101(x as isize + t as isize - r, w);
                    acc += kv * src[(y * w + xx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, kv) in kern.iter().enumerate() {
                    let yy = reflect101(y as isize + t as isize - r, h);
                    acc += kv * tmp[(yy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    Image::from_clamped(h, w, out).expect("size unchanged")
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encode at `quality` with 4:2:0 chroma subsampling and decode again.
pub fn jpeg_round_trip(image: &Image, quality: u8) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_u8(v)).collect();
    let mut buf = Vec::new();
    let mut enc = jpeg_encoder::Encoder::new(&mut buf, quality);
    enc.set_sampling_factor(jpeg_encoder::SamplingFactor::F_2_2);
    enc.encode(&bytes, w as u16, h as u16, jpeg_encoder::ColorType::Rgb)
        .map_err(|e| Error::Codec {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    let dec = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Codec {
            path: "<memory>".into(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let data = dec.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(h, w, data)
}
