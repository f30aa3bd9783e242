use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Grid, Image, Mask, Result};

/// Per-channel 2×2 acquisition pattern (zero mean per channel). Any nonzero
/// grid shift changes the red or blue pattern.
const PATTERN: [[[f64; 3]; 2]; 2] = [
    [[1.0, -1.0, -1.0 / 3.0], [-1.0 / 3.0, 1.0, -1.0 / 3.0]],
    [[-1.0 / 3.0, 1.0, -1.0 / 3.0], [-1.0 / 3.0, -1.0, 1.0]],
];

const TRACE_AMPLITUDE: (f64, f64) = (0.025, 0.04);
const SENSOR_NOISE: f64 = 0.004;

/// Offset of the acquisition grid relative to the image origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridPhase {
    pub dy: usize,
    pub dx: usize,
}

impl GridPhase {
    pub const ALIGNED: GridPhase = GridPhase { dy: 0, dx: 0 };
    pub const ALL: [GridPhase; 4] = [
        GridPhase { dy: 0, dx: 0 },
        GridPhase { dy: 0, dx: 1 },
        GridPhase { dy: 1, dx: 0 },
        GridPhase { dy: 1, dx: 1 },
    ];

    pub fn is_aligned(self) -> bool {
        self == Self::ALIGNED
    }
}

/// The additive trace of phase `p` at `(y, x, c)` for unit amplitude.
pub fn trace_value(p: GridPhase, y: usize, x: usize, c: usize) -> f64 {
    PATTERN[(y + p.dy) % 2][(x + p.dx) % 2][c]
}

/// A generated image together with the coverage masks of its objects.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Image,
    /// One mask per foreground object, front-most last; occluded parts removed.
    pub objects: Vec<Mask>,
}

impl Scene {
    /// A scene without object annotations (free-form regions only).
    pub fn plain(image: Image) -> Self {
        Self {
            image,
            objects: Vec::new(),
        }
    }
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Ellipse,
    Rectangle,
    Polygon,
}

/// Signed-distance-like inside test; positive inside, in pixels.
struct Shape {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    /// Polygon radii per vertex (relative), for `Polygon`.
    radii: Vec<f64>,
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64) -> Self {
        let kind = match rng.random_range(0..3) {
            0 => ShapeKind::Ellipse,
            1 => ShapeKind::Rectangle,
            _ => ShapeKind::Polygon,
        };
        let s = h.min(w);
        let n = rng.random_range(5..9);
        Shape {
            kind,
            cy: rng.random_range(0.15..0.85) * h,
            cx: rng.random_range(0.15..0.85) * w,
            ry: rng.random_range(0.1..0.3) * s,
            rx: rng.random_range(0.1..0.3) * s,
            angle: rng.random_range(0.0..PI),
            radii: (0..n).map(|_| rng.random_range(0.6..1.0)).collect(),
        }
    }

    /// Approximate signed distance to the boundary (positive inside).
    fn inside(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let m = self.rx.min(self.ry);
        match self.kind {
            ShapeKind::Ellipse => {
                let r = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt();
                (1.0 - r) * m
            }
            ShapeKind::Rectangle => (self.rx - u.abs()).min(self.ry - v.abs()),
            ShapeKind::Polygon => {
                let r = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt();
                let n = self.radii.len() as f64;
                let t = v.atan2(u).rem_euclid(2.0 * PI) / (2.0 * PI) * n;
                let i = t.floor() as usize % self.radii.len();
                let j = (i + 1) % self.radii.len();
                let f = t - t.floor();
                let edge = self.radii[i] * (1.0 - f) + self.radii[j] * f;
                (edge - r) * m
            }
        }
    }
}

/// Smooth directional texture in roughly `[-1, 1]`.
struct Texture {
    fy: f64,
    fx: f64,
    phase: f64,
    fy2: f64,
    fx2: f64,
    mix: f64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let a = rng.random_range(0.0..PI);
        let f = rng.random_range(0.05..0.35);
        let a2 = rng.random_range(0.0..PI);
        let f2 = rng.random_range(0.02..0.12);
        Texture {
            fy: f * a.sin(),
            fx: f * a.cos(),
            phase: rng.random_range(0.0..2.0 * PI),
            fy2: f2 * a2.sin(),
            fx2: f2 * a2.cos(),
            mix: rng.random_range(0.0..1.0),
        }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        let a = (self.fy * y + self.fx * x + self.phase).sin();
        let b = (self.fy2 * y + self.fx2 * x).cos();
        (1.0 - self.mix) * a + self.mix * a * b
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.2..0.8),
        rng.random_range(0.2..0.8),
        rng.random_range(0.2..0.8),
    ]
}

/// Scene content before the acquisition trace, with object coverages.
fn render(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Vec<f64>, Vec<Grid>) {
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let dir = rng.random_range(0.0..2.0 * PI);
    let (ds, dc) = dir.sin_cos();
    let bg_tex = Texture::random(rng);
    let bg_amp = rng.random_range(0.01..0.05);
    let diag = ((h * h + w * w) as f64).sqrt();
    let mut data = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let t = 0.5 + ((x as f64 - w as f64 / 2.0) * dc + (y as f64 - h as f64 / 2.0) * ds) / diag;
            let tex = bg_amp * bg_tex.at(y as f64, x as f64);
            for c in 0..3 {
                data[(y * w + x) * 3 + c] = c0[c] * (1.0 - t) + c1[c] * t + tex;
            }
        }
    }
    let n_shapes = rng.random_range(2..=5);
    let mut coverages: Vec<Grid> = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let shape = Shape::random(rng, h as f64, w as f64);
        let color = random_color(rng);
        let tex = Texture::random(rng);
        let amp = rng.random_range(0.02..0.08);
        let mut cov = Grid::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let a = (shape.inside(y as f64 + 0.5, x as f64 + 0.5) + 0.5).clamp(0.0, 1.0);
                if a == 0.0 {
                    continue;
                }
                cov.set(y, x, a);
                let t = amp * tex.at(y as f64, x as f64);
                for c in 0..3 {
                    let i = (y * w + x) * 3 + c;
                    data[i] = data[i] * (1.0 - a) + (color[c] + t) * a;
                }
            }
        }
        // a new object occludes earlier ones
        for prev in &mut coverages {
            for (p, &a) in prev.data_mut().iter_mut().zip(cov.data()) {
                *p *= 1.0 - a;
            }
        }
        coverages.push(cov);
    }
    (data, coverages)
}

/// Add the acquisition trace of phase `phase` plus sensor noise.
fn acquire(rng: &mut ChaCha8Rng, data: &mut [f64], h: usize, w: usize, phase: GridPhase) {
    let amp = rng.random_range(TRACE_AMPLITUDE.0..TRACE_AMPLITUDE.1);
    let noise = Normal::new(0.0, SENSOR_NOISE).unwrap();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(y * w + x) * 3 + c] += amp * trace_value(phase, y, x, c) + noise.sample(rng);
            }
        }
    }
}

pub const MIN_SCENE_SIDE: usize = 32;

/// Procedural scene: gradient background, 2–5 textured soft-edged shapes,
/// and a 2×2 acquisition trace at the given grid phase.
pub fn gen_scene(seed: u64, height: usize, width: usize, phase: GridPhase) -> Result<Scene> {
    if height < MIN_SCENE_SIDE || width < MIN_SCENE_SIDE {
        return Err(Error::InvalidInput(format!(
            "scenes must be at least {MIN_SCENE_SIDE}x{MIN_SCENE_SIDE}, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut data, coverages) = render(&mut rng, height, width);
    acquire(&mut rng, &mut data, height, width, phase);
    let image = Image::from_clamped(height, width, data)?;
    let objects = coverages
        .iter()
        .map(|g| Mask::from_fn(height, width, |y, x| g.get(y, x) >= 0.5))
        .collect();
    Ok(Scene { image, objects })
}

/// An authentic image: scene with the aligned acquisition grid.
pub fn gen_base_image(seed: u64, height: usize, width: usize) -> Result<Image> {
    Ok(gen_scene(seed, height, width, GridPhase::ALIGNED)?.image)
}
