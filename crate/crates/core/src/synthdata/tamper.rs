use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::{Error, Image, Mask, Result};

pub const MIN_AREA: f64 = 0.01;
pub const MAX_AREA: f64 = 0.6;
const ATTEMPTS: usize = 10;
/// Probability that a region is anchored to a generated object.
pub const OBJECT_ALIGNED_RATE: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperType {
    Splice,
    CopyMove,
    Inpaint,
}

impl TamperType {
    pub const ALL: [TamperType; 3] = [TamperType::Splice, TamperType::CopyMove, TamperType::Inpaint];
}

#[derive(Clone, Debug)]
pub struct TamperSample {
    pub image: Image,
    pub mask: Mask,
    pub tamper_type: TamperType,
    pub seed: u64,
    /// Whether the region follows a generated object.
    pub object_aligned: bool,
    /// Copy-move translation from source to destination.
    pub offset: Option<(isize, isize)>,
}

fn area_ok(m: &Mask) -> bool {
    let a = m.area_fraction();
    (MIN_AREA..=MAX_AREA).contains(&a)
}

/// Random ellipse or star-shaped polygon covering roughly 2–25% of the frame.
fn free_form(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let s = h.min(w) as f64;
    let cy = rng.random_range(0.2..0.8) * h as f64;
    let cx = rng.random_range(0.2..0.8) * w as f64;
    let ry = rng.random_range(0.08..0.28) * s;
    let rx = rng.random_range(0.08..0.28) * s;
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let n = rng.random_range(3..10);
    let radii: Vec<f64> = (0..n).map(|_| rng.random_range(0.55..1.0)).collect();
    let polygon = rng.random_bool(0.5);
    let (sa, ca) = angle.sin_cos();
    Mask::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        let u = (ca * dx + sa * dy) / rx;
        let v = (-sa * dx + ca * dy) / ry;
        let r = (u * u + v * v).sqrt();
        if !polygon {
            return r <= 1.0;
        }
        let t = v.atan2(u).rem_euclid(2.0 * std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * n as f64;
        let i = t.floor() as usize % n;
        let f = t - t.floor();
        r <= radii[i] * (1.0 - f) + radii[(i + 1) % n] * f
    })
}

/// Pick a region: a suitable object with probability [`OBJECT_ALIGNED_RATE`],
/// otherwise (or when no object qualifies) a free-form shape.
fn pick_region(
    rng: &mut ChaCha8Rng,
    objects: &[Mask],
    h: usize,
    w: usize,
    prepare: impl Fn(&Mask) -> Mask,
    accept: impl Fn(&Mask) -> bool,
) -> Result<(Mask, bool)> {
    if rng.random_bool(OBJECT_ALIGNED_RATE) {
        let candidates: Vec<Mask> = objects.iter().map(&prepare).filter(|m| accept(m)).collect();
        if !candidates.is_empty() {
            let i = rng.random_range(0..candidates.len());
            return Ok((candidates[i].clone(), true));
        }
    }
    for _ in 0..ATTEMPTS {
        let m = prepare(&free_form(rng, h, w));
        if accept(&m) {
            return Ok((m, false));
        }
    }
    Err(Error::Generation(format!(
        "no admissible region after {ATTEMPTS} attempts"
    )))
}

/// Composite a donor region into the host at the same position.
pub fn gen_splice(seed: u64, donor: &Scene, host: &Image) -> Result<TamperSample> {
    let (h, w) = (host.height(), host.width());
    if (donor.image.height(), donor.image.width()) != (h, w) {
        return Err(Error::InvalidInput("donor and host must have the same size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mask, aligned) = pick_region(&mut rng, &donor.objects, h, w, Mask::clone, area_ok)?;
    let mut data = host.data().to_vec();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                let i = (y * w + x) * 3;
                data[i..i + 3].copy_from_slice(&donor.image.data()[i..i + 3]);
            }
        }
    }
    Ok(TamperSample {
        image: Image::new(h, w, data)?,
        mask,
        tamper_type: TamperType::Splice,
        seed,
        object_aligned: aligned,
        offset: None,
    })
}

/// Source pixels of `m` translated by `(dy, dx)`, or `None` if any leaves the frame.
fn translate(m: &Mask, dy: isize, dx: isize) -> Option<Mask> {
    let (h, w) = (m.height(), m.width());
    let mut out = Mask::empty(h, w);
    for y in 0..h {
        for x in 0..w {
            if m.get(y, x) {
                let ty = y as isize + dy;
                let tx = x as isize + dx;
                if ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize {
                    return None;
                }
                out.set(ty as usize, tx as usize, true);
            }
        }
    }
    Some(out)
}

fn bbox(m: &Mask) -> (usize, usize, usize, usize) {
    let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(y, x) {
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y);
                x1 = x1.max(x);
            }
        }
    }
    (y0, x0, y1, x1)
}

/// Offsets with at least one odd component that keep the copy inside the
/// frame and disjoint from the source.
fn placements(src: &Mask) -> Vec<(isize, isize)> {
    let (h, w) = (src.height() as isize, src.width() as isize);
    let (y0, x0, y1, x1) = bbox(src);
    let (y0, x0, y1, x1) = (y0 as isize, x0 as isize, y1 as isize, x1 as isize);
    let pixels: Vec<(isize, isize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| src.get(y as usize, x as usize))
        .collect();
    let mut out = Vec::new();
    for dy in -y0..h - y1 {
        for dx in -x0..w - x1 {
            if dy % 2 == 0 && dx % 2 == 0 {
                continue;
            }
            let disjoint = pixels
                .iter()
                .all(|&(y, x)| !src.get((y + dy) as usize, (x + dx) as usize));
            if disjoint {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Copy a region to a disjoint location in the same image.
pub fn gen_copy_move(seed: u64, scene: &Scene) -> Result<TamperSample> {
    let img = &scene.image;
    let (h, w) = (img.height(), img.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ATTEMPTS {
        let (src, aligned) = match pick_region(&mut rng, &scene.objects, h, w, Mask::clone, |m| {
            area_ok(m) && m.area_fraction() <= MAX_AREA / 2.0
        }) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let cands = placements(&src);
        if cands.is_empty() {
            continue;
        }
        let (dy, dx) = cands[rng.random_range(0..cands.len())];
        let dst = translate(&src, dy, dx).expect("placement keeps the copy in frame");
        let mut data = img.data().to_vec();
        for y in 0..h {
            for x in 0..w {
                if src.get(y, x) {
                    let s = (y * w + x) * 3;
                    let t = (((y as isize + dy) as usize) * w + (x as isize + dx) as usize) * 3;
                    data.copy_within(s..s + 3, t);
                    // the source is disjoint from every destination pixel, so
                    // reading from `data` still sees original values
                }
            }
        }
        return Ok(TamperSample {
            image: Image::new(h, w, data)?,
            mask: dst,
            tamper_type: TamperType::CopyMove,
            seed,
            object_aligned: aligned,
            offset: Some((dy, dx)),
        });
    }
    Err(Error::Generation(format!(
        "could not place a non-overlapping copy after {ATTEMPTS} attempts"
    )))
}

pub const DIFFUSION_MIN_ITERS: usize = 200;
pub const DIFFUSION_MAX_ITERS: usize = 20_000;
pub const DIFFUSION_TOL: f64 = 1e-4;
const SOR_OMEGA: f64 = 1.8;

/// Harmonic fill of `mask` from its surroundings (successive over-relaxation
/// of the 4-neighbour mean). Returns the filled data and the iteration count.
pub fn diffuse_fill(img: &Image, mask: &Mask) -> (Vec<f64>, usize) {
    let (h, w) = (img.height(), img.width());
    let mut data = img.data().to_vec();
    let holes: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.get(y, x))
        .collect();
    let neighbours = |y: usize, x: usize| {
        let mut n = Vec::with_capacity(4);
        if y > 0 {
            n.push((y - 1) * w + x);
        }
        if y + 1 < h {
            n.push((y + 1) * w + x);
        }
        if x > 0 {
            n.push(y * w + x - 1);
        }
        if x + 1 < w {
            n.push(y * w + x + 1);
        }
        n
    };
    // start from the mean of the known pixels bordering the hole, written as
    // an offset from the first one so a constant border is reproduced exactly
    let border: Vec<usize> = holes
        .iter()
        .flat_map(|&(y, x)| neighbours(y, x))
        .filter(|&j| !mask.data()[j])
        .collect();
    if let Some(&b0) = border.first() {
        let mut init = [0.0; 3];
        for c in 0..3 {
            let base = data[b0 * 3 + c];
            let dev = border.iter().map(|&j| data[j * 3 + c] - base).sum::<f64>() / border.len() as f64;
            init[c] = base + dev;
        }
        for &(y, x) in &holes {
            data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&init);
        }
    }
    let nbrs: Vec<Vec<usize>> = holes.iter().map(|&(y, x)| neighbours(y, x)).collect();
    let mut iters = 0;
    while iters < DIFFUSION_MAX_ITERS {
        iters += 1;
        let mut residual: f64 = 0.0;
        for (&(y, x), nb) in holes.iter().zip(&nbrs) {
            let i = (y * w + x) * 3;
            for c in 0..3 {
                let v = data[i + c];
                // mean of deviations so that a constant field is an exact fixed point
                let d = nb.iter().map(|&j| data[j * 3 + c] - v).sum::<f64>() / nb.len() as f64;
                residual = residual.max(d.abs());
                data[i + c] = v + SOR_OMEGA * d;
            }
        }
        if iters >= DIFFUSION_MIN_ITERS && residual < DIFFUSION_TOL {
            break;
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    (data, iters)
}

/// Mean absolute step between filled pixels and their kept 4-neighbours.
pub fn seam_jump(img: &Image, mask: &Mask) -> f64 {
    let (h, w) = (img.height(), img.width());
    let (mut total, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let nb = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
            for (ny, nx) in nb {
                if ny < h && nx < w && !mask.get(ny, nx) {
                    for c in 0..3 {
                        total += (img.get(y, x, c) - img.get(ny, nx, c)).abs();
                        n += 1;
                    }
                }
            }
        }
    }
    if n == 0 { 0.0 } else { total / n as f64 }
}

/// Erase a region and fill it by diffusion from its boundary. Object regions
/// are dilated by 1–2 px so the fill starts from background pixels.
pub fn gen_inpaint(seed: u64, scene: &Scene) -> Result<TamperSample> {
    let img = &scene.image;
    let (h, w) = (img.height(), img.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grow = rng.random_range(1..=2);
    let (mask, aligned) = pick_region(&mut rng, &scene.objects, h, w, |m| m.dilate(grow), area_ok)?;
    let (data, _) = diffuse_fill(img, &mask);
    Ok(TamperSample {
        image: Image::new(h, w, data)?,
        mask,
        tamper_type: TamperType::Inpaint,
        seed,
        object_aligned: aligned,
        offset: None,
    })
}
