//! Orthonormal 2D DCT and the complementary high/low frequency split that
//! feeds the two encoders.
//!
//! The transform is global over the whole image (no 8×8 blocking). A
//! coefficient `(u, v)` belongs to the low band when `u + v ≤ ⌊τ·(H+W−2)⌋`
//! and to the high band otherwise, so the two bands partition the spectrum
//! and `x_h + x_l = x` holds up to rounding.

use std::f64::consts::PI;

use mesorch_tensor::gemm::{gemm, MatMut, MatRef};
use mesorch_tensor::Tensor;

use crate::grid::{Grid, Image};
use crate::{Error, Result};

/// Default low-band cutoff fraction.
pub const DEFAULT_CUTOFF: f64 = 1.0 / 16.0;

/// Orthonormal DCT-II basis for length `n`: row `k` is `α_k cos(π(2i+1)k / 2n)`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let a0 = (1.0 / n as f64).sqrt();
    let ak = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let alpha = if k == 0 { a0 } else { ak };
        for i in 0..n {
            m[k * n + i] = alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// Precomputed separable DCT for one `H×W` size.
pub struct DctPlan {
    height: usize,
    width: usize,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl DctPlan {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rows: dct_matrix(height),
            cols: dct_matrix(width),
        }
    }

    fn check(&self, g: &Grid) -> Result<()> {
        if g.height() != self.height || g.width() != self.width {
            return Err(Error::InvalidInput(format!(
                "grid {}x{} does not match plan {}x{}",
                g.height(),
                g.width(),
                self.height,
                self.width
            )));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in DCT input".into()));
        }
        Ok(())
    }

    /// `D_H · g · D_Wᵀ` when `inverse` is false, `D_Hᵀ · c · D_W` otherwise.
    fn apply(&self, g: &Grid, inverse: bool) -> Grid {
        let (h, w) = (self.height, self.width);
        let dh = MatRef::new(&self.rows, h, h);
        let dw = MatRef::new(&self.cols, w, w);
        let (left, right) = if inverse { (dh.t(), dw) } else { (dh, dw.t()) };
        let mut tmp = vec![0.0; h * w];
        gemm(left, MatRef::new(g.data(), h, w), MatMut::new(&mut tmp, h, w), 0.0);
        let mut out = vec![0.0; h * w];
        gemm(MatRef::new(&tmp, h, w), right, MatMut::new(&mut out, h, w), 0.0);
        Grid::new(h, w, out).expect("plan shape")
    }

    pub fn forward(&self, g: &Grid) -> Result<Grid> {
        self.check(g)?;
        Ok(self.apply(g, false))
    }

    pub fn inverse(&self, c: &Grid) -> Result<Grid> {
        self.check(c)?;
        Ok(self.apply(c, true))
    }
}

/// Orthonormal type-II 2D DCT.
pub fn dct2(channel: &Grid) -> Result<Grid> {
    DctPlan::new(channel.height(), channel.width()).forward(channel)
}

/// Inverse of [`dct2`] (type-III with orthonormal scaling).
pub fn idct2(coeffs: &Grid) -> Result<Grid> {
    DctPlan::new(coeffs.height(), coeffs.width()).inverse(coeffs)
}

/// Highest diagonal index `u + v` kept in the low band.
pub fn low_band_limit(height: usize, width: usize, cutoff: f64) -> usize {
    (cutoff * (height + width - 2) as f64).floor() as usize
}

/// `true` where a coefficient belongs to the low band.
pub fn low_mask(height: usize, width: usize, cutoff: f64) -> Vec<bool> {
    let limit = low_band_limit(height, width, cutoff);
    (0..height)
        .flat_map(|u| (0..width).map(move |v| u + v <= limit))
        .collect()
}

pub fn validate_cutoff(cutoff: f64) -> Result<()> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::Config(format!("frequency cutoff must lie in (0, 1), got {cutoff}")));
    }
    Ok(())
}

/// High- and low-frequency components of an image, each `H×W×3`, interleaved.
///
/// Components are signed and not clamped.
#[derive(Clone, Debug)]
pub struct FrequencyPair {
    pub height: usize,
    pub width: usize,
    pub high: Vec<f64>,
    pub low: Vec<f64>,
}

impl FrequencyPair {
    pub fn high_channel(&self, c: usize) -> Grid {
        Grid::new(self.height, self.width, self.high.iter().skip(c).step_by(3).copied().collect())
            .expect("pair shape")
    }

    pub fn low_channel(&self, c: usize) -> Grid {
        Grid::new(self.height, self.width, self.low.iter().skip(c).step_by(3).copied().collect())
            .expect("pair shape")
    }
}

pub fn split_frequencies(image: &Image, cutoff: f64) -> Result<FrequencyPair> {
    validate_cutoff(cutoff)?;
    let (h, w) = (image.height(), image.width());
    let plan = DctPlan::new(h, w);
    let mask = low_mask(h, w, cutoff);
    let mut high = vec![0.0; h * w * 3];
    let mut low = vec![0.0; h * w * 3];
    for c in 0..3 {
        let coeffs = plan.forward(&image.channel(c))?;
        let mut lo = coeffs.clone();
        let mut hi = coeffs;
        for (i, &is_low) in mask.iter().enumerate() {
            if is_low {
                hi.data_mut()[i] = 0.0;
            } else {
                lo.data_mut()[i] = 0.0;
            }
        }
        let lo = plan.inverse(&lo)?;
        let hi = plan.inverse(&hi)?;
        for i in 0..h * w {
            low[i * 3 + c] = lo.data()[i];
            high[i * 3 + c] = hi.data()[i];
        }
    }
    Ok(FrequencyPair {
        height: h,
        width: w,
        high,
        low,
    })
}

/// Channel-wise concatenations fed to the three sub-networks.
///
/// Each tensor is `[1, H, W, C]` with the original image in channels 0–2.
#[derive(Clone, Debug)]
pub struct EnhancedInput {
    /// `{x, x_h}`, 6 channels.
    pub local: Tensor,
    /// `{x, x_l}`, 6 channels.
    pub global: Tensor,
    /// `{x, x_h, x_l}`, 9 channels.
    pub weight: Tensor,
}

pub fn make_enhanced_inputs(image: &Image, cutoff: f64) -> Result<EnhancedInput> {
    let pair = split_frequencies(image, cutoff)?;
    let (h, w) = (image.height(), image.width());
    let shape3 = [1, h, w, 3];
    let x = image.to_tensor();
    let hi = Tensor::from_vec(&shape3, pair.high);
    let lo = Tensor::from_vec(&shape3, pair.low);
    Ok(EnhancedInput {
        local: Tensor::concat_last(&[&x, &hi]),
        global: Tensor::concat_last(&[&x, &lo]),
        weight: Tensor::concat_last(&[&x, &hi, &lo]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct O(H²W²) evaluation of the orthonormal DCT-II double sum.
    fn brute_dct(g: &Grid) -> Grid {
        let (h, w) = (g.height(), g.width());
        let alpha = |k: usize, n: usize| {
            if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            }
        };
        Grid::from_fn(h, w, |u, v| {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += g.get(y, x)
                        * (PI * (2 * y + 1) as f64 * u as f64 / (2 * h) as f64).cos()
                        * (PI * (2 * x + 1) as f64 * v as f64 / (2 * w) as f64).cos();
                }
            }
            alpha(u, h) * alpha(v, w) * acc
        })
    }

    fn image_from(h: usize, w: usize, vals: &[f64]) -> Image {
        Image::new(h, w, vals.to_vec()).unwrap()
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let c = dct2(&Grid::filled(8, 8, 0.3)).unwrap();
        assert!((c.get(0, 0) - 8.0 * 0.3).abs() < 1e-12);
        assert!(c.data()[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn impulse_matches_brute_force_table() {
        let mut g = Grid::zeros(4, 4);
        g.set(0, 0, 1.0);
        let fast = dct2(&g).unwrap();
        let slow = brute_dct(&g);
        assert!(fast.max_abs_diff(&slow) < 1e-12);
        // frozen from the brute-force sum: α_u α_v cos(πu/8) cos(πv/8)
        assert!((fast.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((fast.get(1, 0) - 0.326_640_741_219_094_1).abs() < 1e-12);
        assert!((fast.get(1, 1) - 0.426_776_695_296_636_9).abs() < 1e-12);
        assert!((fast.get(3, 3) - 0.073_223_304_703_363_1).abs() < 1e-12);
    }

    #[test]
    fn brute_force_agrees_on_rectangular_grid() {
        let g = Grid::from_fn(5, 7, |y, x| ((y * 7 + x) as f64 * 0.61).sin());
        assert!(dct2(&g).unwrap().max_abs_diff(&brute_dct(&g)) < 1e-12);
    }

    #[test]
    fn idct_edge_cases() {
        let z = idct2(&Grid::zeros(6, 6)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let mut dc = Grid::zeros(6, 4);
        dc.set(0, 0, (24.0f64).sqrt());
        let ones = idct2(&dc).unwrap();
        assert!(ones.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn non_finite_rejected() {
        let mut g = Grid::zeros(4, 4);
        g.set(1, 1, f64::INFINITY);
        assert!(matches!(dct2(&g), Err(Error::InvalidInput(_))));
        assert!(matches!(idct2(&g), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn cutoff_out_of_range_is_config_error() {
        let img = Image::filled(8, 8, [0.5; 3]).unwrap();
        for tau in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(matches!(split_frequencies(&img, tau), Err(Error::Config(_))));
        }
    }

    #[test]
    fn constant_image_is_all_low() {
        let img = Image::filled(16, 16, [0.2, 0.5, 0.9]).unwrap();
        let pair = split_frequencies(&img, 0.3).unwrap();
        assert!(pair.high.iter().all(|v| v.abs() < 1e-6));
        for (l, x) in pair.low.iter().zip(img.data()) {
            assert!((l - x).abs() < 1e-6);
        }
    }

    #[test]
    fn checkerboard_splits_into_mean_and_alternation() {
        let vals: Vec<f64> = (0..16 * 16)
            .flat_map(|i| {
                let v = ((i / 16 + i % 16) % 2) as f64;
                [v, v, v]
            })
            .collect();
        let img = image_from(16, 16, &vals);
        let pair = split_frequencies(&img, 1.0 / 16.0).unwrap();

        // oracle: brute-force coefficients, masked by hand (limit ⌊30/16⌋ = 1)
        let coeffs = brute_dct(&img.channel(0));
        let mut lo = coeffs.clone();
        for u in 0..16 {
            for v in 0..16 {
                if u + v > 1 {
                    lo.set(u, v, 0.0);
                }
            }
        }
        let low_ref = idct2(&lo).unwrap();
        assert!(pair.low_channel(0).max_abs_diff(&low_ref) < 1e-9);
        assert!(pair.low.iter().all(|v| (v - 0.5).abs() < 1e-9));
        for (i, hv) in pair.high.iter().enumerate() {
            let p = i / 3;
            let expect = if (p / 16 + p % 16) % 2 == 1 { 0.5 } else { -0.5 };
            assert!((hv - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn band_energies_partition_total() {
        let vals: Vec<f64> = (0..32 * 32 * 3).map(|i| ((i as f64) * 0.7137).sin().abs()).collect();
        let img = image_from(32, 32, &vals);
        let pair = split_frequencies(&img, 1.0 / 16.0).unwrap();
        let mask = low_mask(32, 32, 1.0 / 16.0);
        for c in 0..3 {
            let coeffs = brute_dct(&img.channel(c));
            let (mut e_lo, mut e_hi) = (0.0, 0.0);
            for (v, &is_low) in coeffs.data().iter().zip(&mask) {
                if is_low {
                    e_lo += v * v;
                } else {
                    e_hi += v * v;
                }
            }
            let lo = pair.low_channel(c).energy();
            let hi = pair.high_channel(c).energy();
            assert!((lo - e_lo).abs() < 1e-9 * e_lo.max(1.0));
            assert!((hi - e_hi).abs() < 1e-9 * e_hi.max(1.0));
            assert!((lo + hi - img.channel(c).energy()).abs() < 1e-9 * lo.max(1.0));
        }
    }

    #[test]
    fn enhanced_inputs_layout() {
        let vals: Vec<f64> = (0..16 * 16 * 3).map(|i| ((i as f64) * 0.31).cos() * 0.5 + 0.5).collect();
        let img = image_from(16, 16, &vals);
        let e = make_enhanced_inputs(&img, DEFAULT_CUTOFF).unwrap();
        assert_eq!(e.local.shape(), &[1, 16, 16, 6]);
        assert_eq!(e.global.shape(), &[1, 16, 16, 6]);
        assert_eq!(e.weight.shape(), &[1, 16, 16, 9]);
        assert_eq!(e.local.channels(0, 3).data(), img.data());
        assert_eq!(e.global.channels(0, 3).data(), img.data());
        assert_eq!(e.weight.channels(0, 3).data(), img.data());
        let sum = e.weight.channels(3, 3).zip_map(&e.weight.channels(6, 3), |a, b| a + b);
        assert!(sum.max_abs_diff(&img.to_tensor()) < 1e-5);

        let flat = Image::filled(16, 16, [0.4, 0.1, 0.7]).unwrap();
        let e = make_enhanced_inputs(&flat, DEFAULT_CUTOFF).unwrap();
        assert!(e.global.channels(3, 3).max_abs_diff(&flat.to_tensor()) < 1e-9);
    }

    #[test]
    fn masks_partition_the_spectrum() {
        for &(h, w, tau) in &[(8, 8, 0.1), (16, 32, 0.5), (64, 64, DEFAULT_CUTOFF)] {
            let lo = low_mask(h, w, tau);
            let n_lo = lo.iter().filter(|&&b| b).count();
            assert!(n_lo >= 1 && n_lo < h * w);
        }
    }

    fn grid_strategy() -> impl Strategy<Value = Grid> {
        (1usize..20, 1usize..20).prop_flat_map(|(h, w)| {
            prop::collection::vec(-10.0f64..10.0, h * w).prop_map(move |d| Grid::new(h, w, d).unwrap())
        })
    }

    fn image_strategy() -> impl Strategy<Value = Image> {
        (8usize..24, 8usize..24).prop_flat_map(|(h, w)| {
            prop::collection::vec(0.0f64..=1.0, h * w * 3).prop_map(move |d| Image::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_and_parseval(g in grid_strategy()) {
            let c = dct2(&g).unwrap();
            prop_assert!(idct2(&c).unwrap().max_abs_diff(&g) < 1e-6);
            let (e, ec) = (g.energy(), c.energy());
            prop_assert!((e - ec).abs() <= 1e-6 * e.max(1e-12));
            prop_assert!(dct2(&idct2(&g).unwrap()).unwrap().max_abs_diff(&g) < 1e-6);
        }

        #[test]
        fn complementary_bands(img in image_strategy(), tau in 0.01f64..0.99) {
            let pair = split_frequencies(&img, tau).unwrap();
            for i in 0..img.data().len() {
                prop_assert!((pair.high[i] + pair.low[i] - img.data()[i]).abs() < 1e-5);
            }
        }

        #[test]
        fn split_is_linear(
            (a, b) in (8usize..16, 8usize..16).prop_flat_map(|(h, w)| {
                let v = prop::collection::vec(0.0f64..=1.0, h * w * 3);
                (v.clone(), v).prop_map(move |(x, y)| (Image::new(h, w, x).unwrap(), Image::new(h, w, y).unwrap()))
            }),
            s in 0.0f64..=0.5,
        ) {
            // s·a + (1−s)·... stays in [0, 1] so the combination is a valid image
            let t = 1.0 - s;
            let mix: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| s * x + t * y).collect();
            let mix = Image::new(a.height(), a.width(), mix).unwrap();
            let (pa, pb, pm) = (
                split_frequencies(&a, 0.2).unwrap(),
                split_frequencies(&b, 0.2).unwrap(),
                split_frequencies(&mix, 0.2).unwrap(),
            );
            for i in 0..pm.high.len() {
                prop_assert!((pm.high[i] - (s * pa.high[i] + t * pb.high[i])).abs() < 1e-9);
                prop_assert!((pm.low[i] - (s * pa.low[i] + t * pb.low[i])).abs() < 1e-9);
            }
        }
    }
}
