use mesorch_core::synthdata::*;
use mesorch_core::{Error, Image, Mask};
use proptest::prelude::*;

const S: usize = 64;

fn host(seed: u64) -> Scene {
    gen_scene(seed, S, S, GridPhase::ALIGNED).unwrap()
}

fn donor(seed: u64) -> Scene {
    gen_scene(seed, S, S, GridPhase { dy: 1, dx: 0 }).unwrap()
}

#[test]
fn base_images_are_deterministic_and_distinct() {
    assert_eq!(gen_base_image(5, S, S).unwrap(), gen_base_image(5, S, S).unwrap());
    for s in 0..100u64 {
        let a = gen_base_image(2 * s, S, S).unwrap();
        let b = gen_base_image(2 * s + 1, S, S).unwrap();
        assert!(a.mean_abs_diff(&b) > 0.01, "seeds {} / {}", 2 * s, 2 * s + 1);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(gen_base_image(0, 16, 64).is_err());
}

#[test]
fn aligned_scenes_carry_the_reference_pattern() {
    // correlating with the aligned pattern separates the two phases
    let corr = |img: &Image, p: GridPhase| -> f64 {
        let mut acc = 0.0;
        for y in 0..S {
            for x in 0..S {
                for c in 0..3 {
                    acc += img.get(y, x, c) * trace_value(p, y, x, c);
                }
            }
        }
        acc / (S * S) as f64
    };
    for seed in 0..20 {
        let a = host(seed).image;
        let b = donor(seed).image;
        assert!(corr(&a, GridPhase::ALIGNED) > corr(&b, GridPhase::ALIGNED) + 0.01);
    }
}

#[test]
fn splice_composition_contract() {
    for seed in 0..50 {
        let (d, h) = (donor(1000 + seed), host(seed));
        let s = gen_splice(seed, &d, &h.image).unwrap();
        for y in 0..S {
            for x in 0..S {
                let expect = if s.mask.get(y, x) { d.image.pixel(y, x) } else { h.image.pixel(y, x) };
                assert_eq!(s.image.pixel(y, x), expect);
            }
        }
        assert_eq!(s.tamper_type, TamperType::Splice);
    }
}

#[test]
fn splice_mask_area_stays_in_range() {
    for seed in 0..1000 {
        let (d, h) = (donor(50_000 + seed), host(seed));
        let s = gen_splice(seed, &d, &h.image).unwrap();
        let a = s.mask.area_fraction();
        assert!((MIN_AREA..=MAX_AREA).contains(&a), "seed {seed}: {a}");
    }
}

#[test]
fn splice_rejects_size_mismatch() {
    let d = gen_scene(0, 32, 32, GridPhase::ALIGNED).unwrap();
    assert!(matches!(gen_splice(0, &d, &host(0).image), Err(Error::InvalidInput(_))));
}

#[test]
fn copy_move_contract() {
    for seed in 0..60 {
        let h = host(seed);
        let s = gen_copy_move(seed, &h).unwrap();
        let (dy, dx) = s.offset.unwrap();
        assert!(dy % 2 != 0 || dx % 2 != 0);
        let mut src = Mask::empty(S, S);
        for y in 0..S {
            for x in 0..S {
                if s.mask.get(y, x) {
                    let (sy, sx) = ((y as isize - dy) as usize, (x as isize - dx) as usize);
                    src.set(sy, sx, true);
                    assert_eq!(s.image.pixel(y, x), h.image.pixel(sy, sx));
                } else {
                    assert_eq!(s.image.pixel(y, x), h.image.pixel(y, x));
                }
            }
        }
        assert!(!src.intersects(&s.mask));
        assert!((MIN_AREA..=MAX_AREA).contains(&s.mask.area_fraction()));
    }
}

#[test]
fn copy_move_fails_when_nothing_fits() {
    // the only object covers the whole frame and free-form regions are retried
    let img = Image::filled(32, 32, [0.4; 3]).unwrap();
    let scene = Scene {
        image: img,
        objects: vec![Mask::from_fn(32, 32, |_, _| true)],
    };
    // free-form regions can still succeed, so only check the error type when it fails
    for seed in 0..20 {
        if let Err(e) = gen_copy_move(seed, &scene) {
            assert!(matches!(e, Error::Generation(_)));
        }
    }
}

#[test]
fn inpaint_of_constant_image_is_identity() {
    let img = Image::filled(S, S, [0.3, 0.6, 0.9]).unwrap();
    let scene = Scene::plain(img.clone());
    let s = gen_inpaint(3, &scene).unwrap();
    assert_eq!(s.image, img);
    assert!(s.mask.count() > 0);
}

#[test]
fn inpaint_is_continuous_and_local() {
    for seed in 0..40 {
        let h = host(seed);
        let s = gen_inpaint(seed, &h).unwrap();
        let m = &s.mask;
        let jump = seam_jump(&s.image, m);
        assert!(jump < 0.06, "seed {seed}: mean seam jump {jump}");
        // the fill stays within the range of the kept border (maximum principle)
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for y in 0..S {
            for x in 0..S {
                if m.get(y, x) {
                    continue;
                }
                assert_eq!(s.image.pixel(y, x), h.image.pixel(y, x));
                let near = m.get(y.saturating_sub(1), x)
                    || (y + 1 < S && m.get(y + 1, x))
                    || m.get(y, x.saturating_sub(1))
                    || (x + 1 < S && m.get(y, x + 1));
                if near {
                    for c in 0..3 {
                        lo[c] = lo[c].min(h.image.get(y, x, c));
                        hi[c] = hi[c].max(h.image.get(y, x, c));
                    }
                }
            }
        }
        for y in 0..S {
            for x in 0..S {
                if m.get(y, x) {
                    for c in 0..3 {
                        let v = s.image.get(y, x, c);
                        assert!(v >= lo[c] - 1e-3 && v <= hi[c] + 1e-3, "seed {seed}: {v} outside [{}, {}]", lo[c], hi[c]);
                    }
                }
            }
        }
    }
}

#[test]
fn diffusion_converges() {
    let h = host(9);
    let m = Mask::from_fn(S, S, |y, x| (10..40).contains(&y) && (12..44).contains(&x));
    let (filled, iters) = diffuse_fill(&h.image, &m);
    assert!(iters >= DIFFUSION_MIN_ITERS);
    // discrete Laplacian vanishes inside the hole
    let at = |y: usize, x: usize, c: usize| filled[(y * S + x) * 3 + c];
    for y in 11..39 {
        for x in 13..43 {
            for c in 0..3 {
                let lap = at(y - 1, x, c) + at(y + 1, x, c) + at(y, x - 1, c) + at(y, x + 1, c) - 4.0 * at(y, x, c);
                assert!(lap.abs() < 1e-3);
            }
        }
    }
}

#[test]
fn tampered_pixels_lie_inside_the_mask() {
    for i in 0..60 {
        let seed = 7_000 + i;
        let s = generate_sample(seed, S, S).unwrap();
        let orig = gen_scene(mesorch_core::seed::derive_seed(seed, "host"), S, S, GridPhase::ALIGNED)
            .unwrap()
            .image;
        for y in 0..S {
            for x in 0..S {
                if s.image.pixel(y, x) != orig.pixel(y, x) {
                    assert!(s.mask.get(y, x), "seed {seed} ({:?}) changed ({y},{x})", s.tamper_type);
                }
            }
        }
    }
}

#[test]
fn mix_of_types_and_object_alignment() {
    let samples: Vec<_> = (0..300).map(|i| generate_sample(90_000 + i, S, S).unwrap()).collect();
    for t in TamperType::ALL {
        let n = samples.iter().filter(|s| s.tamper_type == t).count();
        assert!((70..=130).contains(&n), "{t:?}: {n}");
    }
    let aligned = samples.iter().filter(|s| s.object_aligned).count() as f64 / 300.0;
    assert!((0.7..=0.88).contains(&aligned), "object-aligned rate {aligned}");
}

#[test]
fn perturb_none_is_identity_and_levels_are_checked() {
    let img = gen_base_image(1, S, S).unwrap();
    assert_eq!(perturb(&img, PerturbSpec::NONE, 0).unwrap(), img);
    assert!(matches!(PerturbSpec::new(PerturbKind::GaussNoise, 5), Err(Error::Config(_))));
    assert!(matches!(PerturbSpec::new(PerturbKind::Jpeg, 95), Err(Error::Config(_))));
    assert_eq!(PerturbSpec::grid().len(), 19);
}

#[test]
fn blur_kernel_and_constant_image() {
    assert!((blur_sigma(3) - 0.8).abs() < 1e-15);
    assert!((blur_sigma(7) - 1.4).abs() < 1e-12);
    for k in BLUR_LEVELS {
        let kern = gaussian_kernel(k as usize);
        assert!((kern.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let img = Image::filled(S, S, [0.25, 0.5, 0.75]).unwrap();
        let out = perturb(&img, PerturbSpec::new(PerturbKind::GaussBlur, k).unwrap(), 0).unwrap();
        assert!(out.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn blur_matches_direct_reflect101_convolution() {
    let img = gen_base_image(4, 32, 32).unwrap();
    let k = 7usize;
    let out = gauss_blur(&img, k);
    let kern = gaussian_kernel(k);
    let refl = |i: isize, n: isize| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    for &(y, x) in &[(0usize, 0usize), (1, 30), (16, 16), (31, 2)] {
        for c in 0..3 {
            let mut acc = 0.0;
            for (a, ka) in kern.iter().enumerate() {
                for (b, kb) in kern.iter().enumerate() {
                    let yy = refl(y as isize + a as isize - 3, 32);
                    let xx = refl(x as isize + b as isize - 3, 32);
                    acc += ka * kb * img.get(yy, xx, c);
                }
            }
            assert!((out.get(y, x, c) - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn noise_variance_matches_level() {
    let img = Image::filled(1000, 334, [0.5; 3]).unwrap();
    let out = perturb(&img, PerturbSpec::new(PerturbKind::GaussNoise, 23).unwrap(), 42).unwrap();
    let n = out.data().len() as f64;
    let mean = out.data().iter().sum::<f64>() / n;
    let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let target = (23.0f64 / 255.0).powi(2);
    assert!((var / target - 1.0).abs() < 0.1, "{var} vs {target}");
}

#[test]
fn jpeg_error_grows_as_quality_drops() {
    // smooth content: the acquisition pattern itself does not survive 4:2:0 chroma
    let img = gauss_blur(&gen_base_image(11, S, S).unwrap(), 7);
    let e100 = jpeg_round_trip(&img, 100).unwrap().mean_abs_diff(&img);
    let e50 = jpeg_round_trip(&img, 50).unwrap().mean_abs_diff(&img);
    assert!(e100 < 0.02, "{e100}");
    assert!(e50 > e100);
}

#[test]
fn split_counts() {
    assert_eq!(SplitFractions::default().counts(200).unwrap(), [140, 20, 20, 20]);
    assert!(SplitFractions([0.5, 0.5, 0.5, 0.0]).counts(10).is_err());
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_splits(3, 32, 32, [3, 1, 2, 1]).unwrap();
    let man = write_dataset(dir.path(), 3, &samples).unwrap();
    assert_eq!(man.len(), samples.len());
    let ds = read_dataset(dir.path()).unwrap();
    assert_eq!(ds.manifest, man);
    let mut loaded = Vec::new();
    for split in Split::ALL {
        loaded.extend(ds.load_split(split).unwrap().into_iter().map(|l| (split, l)));
    }
    assert_eq!(loaded.len(), samples.len());
    for ((sa, s), (sb, l)) in samples.iter().zip(&loaded) {
        assert_eq!(sa, sb);
        assert_eq!(l.mask, s.mask);
        let err = l
            .image
            .data()
            .iter()
            .zip(s.image.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.5 / 255.0 + 1e-12);
        assert_eq!(l.record.seed, s.seed);
    }
    std::fs::remove_file(dir.path().join(&man.records(Split::Test)[0].image)).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Io { .. })));
}

#[test]
fn generation_is_a_pure_function_of_the_seed() {
    let a = generate_splits(17, 32, 32, [2, 1, 1, 1]).unwrap();
    let b = generate_splits(17, 32, 32, [2, 1, 1, 1]).unwrap();
    for ((_, x), (_, y)) in a.iter().zip(&b) {
        assert_eq!(x.image, y.image);
        assert_eq!(x.mask, y.mask);
    }
    let seeds: std::collections::HashSet<_> = a.iter().map(|(_, s)| s.seed).collect();
    assert_eq!(seeds.len(), a.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn perturbations_keep_range_and_size(seed in 0u64..1000, idx in 0usize..19) {
        let img = gen_base_image(seed, 32, 32).unwrap();
        let spec = PerturbSpec::grid()[idx];
        let out = perturb(&img, spec, seed).unwrap();
        prop_assert_eq!((out.height(), out.width()), (32, 32));
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
