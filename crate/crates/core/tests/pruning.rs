use mesorch_core::freq_dct::make_enhanced_inputs;
use mesorch_core::mesorch_net::*;
use mesorch_core::pruning::*;
use mesorch_core::train::{TrainConfig, TrainOptions};
use mesorch_core::{Error, Image};
use mesorch_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn images(n: usize, h: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Image::new(h, h, (0..h * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect()
}

/// Micro model whose weighting head starts biased against the given branches.
fn biased_model(low: &[usize], seed: u64) -> Mesorch {
    let mut m = Mesorch::new(MesorchConfig::micro(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in m.params.get_mut("weight.head.w").unwrap().value.data_mut() {
        *v = rng.random_range(-0.3f32..0.3) as f64;
    }
    let b = m.params.get_mut("weight.head.b").unwrap();
    for &i in low {
        b.value.data_mut()[i] = -4.0;
    }
    m
}

#[test]
fn zero_init_head_gives_uniform_means() {
    let m = Mesorch::new(MesorchConfig::micro(), 0).unwrap();
    let w = mean_scale_weights(&m, &images(3, 32, 1)).unwrap();
    assert_eq!(w.values, vec![0.125; 8]);
    assert_eq!(w.pixel_count, 3 * 8 * 8);
    let (p, _) = prune(&m, &w, &PruneConfig::with_epsilon(0.05)).unwrap();
    assert_eq!(p.branches.len(), 8);
}

#[test]
fn two_by_two_map_mean_by_direct_summation() {
    // four pixels, eight channels each
    let px: [[f64; 8]; 4] = [
        [0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
        [0.1, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
        [0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
        [0.125; 8],
    ];
    let t = Tensor::from_vec(&[1, 2, 2, 8], px.iter().flatten().copied().collect());
    let (mean, n) = average_weights(&[t]).unwrap();
    assert_eq!(n, 4);
    let expect = [0.13125, 0.13125, 0.20625, 0.20625, 0.08125, 0.08125, 0.08125, 0.08125];
    for (a, b) in mean.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn threshold_examples() {
    let w = [0.01, 0.19, 0.20, 0.05, 0.15, 0.15, 0.15, 0.10];
    let (pruned, keep, guard) = select_branches(&w, 0.06, 1);
    assert_eq!(pruned, vec![0, 3]);
    assert_eq!(keep.len(), 6);
    assert!(!guard);
    assert_eq!(select_branches(&[0.125; 8], 0.05, 1).0, Vec::<usize>::new());
    assert_eq!(select_branches(&w, 0.0, 1).0, Vec::<usize>::new());
    let (pruned, keep, guard) = select_branches(&w, 1.0, 1);
    assert!(guard);
    assert_eq!(keep, vec![2]);
    assert_eq!(pruned.len(), 7);
    let (_, keep, guard) = select_branches(&w, 0.9, 3);
    assert!(guard);
    assert_eq!(keep, vec![1, 2, 4]);
}

fn simplex(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

proptest! {
    #[test]
    fn pruning_is_monotone_in_epsilon(
        raw in proptest::collection::vec(0.001f64..1.0, 8),
        e1 in 0.0f64..1.0,
        e2 in 0.0f64..1.0,
        min in 1usize..4,
    ) {
        let w = simplex(raw);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (p1, k1, _) = select_branches(&w, lo, min);
        let (p2, k2, _) = select_branches(&w, hi, min);
        prop_assert!(p1.iter().all(|i| p2.contains(i)));
        for (p, k) in [(&p1, &k1), (&p2, &k2)] {
            prop_assert_eq!(p.len() + k.len(), 8);
            prop_assert!(p.iter().all(|i| !k.contains(i)));
            prop_assert!(k.len() >= min);
        }
    }
}

#[test]
fn structural_removal_shrinks_cost() {
    // L1 and L4 pushed down: the local encoder loses its last stage
    let m = biased_model(&[0, 3], 7);
    let calib = images(4, 32, 2);
    let mean = mean_scale_weights(&m, &calib).unwrap();
    assert!((mean.values.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    let (p, r) = prune(&m, &mean, &PruneConfig::default()).unwrap();
    assert_eq!(r.pruned_branches, vec!["L1", "L4"]);
    assert_eq!(r.pruned_indices, vec![1, 4]);
    assert_eq!(r.surviving_indices, vec![2, 3, 5, 6, 7, 8]);
    assert!(!r.guard_engaged);
    assert!(r.param_delta > 0 && r.flop_delta > 0);
    assert_eq!(r.params_after, p.param_count());
    assert_eq!(r.flops_after, p.cost().flops);
    assert_eq!(p.branches.stages_needed(Encoder::Local), 3);
    assert!(!p.params.contains("dec.L1.proj.w"));
    assert!(!p.params.contains("local.s3.out.g"));
    assert!(p.params.contains("global.s3.out.g"));
    assert_eq!(p.params.get("weight.head.w").unwrap().value.shape(), &[1, 1, 4, 6]);
    // the structure checks out against the plan and survives a checkpoint
    let dir = tempfile::tempdir().unwrap();
    Checkpoint::new(p.clone(), 7).save(dir.path()).unwrap();
    assert_eq!(Checkpoint::load(dir.path()).unwrap().model, p);
    assert!(matches!(p.local_encode(&Tensor::zeros(&[1, 32, 32, 6])), Err(Error::NotApplicable(_))));
}

#[test]
fn pruned_forward_is_the_restricted_convex_combination() {
    let m = biased_model(&[1, 5], 11);
    let img = &images(1, 32, 3)[0];
    let mean = mean_scale_weights(&m, std::slice::from_ref(img)).unwrap();
    let (p, r) = prune(&m, &mean, &PruneConfig::default()).unwrap();
    assert_eq!(r.pruned_branches, vec!["L2", "G2"]);
    let full = m.forward(img).unwrap();
    let part = p.forward(img).unwrap();
    let keep: Vec<usize> = r.surviving_indices.iter().map(|i| i - 1).collect();
    for (j, &i) in keep.iter().enumerate() {
        assert_eq!(part.preds.maps[j], full.preds.maps[i]);
    }
    let wf = full.weights.unwrap().weights;
    let wp = part.weights.unwrap().weights;
    let k = keep.len();
    for (px, (a, b)) in wf.data().chunks_exact(8).zip(wp.data().chunks_exact(k)).enumerate() {
        let total: f64 = keep.iter().map(|&i| a[i]).sum();
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        let mut fused = 0.0;
        for (j, &i) in keep.iter().enumerate() {
            assert!((b[j] - a[i] / total).abs() < 1e-12);
            fused += b[j] * full.preds.maps[i].data()[px];
        }
        assert!((part.output.summed.data()[px] - fused).abs() < 1e-12);
    }
}

#[test]
fn frozen_weighting_drops_the_module() {
    let m = biased_model(&[4, 5, 6, 7], 13);
    let calib = images(2, 32, 4);
    let mean = mean_scale_weights(&m, &calib).unwrap();
    let cfg = PruneConfig {
        weighting: PostPrune::Frozen,
        ..PruneConfig::default()
    };
    let (p, r) = prune(&m, &mean, &cfg).unwrap();
    assert_eq!(r.surviving_branches, vec!["L1", "L2", "L3", "L4"]);
    assert_eq!(p.branches.stages_needed(Encoder::Global), 0);
    assert!(p.params.names().all(|n| !n.starts_with("weight.") && !n.starts_with("global.")));
    let Weighting::Frozen(w) = &p.weighting else { panic!("expected frozen weights") };
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let f = p.forward(&calib[0]).unwrap();
    for px in 0..64 {
        let v: f64 = (0..4).map(|j| w[j] * f.preds.maps[j].data()[px]).sum();
        assert!((f.output.summed.data()[px] - v).abs() < 1e-12);
    }
    assert!(matches!(mean_scale_weights(&p, &calib), Err(Error::NotApplicable(_))));
}

#[test]
fn guard_keeps_the_heaviest_branch() {
    let m = biased_model(&[0, 1, 2, 4, 5, 6, 7], 17);
    let mean = mean_scale_weights(&m, &images(2, 32, 5)).unwrap();
    let (p, r) = prune(&m, &mean, &PruneConfig::with_epsilon(0.9)).unwrap();
    assert!(r.guard_engaged);
    assert_eq!(r.surviving_branches, vec!["L4"]);
    assert_eq!(p.branches.len(), 1);
    assert!(p.forward(&images(1, 32, 6)[0]).unwrap().output.full.is_finite());
}

#[test]
fn precondition_errors() {
    let m = Mesorch::new(MesorchConfig::micro(), 0).unwrap();
    assert!(matches!(mean_scale_weights(&m, &[]), Err(Error::InvalidInput(_))));
    let uniform = Mesorch::new(
        MesorchConfig {
            fusion_mode: FusionMode::Uniform,
            ..MesorchConfig::micro()
        },
        0,
    )
    .unwrap();
    assert!(matches!(mean_scale_weights(&uniform, &images(1, 32, 0)), Err(Error::NotApplicable(_))));
    let mean = mean_scale_weights(&m, &images(1, 32, 0)).unwrap();
    assert!(matches!(prune(&m, &mean, &PruneConfig::with_epsilon(1.5)), Err(Error::Config(_))));
    let zero_guard = PruneConfig {
        min_surviving_branches: 0,
        ..PruneConfig::default()
    };
    assert!(matches!(prune(&m, &mean, &zero_guard), Err(Error::Config(_))));
    let data = vec![];
    assert!(matches!(
        renormalize_and_finetune(m, &data, &TrainConfig::toy(), TrainOptions::default()),
        Err(Error::NotApplicable(_))
    ));
}

#[test]
fn report_serializes() {
    let m = biased_model(&[2], 19);
    let mean = mean_scale_weights(&m, &images(1, 32, 7)).unwrap();
    let (_, r) = prune(&m, &mean, &PruneConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prune_report.json");
    r.write_json(&path).unwrap();
    let back: PruneReport = mesorch_core::io::read_json(&path).unwrap();
    assert_eq!(back, r);
    assert!((r.epsilon - 0.0625).abs() < 1e-15);
}

#[test]
fn enhanced_input_weights_match_the_model_path() {
    let m = biased_model(&[], 23);
    let img = &images(1, 32, 8)[0];
    let direct = m.adaptive_weights(&make_enhanced_inputs(img, m.config.cutoff).unwrap().weight).unwrap();
    let mean = mean_scale_weights(&m, std::slice::from_ref(img)).unwrap();
    let (avg, _) = average_weights(&[direct.weights]).unwrap();
    assert_eq!(mean.values, avg);
}
