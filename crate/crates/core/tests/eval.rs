use mesorch_core::eval::*;
use mesorch_core::metrics::{permute_f1, pixel_f1, Aggregation};
use mesorch_core::mesorch_net::{Mesorch, MesorchConfig};
use mesorch_core::synthdata::generate_sample;
use mesorch_core::Error;

fn data(n: usize, seed: u64) -> Vec<LabelledImage> {
    (0..n)
        .map(|i| {
            let s = generate_sample(seed + i as u64, 32, 32).unwrap();
            LabelledImage {
                id: format!("img_{i:03}"),
                image: s.image,
                mask: s.mask,
            }
        })
        .collect()
}

fn model() -> Mesorch {
    Mesorch::new(MesorchConfig::micro(), 5).unwrap()
}

#[test]
fn batched_metrics_match_single_image_predictions() {
    let m = model();
    // more than one inference batch
    let d = data(EVAL_BATCH + 3, 100);
    let r = evaluate(&m, &d, 0.5, Aggregation::PerImage).unwrap();
    assert_eq!(r.count, d.len());
    for (li, im) in d.iter().zip(&r.per_image) {
        let p = predict(&m, &li.image).unwrap();
        assert_eq!(im.id, li.id);
        assert_eq!(im.f1, pixel_f1(&p, &li.mask, 0.5).unwrap());
        assert_eq!(im.permute_f1, permute_f1(&p, &li.mask, 0.5).unwrap());
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let mean = r.per_image.iter().map(|i| i.f1).sum::<f64>() / d.len() as f64;
    assert!((r.mean.f1 - mean).abs() < 1e-12);
}

#[test]
fn predict_rejects_other_sizes() {
    let s = generate_sample(1, 64, 64).unwrap();
    assert!(matches!(predict(&model(), &s.image), Err(Error::Config(_))));
}

#[test]
fn sweep_has_nineteen_cells_and_an_exact_baseline() {
    let m = model();
    let d = data(4, 200);
    let base = evaluate(&m, &d, 0.5, Aggregation::PerImage).unwrap();
    let mut seen = 0;
    let r = robustness_sweep(&m, &d, 0.5, Aggregation::PerImage, 3, |_| seen += 1).unwrap();
    assert_eq!(seen, 19);
    assert_eq!(r.cells.len(), 19);
    assert_eq!(r.cells[0].perturbation, "none");
    assert_eq!(r.cells[0].f1, base.mean.f1);
    assert_eq!(r.cells[0].iou, base.mean.iou);
    assert_eq!(r.rows.len(), 3);
    for row in &r.rows {
        assert_eq!(row.f1.len(), 6);
        assert_eq!(row.none, base.mean.f1);
        let s: f64 = row.f1.iter().sum();
        assert!((row.avg_perturbed - s / 6.0).abs() < 1e-15);
        assert!((row.avg_with_none - (s + row.none) / 7.0).abs() < 1e-15);
        let cells: Vec<_> = r.cells.iter().filter(|c| c.perturbation == row.perturbation).collect();
        assert_eq!(cells.iter().map(|c| c.level.unwrap()).collect::<Vec<_>>(), row.levels);
    }
    let again = robustness_sweep(&m, &d, 0.5, Aggregation::PerImage, 3, |_| {}).unwrap();
    assert_eq!(again, r);

    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    r.write_table_csv(&table).unwrap();
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("perturbation,levels,none,level1"));
    assert!(lines[1].starts_with("gauss_noise,3/7/11/15/19/23,"));
    let cells = dir.path().join("cells.csv");
    r.write_cells_csv(&cells).unwrap();
    assert_eq!(std::fs::read_to_string(&cells).unwrap().lines().count(), 20);
}
