use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mesorch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mesorch"))
        .args(args)
        .output()
        .expect("spawn mesorch")
}

fn ok(args: &[&str]) -> String {
    let o = mesorch(args);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Tiny model and a two-epoch recipe so every command runs in seconds.
fn micro_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "data": { "size": [32, 32] },
        "model": {
            "input_size": [32, 32],
            "local": { "channels": [4, 4, 8, 8], "depths": [1, 1, 1, 1], "kernel": 3 },
            "global": { "channels": [4, 4, 8, 8], "depths": [1, 1, 1, 1], "heads": [1, 1, 2, 1] },
            "decoder_width": 4,
            "weighting_hidden": 4
        },
        "train": { "epochs": 2, "batch_size": 4, "warmup_epochs": 1 },
        "finetune_epochs": 1
    });
    let p = dir.join("micro.json");
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "version.json" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn gen_data_is_deterministic_and_validates_count() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--out", s(d), "--count", "200", "--seed", "7", "--size", "32"]);
    }
    assert_eq!(tree(&a), tree(&b));
    let man = json(&a.join("manifest.json"));
    let counts: Vec<usize> = ["train", "val", "test", "calibration"]
        .iter()
        .map(|k| man["splits"][k].as_array().unwrap().len())
        .collect();
    assert_eq!(counts, vec![140, 20, 20, 20]);
    assert!(a.join("run_config.json").is_file() && a.join("version.json").is_file());

    let o = mesorch(&["gen-data", "--out", s(&t.path().join("c")), "--count", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_are_usage_errors() {
    let t = tempfile::tempdir().unwrap();
    let bad = t.path().join("bad.json");
    fs::write(&bad, r#"{ "train": { "epochs": 1, "bogus": 3 } }"#).unwrap();
    let o = mesorch(&["gen-data", "--out", s(&t.path().join("x")), "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    let o = mesorch(&["train", "--data", s(&t.path().join("missing")), "--out", s(&t.path().join("y"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(mesorch(&["train", "--out", "z"]).status.code(), Some(2));
}

#[test]
fn pipeline_end_to_end() {
    let t = tempfile::tempdir().unwrap();
    let root = t.path();
    let cfg = micro_config(root);
    let c = s(&cfg);
    let data = root.join("data");
    ok(&["gen-data", "--out", s(&data), "--count", "24", "--seed", "3", "--config", c]);

    // train, then resume from the first epoch into a second directory
    let run = root.join("run");
    ok(&["train", "--data", s(&data), "--out", s(&run), "--config", c]);
    for f in ["epoch_001/manifest.json", "epoch_002/manifest.json", "final/manifest.json", "loss.csv", "run_config.json", "version.json", "val_metrics.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let resumed = root.join("resumed");
    ok(&["train", "--data", s(&data), "--out", s(&resumed), "--config", c, "--resume", s(&run.join("epoch_001"))]);
    assert_eq!(fs::read(run.join("loss.csv")).unwrap(), fs::read(resumed.join("loss.csv")).unwrap());
    let o = mesorch(&["train", "--data", s(&data), "--out", s(&root.join("r2")), "--config", c, "--lr", "0.01", "--resume", s(&run.join("epoch_001"))]);
    assert_eq!(o.status.code(), Some(2));
    let ck = run.join("final");

    // evaluate, then score the ground-truth masks and a constant map
    let ev = root.join("eval");
    ok(&["evaluate", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&ev)]);
    let report = json(&ev.join("metrics.json"));
    let n = report["count"].as_u64().unwrap() as usize;
    let csv = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), n + 2);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    let gt = root.join("gt");
    ok(&["evaluate", "--predictions", s(&data.join("test/masks")), "--data", s(&data), "--out", s(&gt)]);
    let r = json(&gt.join("metrics.json"));
    assert_eq!(r["mean"]["f1"], 1.0);
    assert_eq!(r["mean"]["iou"], 1.0);
    assert_eq!(r["mean"]["auc"], 1.0);

    let flat = root.join("flat");
    fs::create_dir_all(&flat).unwrap();
    for e in fs::read_dir(data.join("test/masks")).unwrap() {
        let name = e.unwrap().file_name();
        image::GrayImage::from_pixel(32, 32, image::Luma([128])).save(flat.join(name)).unwrap();
    }
    let fl = root.join("flat_eval");
    ok(&["evaluate", "--predictions", s(&flat), "--data", s(&data), "--out", s(&fl)]);
    let r = json(&fl.join("metrics.json"));
    assert_eq!(r["per_image"][0]["auc"], 0.5);

    // robustness baseline equals the standalone evaluation
    let rob = root.join("rob");
    ok(&["robustness", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&rob)]);
    let r = json(&rob.join("robustness.json"));
    let cells = r["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 19);
    assert_eq!(cells[0]["f1"], report["mean"]["f1"]);
    assert_eq!(fs::read_to_string(rob.join("robustness_table.csv")).unwrap().lines().count(), 4);

    // prune: no-op at zero, guard at 0.9
    let p0 = root.join("p0");
    ok(&["prune", "--checkpoint", s(&ck), "--calibration", s(&data), "--epsilon", "0", "--out", s(&p0), "--config", c]);
    let r = json(&p0.join("prune_report.json"));
    assert_eq!(r["pruned_branches"].as_array().unwrap().len(), 0);
    assert_eq!(r["params_after"], r["params_before"]);
    let p9 = root.join("p9");
    ok(&["prune", "--checkpoint", s(&ck), "--calibration", s(&data), "--epsilon", "0.9", "--out", s(&p9), "--config", c]);
    let r = json(&p9.join("prune_report.json"));
    assert_eq!(r["guard_engaged"], true);
    assert_eq!(r["surviving_branches"].as_array().unwrap().len(), 1);
    assert!(p9.join("final/manifest.json").is_file());

    // flops: repeatable, and smaller after pruning
    let full = ok(&["flops", "--checkpoint", s(&ck)]);
    assert_eq!(full, ok(&["flops", "--checkpoint", s(&ck)]));
    let pruned = ok(&["flops", "--checkpoint", s(&p9.join("final"))]);
    let f = |t: &str| serde_json::from_str::<Value>(t).unwrap()["flops"].as_u64().unwrap();
    assert!(f(&pruned) < f(&full));
    let toy = ok(&["flops", "--preset", "toy", "--size", "64"]);
    assert_eq!(serde_json::from_str::<Value>(&toy).unwrap()["input_size"], serde_json::json!([64, 64]));

    // predict twice: same files, input dimensions, mask = probability >= 0.5
    let img = data.join("test/images/00000.png");
    let (o1, o2) = (root.join("pr1"), root.join("pr2"));
    for o in [&o1, &o2] {
        ok(&["predict", "--checkpoint", s(&ck), "--image", s(&img), "--out", s(o)]);
    }
    for f in ["probability.png", "mask.png"] {
        assert_eq!(fs::read(o1.join(f)).unwrap(), fs::read(o2.join(f)).unwrap());
        let im = image::open(o1.join(f)).unwrap().to_luma8();
        assert_eq!(im.dimensions(), (32, 32));
    }
    let prob = image::open(o1.join("probability.png")).unwrap().to_luma8();
    let mask = image::open(o1.join("mask.png")).unwrap().to_luma8();
    for (p, m) in prob.as_raw().iter().zip(mask.as_raw()) {
        assert!(*m == 0 || *m == 255);
        if *p != 127 && *p != 128 {
            assert_eq!(*m == 255, *p >= 128);
        }
    }
}
