use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mesorch_core::eval::{evaluate as eval_model, predict as predict_map, robustness_sweep, LabelledImage};
use mesorch_core::mesorch_net::{Checkpoint, Mesorch, Weighting};
use mesorch_core::metrics::{count_cost, Aggregation, MetricsAccumulator, MetricsReport};
use mesorch_core::pruning::{finetune_config, prune_with_calibration, renormalize_and_finetune, PostPrune, PruneConfig};
use mesorch_core::synthdata::{
    generate_splits, load_image_png, load_probability_png, read_dataset, save_mask_png, save_probability_png, write_dataset,
    Dataset, Split, SplitFractions, TamperType,
};
use mesorch_core::train::{train_loop, TrainConfig, TrainOptions, TrainSample, TrainState};
use mesorch_core::{Grid, Mask};
use serde::Serialize;

use crate::config::{Branches, RunConfig};
use crate::Layers;

/// Bad invocation; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const RESOLVED_CONFIG: &str = "run_config.json";
pub const VERSION_STAMP: &str = "version.json";
pub const FINAL_CHECKPOINT: &str = "final";

#[derive(Serialize)]
struct Stamp<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    args: Vec<String>,
}

/// Create `out` and record the resolved config and tool version before any work.
fn prepare_out(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    mesorch_core::io::write_json(&out.join(RESOLVED_CONFIG), cfg)?;
    let stamp = Stamp {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: std::env::args().collect(),
    };
    mesorch_core::io::write_json(&out.join(VERSION_STAMP), &stamp)?;
    Ok(())
}

fn resolve(layers: &Layers) -> Result<RunConfig> {
    RunConfig::layered(layers.preset, layers.config.as_deref()).map_err(|e| usage(format!("{e:#}")))
}

fn open_dataset(root: &Path) -> Result<Dataset> {
    if !root.join("manifest.json").is_file() {
        return Err(usage(format!("{} is not a dataset directory (no manifest.json)", root.display())));
    }
    Ok(read_dataset(root)?)
}

fn labelled(ds: &Dataset, split: Split) -> Result<Vec<LabelledImage>> {
    Ok(ds
        .load_split(split)?
        .into_iter()
        .map(|s| LabelledImage {
            id: s.record.id,
            image: s.image,
            mask: s.mask,
        })
        .collect())
}

fn load_model(dir: &Path) -> Result<Checkpoint> {
    if !dir.join("manifest.json").is_file() {
        return Err(usage(format!("{} is not a checkpoint directory", dir.display())));
    }
    Ok(Checkpoint::load(dir)?)
}

pub fn gen_data(
    layers: &Layers,
    out: &Path,
    seed: Option<u64>,
    count: Option<usize>,
    size: Option<(usize, usize)>,
    fractions: Option<SplitFractions>,
) -> Result<()> {
    let mut cfg = resolve(layers)?;
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    if let Some(c) = count {
        cfg.data.count = c;
    }
    if let Some(s) = size {
        cfg.data.size = s;
    }
    if let Some(f) = fractions {
        cfg.data.split_fractions = f;
    }
    let d = &cfg.data;
    if d.count < 4 {
        return Err(usage(format!("count {} must be at least 4", d.count)));
    }
    let counts = d.split_fractions.counts(d.count).map_err(|e| usage(e.to_string()))?;
    prepare_out(out, "gen-data", &cfg)?;
    let samples = generate_splits(d.seed, d.size.0, d.size.1, counts)?;
    let man = write_dataset(out, d.seed, &samples)?;
    println!("dataset {} ({}x{}, seed {})", out.display(), man.height, man.width, man.seed);
    for split in Split::ALL {
        let recs = man.records(split);
        let by_type: Vec<String> = TamperType::ALL
            .iter()
            .map(|t| format!("{t:?} {}", recs.iter().filter(|r| r.tamper_type == *t).count()))
            .collect();
        println!("  {split:<12} {:>5}  {}", recs.len(), by_type.join(", "));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    layers: &Layers,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    epochs: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    branches: Option<Branches>,
) -> Result<()> {
    let ds = open_dataset(data)?;
    let mut cfg = resolve(layers)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(l) = lr {
        cfg.train.lr_max = l;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(b) = branches {
        cfg.branches = b;
    }
    cfg.model.input_size = (ds.manifest.height, ds.manifest.width);
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;

    let mut state = match resume {
        None => TrainState::new(Mesorch::with_structure(
            cfg.model.clone(),
            cfg.branches.set(),
            Weighting::Adaptive,
            cfg.train.seed,
        )?),
        Some(dir) => {
            let ck = load_model(dir)?;
            let stored: Option<TrainConfig> = ck
                .extra
                .get("train_config")
                .map(|v| serde_json::from_value(v.clone()))
                .transpose()
                .context("stored train_config")?;
            if stored.as_ref().is_some_and(|s| *s != cfg.train) {
                bail!(usage(format!(
                    "training config differs from the one stored in {}; resume with the same settings",
                    dir.display()
                )));
            }
            if ck.model.config != cfg.model {
                bail!(usage(format!("model config differs from the one stored in {}", dir.display())));
            }
            let state = TrainState::load(dir)?;
            eprintln!("resuming at epoch {} step {}", state.epoch, state.step);
            state
        }
    };
    prepare_out(out, "train", &cfg)?;

    let cutoff = cfg.model.cutoff;
    let train_set = ds
        .load_split(Split::Train)?
        .iter()
        .map(|s| TrainSample::new(&s.image, &s.mask, cutoff))
        .collect::<mesorch_core::Result<Vec<_>>>()?;
    if train_set.is_empty() {
        bail!("{} has an empty train split", data.display());
    }
    let total = cfg.train.epochs;
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        stop_after_epoch: None,
        on_epoch: Some(Box::new(move |e| {
            eprintln!("epoch {:>3}/{total}  step {:>5}  loss {:.5}  lr {:.3e}", e.epoch, e.step, e.mean_loss, e.lr);
        })),
    };
    train_loop(&mut state, &train_set, &cfg.train, opts)?;
    let final_dir = out.join(FINAL_CHECKPOINT);
    state.save(&final_dir, &cfg.train)?;
    println!("checkpoint {}", final_dir.display());

    let val = labelled(&ds, Split::Val)?;
    if !val.is_empty() {
        let r = eval_model(&state.model, &val, cfg.eval.threshold, cfg.eval.aggregation)?;
        write_metrics(out, "val_metrics", &r)?;
        println!("val F1 {:.4}  IoU {:.4}  AUC {}", r.mean.f1, r.mean.iou, fmt_auc(r.mean.auc));
    }
    Ok(())
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn write_metrics(out: &Path, stem: &str, r: &MetricsReport) -> Result<()> {
    r.write_json(&out.join(format!("{stem}.json")))?;
    r.write_csv(&out.join(format!("{stem}.csv")))?;
    Ok(())
}

pub fn prune(
    layers: &Layers,
    checkpoint: &Path,
    calibration: &Path,
    epsilon: Option<f64>,
    finetune_epochs: Option<usize>,
    weighting: Option<PostPrune>,
    out: &Path,
) -> Result<()> {
    let ck = load_model(checkpoint)?;
    let ds = open_dataset(calibration)?;
    let mut cfg = resolve(layers)?;
    cfg.model = ck.model.config.clone();
    if let Some(e) = epsilon {
        cfg.prune.epsilon = Some(e);
    }
    if let Some(n) = finetune_epochs {
        cfg.finetune_epochs = n;
    }
    if let Some(w) = weighting {
        cfg.prune.weighting = w;
    }
    let prune_cfg: PruneConfig = cfg.prune.clone();
    prune_cfg
        .validate(ck.model.branches.len())
        .map_err(|e| usage(e.to_string()))?;
    prepare_out(out, "prune", &cfg)?;

    let calib = labelled(&ds, Split::Calibration)?;
    if calib.is_empty() {
        bail!("{} has an empty calibration split", calibration.display());
    }
    let (pruned, report) = prune_with_calibration(&ck.model, &calib, &prune_cfg)?;
    report.write_json(&out.join("prune_report.json"))?;
    Checkpoint::new(pruned.clone(), ck.seed).save(&out.join("pruned"))?;
    println!(
        "pruned {:?} (epsilon {:.4}{}), kept {:?}",
        report.pruned_branches,
        report.epsilon,
        if report.guard_engaged { ", guard engaged" } else { "" },
        report.surviving_branches
    );
    println!(
        "params {} -> {}  flops {} -> {}",
        report.params_before, report.params_after, report.flops_before, report.flops_after
    );

    let final_dir = out.join(FINAL_CHECKPOINT);
    if report.pruned_branches.is_empty() || cfg.finetune_epochs == 0 {
        if report.pruned_branches.is_empty() {
            println!("nothing pruned; fine-tuning skipped");
        }
        Checkpoint::new(pruned, ck.seed).save(&final_dir)?;
    } else {
        let train_set = ds
            .load_split(Split::Train)?
            .iter()
            .map(|s| TrainSample::new(&s.image, &s.mask, cfg.model.cutoff))
            .collect::<mesorch_core::Result<Vec<_>>>()?;
        let ft = finetune_config(&cfg.train, cfg.finetune_epochs);
        let ft_dir = out.join("finetune");
        let opts = TrainOptions {
            out_dir: Some(ft_dir),
            stop_after_epoch: None,
            on_epoch: Some(Box::new(|e| {
                eprintln!("finetune epoch {:>3}  loss {:.5}  lr {:.3e}", e.epoch, e.mean_loss, e.lr);
            })),
        };
        let state = renormalize_and_finetune(pruned, &train_set, &ft, opts)?;
        state.save(&final_dir, &ft)?;
    }
    println!("checkpoint {}", final_dir.display());
    Ok(())
}

fn predictions_from_dir(dir: &Path, data: &[LabelledImage], threshold: f64, agg: Aggregation) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(threshold, agg);
    for d in data {
        let p: PathBuf = dir.join(format!("{}.png", d.id));
        let pred: Grid = load_probability_png(&p)?;
        acc.push(d.id.clone(), &pred, &d.mask)?;
    }
    Ok(acc.finish()?)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    layers: &Layers,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    data: &Path,
    split: Split,
    threshold: Option<f64>,
    aggregation: Option<Aggregation>,
    out: &Path,
) -> Result<()> {
    let ds = open_dataset(data)?;
    let mut cfg = resolve(layers)?;
    if let Some(t) = threshold {
        cfg.eval.threshold = t;
    }
    if let Some(a) = aggregation {
        cfg.eval.aggregation = a;
    }
    let model = checkpoint.map(load_model).transpose()?;
    if let Some(ck) = &model {
        cfg.model = ck.model.config.clone();
    }
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    prepare_out(out, "evaluate", &cfg)?;
    let items = labelled(&ds, split)?;
    if items.is_empty() {
        bail!("split {split} of {} is empty", data.display());
    }
    let r = match (&model, predictions) {
        (Some(ck), _) => eval_model(&ck.model, &items, cfg.eval.threshold, cfg.eval.aggregation)?,
        (None, Some(dir)) => predictions_from_dir(dir, &items, cfg.eval.threshold, cfg.eval.aggregation)?,
        (None, None) => return Err(usage("need --checkpoint or --predictions")),
    };
    write_metrics(out, "metrics", &r)?;
    println!(
        "{split}: {} images  F1 {:.4}  permute-F1 {:.4}  IoU {:.4}  AUC {} ({} excluded)",
        r.count,
        r.mean.f1,
        r.mean.permute_f1,
        r.mean.iou,
        fmt_auc(r.mean.auc),
        r.auc_excluded
    );
    Ok(())
}

pub fn robustness(layers: &Layers, checkpoint: &Path, data: &Path, split: Split, seed: Option<u64>, out: &Path) -> Result<()> {
    let ck = load_model(checkpoint)?;
    let ds = open_dataset(data)?;
    let mut cfg = resolve(layers)?;
    cfg.model = ck.model.config.clone();
    if let Some(s) = seed {
        cfg.eval.perturb_seed = s;
    }
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    prepare_out(out, "robustness", &cfg)?;
    let items = labelled(&ds, split)?;
    if items.is_empty() {
        bail!("split {split} of {} is empty", data.display());
    }
    let r = robustness_sweep(
        &ck.model,
        &items,
        cfg.eval.threshold,
        cfg.eval.aggregation,
        cfg.eval.perturb_seed,
        |c| {
            let level = c.level.map_or("-".into(), |l| l.to_string());
            eprintln!("{:<12} {:>4}  F1 {:.4}", c.perturbation, level, c.f1);
        },
    )?;
    r.write_json(&out.join("robustness.json"))?;
    r.write_cells_csv(&out.join("robustness_cells.csv"))?;
    r.write_table_csv(&out.join("robustness_table.csv"))?;
    println!("{:<12} {:>7} {}  {:>8} {:>8}", "kind", "none", "levels", "avg", "avg+none");
    for row in &r.rows {
        let cells: Vec<String> = row.f1.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "{:<12} {:>7.4} {}  {:>8.4} {:>8.4}",
            row.perturbation,
            row.none,
            cells.join(" "),
            row.avg_perturbed,
            row.avg_with_none
        );
    }
    Ok(())
}

pub fn flops(layers: &Layers, checkpoint: Option<&Path>, size: Option<(usize, usize)>, out: Option<&Path>) -> Result<()> {
    let mut cfg = resolve(layers)?;
    let (branches, weighting) = match checkpoint {
        Some(dir) => {
            let ck = load_model(dir)?;
            cfg.model = ck.model.config.clone();
            (ck.model.branches, ck.model.weighting)
        }
        None => (cfg.branches.set(), Weighting::Adaptive),
    };
    let size = size.unwrap_or(cfg.model.input_size);
    let report = count_cost(&cfg.model, &branches, &weighting, size).map_err(|e| usage(e.to_string()))?;
    if let Some(o) = out {
        prepare_out(o, "flops", &cfg)?;
        mesorch_core::io::write_json(&o.join("cost.json"), &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn predict(layers: &Layers, checkpoint: &Path, image: &Path, out: &Path, threshold: Option<f64>) -> Result<()> {
    let ck = load_model(checkpoint)?;
    let mut cfg = resolve(layers)?;
    cfg.model = ck.model.config.clone();
    if let Some(t) = threshold {
        cfg.eval.threshold = t;
    }
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    let img = load_image_png(image)?;
    prepare_out(out, "predict", &cfg)?;
    let prob = predict_map(&ck.model, &img)?;
    let t = cfg.eval.threshold;
    let mask = Mask::new(prob.height(), prob.width(), prob.data().iter().map(|&p| p >= t).collect())?;
    save_probability_png(&out.join("probability.png"), &prob)?;
    save_mask_png(&out.join("mask.png"), &mask)?;
    println!(
        "{}x{}  tampered fraction {:.4}  -> {}",
        prob.height(),
        prob.width(),
        mask.area_fraction(),
        out.display()
    );
    Ok(())
}
