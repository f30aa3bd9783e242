//! Model evaluation on labelled images and the perturbation sweep.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::freq_dct::make_enhanced_inputs;
use crate::metrics::{Aggregation, MetricsAccumulator, MetricsReport};
use crate::mesorch_net::Mesorch;
use crate::seed::derive_seed;
use crate::synthdata::{perturb, PerturbKind, PerturbSpec};
use crate::train::stack_enhanced;
use crate::{Error, Grid, Image, Mask, Result};

/// Images per inference batch.
pub const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug)]
pub struct LabelledImage {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
}

fn probability_maps(model: &Mesorch, images: &[&Image]) -> Result<Vec<Grid>> {
    let cutoff = model.config.cutoff;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let inputs = chunk
            .iter()
            .map(|img| make_enhanced_inputs(img, cutoff))
            .collect::<Result<Vec<_>>>()?;
        let input = stack_enhanced(&inputs.iter().collect::<Vec<_>>());
        let prob = model.forward_input(&input)?.output.probability();
        for (i, img) in chunk.iter().enumerate() {
            let p = prob.sample(i);
            out.push(Grid::new(img.height(), img.width(), p.into_data())?);
        }
    }
    Ok(out)
}

/// Per-pixel tamper probability at input resolution.
pub fn predict(model: &Mesorch, image: &Image) -> Result<Grid> {
    let (h, w) = model.config.input_size;
    if (image.height(), image.width()) != (h, w) {
        return Err(Error::Config(format!(
            "image is {}x{}, model expects {h}x{w}",
            image.height(),
            image.width()
        )));
    }
    Ok(probability_maps(model, &[image])?.remove(0))
}

pub fn evaluate(model: &Mesorch, data: &[LabelledImage], threshold: f64, aggregation: Aggregation) -> Result<MetricsReport> {
    let imgs: Vec<&Image> = data.iter().map(|d| &d.image).collect();
    let preds = probability_maps(model, &imgs)?;
    let mut acc = MetricsAccumulator::new(threshold, aggregation);
    for (d, p) in data.iter().zip(&preds) {
        acc.push(d.id.clone(), p, &d.mask)?;
    }
    acc.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub perturbation: String,
    pub level: Option<u32>,
    pub f1: f64,
    pub permute_f1: f64,
    pub iou: f64,
    pub auc: Option<f64>,
}

/// One Table-style row per perturbation kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub perturbation: String,
    pub none: f64,
    pub levels: Vec<u32>,
    pub f1: Vec<f64>,
    /// Mean over the six perturbed levels.
    pub avg_perturbed: f64,
    /// Mean over the baseline and the six perturbed levels.
    pub avg_with_none: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub seed: u64,
    pub count: usize,
    pub cells: Vec<RobustnessCell>,
    pub rows: Vec<RobustnessRow>,
}

/// Evaluate every cell of [`PerturbSpec::grid`]. Noise draws derive from
/// `(seed, cell, image id)`; masks are never perturbed.
pub fn robustness_sweep(
    model: &Mesorch,
    data: &[LabelledImage],
    threshold: f64,
    aggregation: Aggregation,
    seed: u64,
    mut on_cell: impl FnMut(&RobustnessCell),
) -> Result<RobustnessReport> {
    let mut cells = Vec::new();
    for spec in PerturbSpec::grid() {
        let perturbed = data
            .iter()
            .map(|d| {
                Ok(LabelledImage {
                    id: d.id.clone(),
                    image: perturb(&d.image, spec, derive_seed(seed, &format!("{spec}/{}", d.id)))?,
                    mask: d.mask.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let r = evaluate(model, &perturbed, threshold, aggregation)?;
        let cell = RobustnessCell {
            perturbation: spec.kind.map_or("none", PerturbKind::name).to_string(),
            level: spec.level,
            f1: r.mean.f1,
            permute_f1: r.mean.permute_f1,
            iou: r.mean.iou,
            auc: r.mean.auc,
        };
        on_cell(&cell);
        cells.push(cell);
    }
    let none = cells[0].f1;
    let rows = PerturbKind::ALL
        .iter()
        .map(|k| {
            let f1: Vec<f64> = cells.iter().filter(|c| c.perturbation == k.name()).map(|c| c.f1).collect();
            let sum: f64 = f1.iter().sum();
            RobustnessRow {
                perturbation: k.name().into(),
                none,
                levels: k.levels().to_vec(),
                avg_perturbed: sum / f1.len() as f64,
                avg_with_none: (sum + none) / (f1.len() + 1) as f64,
                f1,
            }
        })
        .collect();
    Ok(RobustnessReport {
        threshold,
        aggregation,
        seed,
        count: data.len(),
        cells,
        rows,
    })
}

impl RobustnessReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// One row per cell: perturbation, level, f1, permute_f1, iou, auc.
    pub fn write_cells_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::io::csv_err(path, e))?;
        for c in &self.cells {
            w.serialize(c).map_err(|e| crate::io::csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per kind: None, the six levels, and both averages.
    pub fn write_table_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::io::csv_err(path, e))?;
        let err = |e| crate::io::csv_err(path, e);
        let mut head = vec!["perturbation".to_string(), "levels".into(), "none".into()];
        head.extend((1..=6).map(|i| format!("level{i}")));
        head.extend(["avg_perturbed".into(), "avg_with_none".into()]);
        w.write_record(&head).map_err(err)?;
        for r in &self.rows {
            let levels: Vec<String> = r.levels.iter().map(u32::to_string).collect();
            let mut rec = vec![r.perturbation.clone(), levels.join("/"), r.none.to_string()];
            rec.extend(r.f1.iter().map(f64::to_string));
            rec.extend([r.avg_perturbed.to_string(), r.avg_with_none.to_string()]);
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
