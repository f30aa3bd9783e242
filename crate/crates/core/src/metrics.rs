//! Pixel-level localization metrics and model cost accounting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesorch_net::{layer_plan, BranchSet, MesorchConfig, Mesorch, Weighting};
use crate::{Error, Grid, Mask, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    /// Swap the predicted labels.
    pub fn inverted(&self) -> Confusion {
        Confusion {
            tp: self.fn_,
            fp: self.tn,
            fn_: self.tp,
            tn: self.fp,
        }
    }

    /// `2TP / (2TP + FP + FN)`; 1 when both prediction and mask are empty.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    /// `TP / (TP + FP + FN)`; 1 when both prediction and mask are empty.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }
}

fn check(pred: &Grid, mask: &Mask) -> Result<()> {
    if (pred.height(), pred.width()) != (mask.height(), mask.width()) {
        return Err(Error::InvalidInput(format!(
            "prediction is {}x{} but mask is {}x{}",
            pred.height(),
            pred.width(),
            mask.height(),
            mask.width()
        )));
    }
    if pred.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("prediction contains non-finite values".into()));
    }
    Ok(())
}

/// Confusion counts after binarizing `pred ≥ threshold`.
pub fn confusion(pred: &Grid, mask: &Mask, threshold: f64) -> Result<Confusion> {
    check(pred, mask)?;
    let mut c = Confusion::default();
    for (&p, &m) in pred.data().iter().zip(mask.data()) {
        match (p >= threshold, m) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn pixel_f1(pred: &Grid, mask: &Mask, threshold: f64) -> Result<f64> {
    Ok(confusion(pred, mask, threshold)?.f1())
}

/// Best F1 over the identity and inverted label assignments.
pub fn permute_f1(pred: &Grid, mask: &Mask, threshold: f64) -> Result<f64> {
    let c = confusion(pred, mask, threshold)?;
    let inv = pred.data().iter().map(|p| 1.0 - p).collect();
    let ci = confusion(&Grid::new(pred.height(), pred.width(), inv)?, mask, threshold)?;
    Ok(c.f1().max(ci.f1()))
}

pub fn iou(pred: &Grid, mask: &Mask, threshold: f64) -> Result<f64> {
    Ok(confusion(pred, mask, threshold)?.iou())
}

/// Mann–Whitney AUC with midranks for ties. `None` when the labels are single-class.
pub fn auc_scores(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        let npos = idx[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid * npos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn auc(pred: &Grid, mask: &Mask) -> Result<Option<f64>> {
    check(pred, mask)?;
    Ok(auc_scores(pred.data(), mask.data()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-image values.
    #[default]
    PerImage,
    /// Metrics of the pooled pixel population.
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub f1: f64,
    pub permute_f1: f64,
    pub iou: f64,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub f1: f64,
    pub permute_f1: f64,
    pub iou: f64,
    /// Over images with a two-class mask (or the pooled pixels in micro mode).
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub count: usize,
    /// Images whose AUC is undefined (single-class mask).
    pub auc_excluded: usize,
    pub mean: MeanMetrics,
    pub per_image: Vec<ImageMetrics>,
}

/// Streaming accumulator for a [`MetricsReport`].
pub struct MetricsAccumulator {
    threshold: f64,
    aggregation: Aggregation,
    per_image: Vec<ImageMetrics>,
    pooled: Confusion,
    pooled_inv: Confusion,
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl MetricsAccumulator {
    pub fn new(threshold: f64, aggregation: Aggregation) -> Self {
        Self {
            threshold,
            aggregation,
            per_image: Vec::new(),
            pooled: Confusion::default(),
            pooled_inv: Confusion::default(),
            scores: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, pred: &Grid, mask: &Mask) -> Result<&ImageMetrics> {
        let c = confusion(pred, mask, self.threshold)?;
        let inv = pred.data().iter().map(|p| 1.0 - p).collect();
        let ci = confusion(&Grid::new(pred.height(), pred.width(), inv)?, mask, self.threshold)?;
        self.pooled.add(&c);
        self.pooled_inv.add(&ci);
        if self.aggregation == Aggregation::Micro {
            self.scores.extend_from_slice(pred.data());
            self.labels.extend_from_slice(mask.data());
        }
        self.per_image.push(ImageMetrics {
            id: id.into(),
            f1: c.f1(),
            permute_f1: c.f1().max(ci.f1()),
            iou: c.iou(),
            auc: auc_scores(pred.data(), mask.data()),
        });
        Ok(self.per_image.last().unwrap())
    }

    pub fn finish(self) -> Result<MetricsReport> {
        let n = self.per_image.len();
        if n == 0 {
            return Err(Error::InvalidInput("no images to evaluate".into()));
        }
        let aucs: Vec<f64> = self.per_image.iter().filter_map(|m| m.auc).collect();
        let auc_excluded = n - aucs.len();
        let mean_of = |f: fn(&ImageMetrics) -> f64| self.per_image.iter().map(f).sum::<f64>() / n as f64;
        let mean = match self.aggregation {
            Aggregation::PerImage => MeanMetrics {
                f1: mean_of(|m| m.f1),
                permute_f1: mean_of(|m| m.permute_f1),
                iou: mean_of(|m| m.iou),
                auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            },
            Aggregation::Micro => MeanMetrics {
                f1: self.pooled.f1(),
                permute_f1: self.pooled.f1().max(self.pooled_inv.f1()),
                iou: self.pooled.iou(),
                auc: auc_scores(&self.scores, &self.labels),
            },
        };
        Ok(MetricsReport {
            threshold: self.threshold,
            aggregation: self.aggregation,
            count: n,
            auc_excluded,
            mean,
            per_image: self.per_image,
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// One row per image plus a final `mean` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::io::csv_err(path, e))?;
        let mut rows = vec![vec![
            "image".to_string(),
            "f1".into(),
            "permute_f1".into(),
            "iou".into(),
            "auc".into(),
        ]];
        for m in &self.per_image {
            rows.push(vec![
                m.id.clone(),
                m.f1.to_string(),
                m.permute_f1.to_string(),
                m.iou.to_string(),
                fmt_opt(m.auc),
            ]);
        }
        rows.push(vec![
            "mean".into(),
            self.mean.f1.to_string(),
            self.mean.permute_f1.to_string(),
            self.mean.iou.to_string(),
            fmt_opt(self.mean.auc),
        ]);
        for r in rows {
            w.write_record(&r).map_err(|e| crate::io::csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleCost {
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub input_size: (usize, usize),
    pub batch: usize,
    pub params: u64,
    /// 2 × multiply-accumulates of one forward pass.
    pub flops: u64,
    pub modules: BTreeMap<String, ModuleCost>,
}

/// Analytic parameter and FLOP counts for one structure at `input_size`.
pub fn count_cost(
    config: &MesorchConfig,
    branches: &BranchSet,
    weighting: &Weighting,
    input_size: (usize, usize),
) -> Result<CostReport> {
    let cfg = config.clone().with_input_size(input_size.0, input_size.1);
    cfg.validate()?;
    let mut modules: BTreeMap<String, ModuleCost> = BTreeMap::new();
    for l in layer_plan(&cfg, branches, weighting) {
        let e = modules.entry(l.component.label()).or_insert(ModuleCost { params: 0, flops: 0 });
        e.params += l.param_count();
        e.flops += l.flops();
    }
    Ok(CostReport {
        input_size,
        batch: 1,
        params: modules.values().map(|m| m.params).sum(),
        flops: modules.values().map(|m| m.flops).sum(),
        modules,
    })
}

impl Mesorch {
    pub fn cost(&self) -> CostReport {
        count_cost(&self.config, &self.branches, &self.weighting, self.config.input_size)
            .expect("model config was validated at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, v: &[f64]) -> Grid {
        Grid::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn half_overlap_case() {
        let mask = Mask::from_fn(4, 4, |_, x| x < 2);
        let pred = Grid::from_fn(4, 4, |y, _| if y < 2 { 0.9 } else { 0.1 });
        let c = confusion(&pred, &mask, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (4, 4, 4, 4));
        assert_eq!(pixel_f1(&pred, &mask, 0.5).unwrap(), 0.5);
        assert_eq!(permute_f1(&pred, &mask, 0.5).unwrap(), 0.5);
        assert_eq!(iou(&pred, &mask, 0.5).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn degenerate_conventions() {
        let empty = Mask::empty(4, 4);
        let zero = Grid::zeros(4, 4);
        let one = Grid::filled(4, 4, 1.0);
        assert_eq!(pixel_f1(&zero, &empty, 0.5).unwrap(), 1.0);
        assert_eq!(iou(&zero, &empty, 0.5).unwrap(), 1.0);
        assert_eq!(pixel_f1(&one, &empty, 0.5).unwrap(), 0.0);
        assert_eq!(iou(&one, &empty, 0.5).unwrap(), 0.0);
        assert_eq!(auc(&one, &empty).unwrap(), None);
        assert!(pixel_f1(&Grid::zeros(4, 5), &empty, 0.5).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let mask = Mask::from_fn(2, 2, |y, _| y == 0);
        let pred = grid(2, 2, &[0.5, 0.5, 0.4999, 0.0]);
        assert_eq!(pixel_f1(&pred, &mask, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn auc_cases() {
        let scores = [0.9, 0.8, 0.4, 0.7, 0.3, 0.1];
        let labels = [true, true, true, false, false, false];
        assert_eq!(auc_scores(&scores, &labels), Some(8.0 / 9.0));
        assert_eq!(auc_scores(&[0.5; 6], &labels), Some(0.5));
        assert_eq!(auc_scores(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1], &labels), Some(1.0));
        // ties across classes count one half
        assert_eq!(auc_scores(&[0.5, 0.2], &[true, false]), Some(1.0));
        assert_eq!(auc_scores(&[0.5, 0.5, 0.1], &[true, false, false]), Some(0.75));
    }

    #[test]
    fn cost_of_single_conv_layer() {
        use crate::mesorch_net::{Component, LayerOp, LayerSpec};
        let l = LayerSpec {
            name: "c".into(),
            component: Component::Weighting,
            op: LayerOp::Conv {
                kernel: 3,
                cin: 6,
                cout: 16,
                stride: 1,
                pad: 1,
                out: (64, 64),
            },
            zero_init: false,
        };
        assert_eq!(l.param_count(), 880);
        assert_eq!(l.flops(), 2 * 9 * 6 * 16 * 64 * 64);
    }

    #[test]
    fn micro_and_per_image_aggregation_differ() {
        let m1 = Mask::from_fn(4, 4, |y, _| y == 0);
        let m2 = Mask::from_fn(4, 4, |y, _| y < 3);
        let p1 = Grid::from_fn(4, 4, |y, _| if y < 2 { 1.0 } else { 0.0 });
        let p2 = Grid::from_fn(4, 4, |y, _| if y < 3 { 1.0 } else { 0.0 });
        let mut a = MetricsAccumulator::new(0.5, Aggregation::PerImage);
        let mut b = MetricsAccumulator::new(0.5, Aggregation::Micro);
        for acc in [&mut a, &mut b] {
            acc.push("a", &p1, &m1).unwrap();
            acc.push("b", &p2, &m2).unwrap();
        }
        let (a, b) = (a.finish().unwrap(), b.finish().unwrap());
        assert!((a.mean.f1 - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
        // pooled: tp 16, fp 4, fn 0
        assert!((b.mean.f1 - 32.0 / 36.0).abs() < 1e-15);
        assert_eq!(a.count, 2);
    }
}
