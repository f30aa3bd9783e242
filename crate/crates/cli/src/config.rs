//! Run configuration: built-in preset, then a JSON file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mesorch_core::mesorch_net::{BranchSet, Encoder, MesorchConfig, Preset};
use mesorch_core::metrics::Aggregation;
use mesorch_core::pruning::PruneConfig;
use mesorch_core::synthdata::SplitFractions;
use mesorch_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Which encoder branches a freshly trained model carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    Both,
    Local,
    Global,
}

impl Branches {
    pub fn set(self) -> BranchSet {
        match self {
            Branches::Both => BranchSet::full(),
            Branches::Local => BranchSet::encoder_only(Encoder::Local),
            Branches::Global => BranchSet::encoder_only(Encoder::Global),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub count: usize,
    pub size: (usize, usize),
    pub split_fractions: SplitFractions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
    pub aggregation: Aggregation,
    /// Seed of the perturbation draws in the robustness sweep.
    pub perturb_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub branches: Branches,
    pub data: DataConfig,
    pub model: MesorchConfig,
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub finetune_epochs: usize,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Result<Self> {
        let (model, train) = match preset {
            Preset::Toy => (MesorchConfig::toy(), TrainConfig::toy()),
            Preset::Paper => (MesorchConfig::paper(), TrainConfig::paper()),
            Preset::Custom => bail!("no built-in run preset named custom; use toy or paper"),
        };
        Ok(Self {
            preset,
            branches: Branches::Both,
            data: DataConfig {
                seed: 0,
                count: 200,
                size: model.input_size,
                split_fractions: SplitFractions::default(),
            },
            model,
            train,
            prune: PruneConfig::default(),
            finetune_epochs: 5,
            eval: EvalConfig {
                threshold: 0.5,
                aggregation: Aggregation::PerImage,
                perturb_seed: 0,
            },
        })
    }

    /// Preset chosen by flag, else by the file's `preset` key, else toy;
    /// the file is merged over it key by key.
    pub fn layered(preset: Option<Preset>, file: Option<&Path>) -> Result<Self> {
        let overlay = match file {
            None => None,
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                if !v.is_object() {
                    bail!("config {} must hold a JSON object", p.display());
                }
                Some(v)
            }
        };
        let from_file = overlay
            .as_ref()
            .and_then(|v| v.get("preset"))
            .map(|v| serde_json::from_value::<Preset>(v.clone()))
            .transpose()
            .context("config key `preset`")?;
        let base = Self::preset(preset.or(from_file).unwrap_or(Preset::Toy))?;
        let mut value = serde_json::to_value(&base)?;
        if let Some(o) = overlay {
            merge(&mut value, o);
        }
        let mut cfg: Self = serde_json::from_value(value).context("invalid run configuration")?;
        if let Some(p) = preset {
            cfg.preset = p;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            bail!("threshold {} must lie in [0, 1]", self.eval.threshold);
        }
        Ok(())
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `64` or `64x96` (height × width).
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let num = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("bad size `{s}`"));
    match parts.as_slice() {
        [n] => {
            let n = num(n)?;
            Ok((n, n))
        }
        [h, w] => Ok((num(h)?, num(w)?)),
        _ => Err(format!("bad size `{s}`; expected N or HxW")),
    }
}

/// Four comma-separated fractions: train, val, test, calibration.
pub fn parse_fractions(s: &str) -> Result<SplitFractions, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad fraction `{p}`")))
        .collect::<Result<_, _>>()?;
    let arr: [f64; 4] = v.try_into().map_err(|_| "expected four fractions: train,val,test,calibration".to_string())?;
    Ok(SplitFractions(arr))
}
