//! Directory checkpoints: `manifest.json` plus one little-endian f32 blob
//! per tensor, row-major, named by parameter path.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mesorch_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::branch::BranchSet;
use super::config::MesorchConfig;
use super::model::Mesorch;
use super::params::{Param, ParamSet};
use super::plan::{param_specs, ParamKind, Weighting};
use crate::{Error, Result};

pub const FORMAT: &str = "mesorch-checkpoint";
pub const VERSION: u32 = 1;

/// AdamW moments, keyed like the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Mesorch,
    pub seed: u64,
    /// Optimizer updates applied so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub optimizer: Option<OptimizerState>,
    /// Free-form metadata (e.g. the resolved training config).
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    kind: Option<ParamKind>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: MesorchConfig,
    config_hash: String,
    branches: BranchSet,
    active_branches: Vec<String>,
    weighting: Weighting,
    seed: u64,
    step: u64,
    epoch: u64,
    params: Vec<TensorEntry>,
    #[serde(default)]
    optimizer: Option<OptimizerManifest>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct OptimizerManifest {
    step: u64,
    m: Vec<TensorEntry>,
    v: Vec<TensorEntry>,
}

pub fn config_hash(config: &MesorchConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let d = Sha256::digest(json.as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_blob(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for &v in t.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path, shape: &[usize]) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Corrupt(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            n * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Tensor::from_vec(shape, data))
}

fn write_group<'a>(
    dir: &Path,
    sub: &str,
    items: impl Iterator<Item = (&'a String, &'a Tensor, Option<ParamKind>)>,
) -> Result<Vec<TensorEntry>> {
    let d = dir.join(sub);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    let mut out = Vec::new();
    for (name, t, kind) in items {
        let file = format!("{sub}/{name}.bin");
        write_blob(&dir.join(&file), t)?;
        out.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            kind,
            file,
        });
    }
    Ok(out)
}

fn read_group(dir: &Path, entries: &[TensorEntry]) -> Result<BTreeMap<String, Tensor>> {
    let mut out = BTreeMap::new();
    for e in entries {
        if e.file.contains("..") || Path::new(&e.file).is_absolute() {
            return Err(Error::Corrupt(format!("blob path {} escapes the checkpoint", e.file)));
        }
        out.insert(e.name.clone(), read_blob(&dir.join(&e.file), &e.shape)?);
    }
    Ok(out)
}

impl Checkpoint {
    pub fn new(model: Mesorch, seed: u64) -> Self {
        Self {
            model,
            seed,
            step: 0,
            epoch: 0,
            optimizer: None,
            extra: serde_json::Value::Null,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = &self.model;
        let params = write_group(
            dir,
            "params",
            m.params.iter().map(|(n, p)| (n, &p.value, Some(p.kind))),
        )?;
        let optimizer = match &self.optimizer {
            None => None,
            Some(o) => Some(OptimizerManifest {
                step: o.step,
                m: write_group(dir, "adam_m", o.m.iter().map(|(n, t)| (n, t, None)))?,
                v: write_group(dir, "adam_v", o.v.iter().map(|(n, t)| (n, t, None)))?,
            }),
        };
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            config: m.config.clone(),
            config_hash: config_hash(&m.config),
            branches: m.branches.clone(),
            active_branches: m.branches.ids().iter().map(|b| b.to_string()).collect(),
            weighting: m.weighting.clone(),
            seed: self.seed,
            step: self.step,
            epoch: self.epoch,
            params,
            optimizer,
            extra: self.extra.clone(),
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path: PathBuf = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        let format = raw.get("format").and_then(|v| v.as_str());
        let version = raw.get("version").and_then(|v| v.as_u64());
        if format != Some(FORMAT) || version != Some(VERSION as u64) {
            return Err(Error::Version(format!(
                "{} is not a version {VERSION} {FORMAT} manifest",
                path.display()
            )));
        }
        let man: Manifest = serde_json::from_value(raw).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        if config_hash(&man.config) != man.config_hash {
            return Err(Error::Version(format!(
                "config hash mismatch in {}: the stored config was altered or written by an incompatible build",
                path.display()
            )));
        }
        man.config.validate()?;
        let tensors = read_group(dir, &man.params)?;
        let mut params = ParamSet::default();
        for e in &man.params {
            let kind = e
                .kind
                .ok_or_else(|| Error::Corrupt(format!("parameter {} has no kind", e.name)))?;
            params.insert(
                e.name.clone(),
                Param {
                    value: tensors[&e.name].clone(),
                    kind,
                },
            );
        }
        params.check_against(&param_specs(&man.config, &man.branches, &man.weighting))?;
        let optimizer = match &man.optimizer {
            None => None,
            Some(o) => Some(OptimizerState {
                step: o.step,
                m: read_group(dir, &o.m)?,
                v: read_group(dir, &o.v)?,
            }),
        };
        Ok(Self {
            model: Mesorch {
                config: man.config,
                branches: man.branches,
                weighting: man.weighting,
                params,
            },
            seed: man.seed,
            step: man.step,
            epoch: man.epoch,
            optimizer,
            extra: man.extra,
        })
    }
}
