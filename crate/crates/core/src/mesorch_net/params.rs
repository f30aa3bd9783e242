use std::collections::BTreeMap;

use mesorch_tensor::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::plan::{Init, ParamKind, ParamSpec};
use crate::seed::derive_seed;
use crate::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub kind: ParamKind,
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Param>,
}

/// Standard normal truncated at ±2, scaled by `std`.
fn trunc_normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            out.push(z * std);
        }
    }
    out
}

/// Round to the nearest f32 so values survive a 32-bit checkpoint exactly.
pub fn round_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

impl ParamSet {
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut map = BTreeMap::new();
        for s in specs {
            let n = s.numel();
            let data = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::TruncNormal => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &s.name));
                    trunc_normal(&mut rng, n, INIT_STD)
                }
            };
            let mut value = Tensor::from_vec(&s.shape, data);
            round_f32(&mut value);
            map.insert(s.name.clone(), Param { value, kind: s.kind });
        }
        Self { map }
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Corrupt(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Corrupt(format!("missing parameter {name}")))
    }

    pub fn insert(&mut self, name: String, param: Param) {
        self.map.insert(name, param);
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.map.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> u64 {
        self.map.values().map(|p| p.value.numel() as u64).sum()
    }

    /// Check names and shapes against a structure's specs.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.map.len() {
            return Err(Error::Corrupt(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.map.len()
            )));
        }
        for s in specs {
            let p = self.get(&s.name)?;
            if p.value.shape() != s.shape.as_slice() {
                return Err(Error::Corrupt(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    p.value.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }
}

/// Parameters bound as leaves of one graph, created on first use.
pub struct Bound<'p> {
    params: &'p ParamSet,
    vars: BTreeMap<String, Var>,
}

impl<'p> Bound<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            vars: BTreeMap::new(),
        }
    }

    pub fn var(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let v = g.param(self.params.get(name)?.value.clone());
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn into_vars(self) -> BTreeMap<String, Var> {
        self.vars
    }
}
