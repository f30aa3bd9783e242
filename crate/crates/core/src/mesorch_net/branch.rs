use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::SCALES;
use crate::{Error, Result};

pub const NUM_BRANCHES: usize = 2 * SCALES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    Local,
    Global,
}

impl Encoder {
    pub fn name(self) -> &'static str {
        match self {
            Encoder::Local => "local",
            Encoder::Global => "global",
        }
    }
}

/// One of the eight scale branches. Index order is local 1–4, then global 1–4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchId(usize);

impl BranchId {
    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_BRANCHES {
            return Err(Error::InvalidInput(format!("branch index {index} out of range")));
        }
        Ok(Self(index))
    }

    pub fn from_parts(encoder: Encoder, scale: usize) -> Self {
        assert!(scale < SCALES);
        match encoder {
            Encoder::Local => Self(scale),
            Encoder::Global => Self(SCALES + scale),
        }
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn encoder(self) -> Encoder {
        if self.0 < SCALES {
            Encoder::Local
        } else {
            Encoder::Global
        }
    }

    /// 0-based scale within the encoder.
    pub fn scale(self) -> usize {
        self.0 % SCALES
    }

    pub fn all() -> impl Iterator<Item = BranchId> {
        (0..NUM_BRANCHES).map(BranchId)
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.encoder() {
            Encoder::Local => 'L',
            Encoder::Global => 'G',
        };
        write!(f, "{tag}{}", self.scale() + 1)
    }
}

/// Sorted set of active branches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BranchId>", into = "Vec<BranchId>")]
pub struct BranchSet(Vec<BranchId>);

impl BranchSet {
    pub fn full() -> Self {
        Self(BranchId::all().collect())
    }

    pub fn encoder_only(encoder: Encoder) -> Self {
        Self((0..SCALES).map(|s| BranchId::from_parts(encoder, s)).collect())
    }

    pub fn new(mut ids: Vec<BranchId>) -> Result<Self> {
        ids.sort();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::InvalidInput("a model needs at least one branch".into()));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[BranchId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: BranchId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    /// Position of `id` in the fused channel order.
    pub fn position(&self, id: BranchId) -> Option<usize> {
        self.0.binary_search(&id).ok()
    }

    /// Number of encoder stages that must run: the deepest active scale + 1.
    pub fn stages_needed(&self, encoder: Encoder) -> usize {
        self.0
            .iter()
            .filter(|b| b.encoder() == encoder)
            .map(|b| b.scale() + 1)
            .max()
            .unwrap_or(0)
    }
}

impl TryFrom<Vec<BranchId>> for BranchSet {
    type Error = Error;

    fn try_from(v: Vec<BranchId>) -> Result<Self> {
        for b in &v {
            BranchId::new(b.0)?;
        }
        BranchSet::new(v)
    }
}

impl From<BranchSet> for Vec<BranchId> {
    fn from(s: BranchSet) -> Self {
        s.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_and_stage_requirements() {
        let s = BranchSet::new(vec![
            BranchId::from_parts(Encoder::Global, 1),
            BranchId::from_parts(Encoder::Local, 0),
            BranchId::from_parts(Encoder::Local, 2),
        ])
        .unwrap();
        assert_eq!(s.ids().iter().map(|b| b.to_string()).collect::<Vec<_>>(), ["L1", "L3", "G2"]);
        assert_eq!(s.stages_needed(Encoder::Local), 3);
        assert_eq!(s.stages_needed(Encoder::Global), 2);
        assert_eq!(BranchSet::encoder_only(Encoder::Local).stages_needed(Encoder::Global), 0);
    }

    #[test]
    fn out_of_range_index_rejected_on_deserialize() {
        assert!(serde_json::from_str::<BranchSet>("[0, 9]").is_err());
        assert!(serde_json::from_str::<BranchSet>("[]").is_err());
        assert_eq!(serde_json::from_str::<BranchSet>("[3, 1]").unwrap().len(), 2);
    }
}
