use std::collections::BTreeMap;

use bitvec::vec::BitVec;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tasks::{LabelDims, TaskId};

/// Fixed-length binary label vector of one property task.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVec(BitVec);

impl LabelVec {
    pub fn zeros(dim: usize) -> Self {
        Self(BitVec::repeat(false, dim))
    }

    pub fn from_indices(dim: usize, on: &[usize]) -> Result<Self> {
        let mut v = Self::zeros(dim);
        for &i in on {
            v.set(i)?;
        }
        Ok(v)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self(bits.iter().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::input(format!(
                "label index {i} out of range 0..{}",
                self.dim()
            )));
        }
        self.0.set(i, true);
        Ok(())
    }

    /// Bitwise OR, used when merging duplicate annotations.
    pub fn union_with(&mut self, other: &LabelVec) {
        self.0 |= other.0.as_bitslice();
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter_ones()
    }

    pub fn count_ones(&self) -> usize {
        self.0.count_ones()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.0.iter().map(|b| *b).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelVecRepr {
    dim: usize,
    on: Vec<usize>,
}

impl Serialize for LabelVec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        LabelVecRepr {
            dim: self.dim(),
            on: self.ones().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelVec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = LabelVecRepr::deserialize(d)?;
        if r.dim == 0 {
            return Err(serde::de::Error::custom("label dimension must be positive"));
        }
        LabelVec::from_indices(r.dim, &r.on).map_err(serde::de::Error::custom)
    }
}

/// The four optional property label vectors of one chain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyLabels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ec: Option<LabelVec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mf: Option<LabelVec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bp: Option<LabelVec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cc: Option<LabelVec>,
}

impl PropertyLabels {
    pub fn get(&self, task: TaskId) -> Option<&LabelVec> {
        match task {
            TaskId::Ec => self.ec.as_ref(),
            TaskId::Mf => self.mf.as_ref(),
            TaskId::Bp => self.bp.as_ref(),
            TaskId::Cc => self.cc.as_ref(),
            TaskId::Lba | TaskId::Ppa => None,
        }
    }

    pub fn slot(&mut self, task: TaskId) -> &mut Option<LabelVec> {
        match task {
            TaskId::Ec => &mut self.ec,
            TaskId::Mf => &mut self.mf,
            TaskId::Bp => &mut self.bp,
            TaskId::Cc => &mut self.cc,
            TaskId::Lba | TaskId::Ppa => panic!("{task} is not a property task"),
        }
    }

    pub fn has_all(&self) -> bool {
        TaskId::PROPERTY.iter().all(|&t| self.get(t).is_some())
    }

    pub fn is_empty(&self) -> bool {
        TaskId::PROPERTY.iter().all(|&t| self.get(t).is_none())
    }

    /// Merges `other` into `self`, OR-ing vectors present in both.
    pub fn merge(&mut self, other: &PropertyLabels) {
        for t in TaskId::PROPERTY {
            if let Some(v) = other.get(t) {
                match self.slot(t) {
                    Some(mine) => mine.union_with(v),
                    slot @ None => *slot = Some(v.clone()),
                }
            }
        }
    }
}

/// Every label known for one complex; absent entries are simply missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleLabels {
    /// Ligand-binding affinity in pK units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lba: Option<f64>,
    /// Protein-protein affinity in pK units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppa: Option<f64>,
    #[serde(default)]
    pub chains: BTreeMap<String, PropertyLabels>,
}

impl SampleLabels {
    pub fn affinity(&self, task: TaskId) -> Option<f64> {
        match task {
            TaskId::Lba => self.lba,
            TaskId::Ppa => self.ppa,
            _ => None,
        }
    }

    /// Whether any chain (for property tasks) or the complex carries `task`.
    pub fn has(&self, task: TaskId) -> bool {
        if task.is_affinity() {
            self.affinity(task).is_some()
        } else {
            self.chains.values().any(|c| c.get(task).is_some())
        }
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        TaskId::ALL.into_iter().filter(|&t| self.has(t)).collect()
    }

    /// Chains carrying `task`, in chain-id order.
    pub fn chains_with(&self, task: TaskId) -> impl Iterator<Item = (&str, &LabelVec)> {
        self.chains
            .iter()
            .filter_map(move |(id, p)| p.get(task).map(|v| (id.as_str(), v)))
    }

    /// Checks the label invariants against the configured dimensions.
    pub fn validate(&self, dims: &LabelDims) -> Result<()> {
        if self.lba.is_some() && self.ppa.is_some() {
            return Err(Error::input("a sample carries at most one affinity label"));
        }
        for (task, v) in [(TaskId::Lba, self.lba), (TaskId::Ppa, self.ppa)] {
            if let Some(v) = v.filter(|v| !v.is_finite()) {
                return Err(Error::input(format!("{task} affinity {v} is not finite")));
            }
        }
        for (chain, p) in &self.chains {
            for t in TaskId::PROPERTY {
                if let Some(v) = p.get(t) {
                    if v.dim() != dims.dim(t) {
                        return Err(Error::input(format!(
                            "chain {chain}: {t} vector has {} entries, expected {}",
                            v.dim(),
                            dims.dim(t)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Keeps only the labels of `tasks`.
    pub fn restricted_to(&self, tasks: &[TaskId]) -> SampleLabels {
        let keep = |t: TaskId| tasks.contains(&t);
        let chains = self
            .chains
            .iter()
            .map(|(id, p)| {
                let mut q = PropertyLabels::default();
                for t in TaskId::PROPERTY.into_iter().filter(|&t| keep(t)) {
                    *q.slot(t) = p.get(t).cloned();
                }
                (id.clone(), q)
            })
            .filter(|(_, q)| !q.is_empty())
            .collect();
        SampleLabels {
            lba: self.lba.filter(|_| keep(TaskId::Lba)),
            ppa: self.ppa.filter(|_| keep(TaskId::Ppa)),
            chains,
        }
    }
}

/// True iff exactly one affinity label is present and every chain in
/// `chain_ids` carries all four property vectors.
pub fn is_fully_labeled<'a>(labels: &SampleLabels, chain_ids: impl IntoIterator<Item = &'a str>) -> bool {
    let one_affinity = labels.lba.is_some() != labels.ppa.is_some();
    one_affinity
        && chain_ids
            .into_iter()
            .all(|c| labels.chains.get(c).is_some_and(PropertyLabels::has_all))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_vec_serde_and_bounds() {
        let v = LabelVec::from_indices(6, &[4, 1, 4]).unwrap();
        assert_eq!(v.ones().collect::<Vec<_>>(), vec![1, 4]);
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, r#"{"dim":6,"on":[1,4]}"#);
        assert_eq!(serde_json::from_str::<LabelVec>(&text).unwrap(), v);
        assert!(serde_json::from_str::<LabelVec>(r#"{"dim":6,"on":[6]}"#).is_err());
        assert!(LabelVec::zeros(3).set(3).is_err());
    }

    #[test]
    fn merge_is_or() {
        let mut a = PropertyLabels {
            ec: Some(LabelVec::from_indices(4, &[0]).unwrap()),
            ..Default::default()
        };
        let b = PropertyLabels {
            ec: Some(LabelVec::from_indices(4, &[2]).unwrap()),
            cc: Some(LabelVec::from_indices(2, &[1]).unwrap()),
            ..Default::default()
        };
        a.merge(&b);
        assert_eq!(a.ec.as_ref().unwrap().ones().collect::<Vec<_>>(), vec![0, 2]);
        assert!(a.cc.is_some() && a.mf.is_none());
        let before = a.clone();
        a.merge(&b);
        assert_eq!(a, before);
    }

    #[test]
    fn validate_rejects_two_affinities() {
        let l = SampleLabels {
            lba: Some(5.0),
            ppa: Some(6.0),
            ..Default::default()
        };
        assert!(l.validate(&LabelDims::default()).is_err());
    }

    #[test]
    fn restriction_drops_other_tasks() {
        let full = PropertyLabels {
            ec: Some(LabelVec::zeros(2)),
            mf: Some(LabelVec::zeros(2)),
            bp: Some(LabelVec::zeros(2)),
            cc: Some(LabelVec::zeros(2)),
        };
        let l = SampleLabels {
            lba: Some(7.0),
            ppa: None,
            chains: [("A".to_string(), full)].into(),
        };
        let r = l.restricted_to(&[TaskId::Ppa, TaskId::Ec]);
        assert_eq!(r.tasks(), vec![TaskId::Ec]);
        assert_eq!(r.lba, None);
    }
}
