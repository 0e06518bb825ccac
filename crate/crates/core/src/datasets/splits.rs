//! Cluster-aware train/val/test assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotations::chain_key;
use super::labels::is_fully_labeled;
use super::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown split {s:?} (expected train, val or test)"))
    }
}

/// Fractions of the fully labelled pool sent to train and val; test takes
/// the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 328.0 / 1327.0,
            val: 530.0 / 1327.0,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.train) || !ok(self.val) || self.train + self.val > 1.0 {
            return Err(Error::config(format!(
                "split fractions train={} val={} must lie in [0, 1] and sum to at most 1",
                self.train, self.val
            )));
        }
        Ok(())
    }

    fn counts(&self, n: usize) -> (usize, usize) {
        let train = (self.train * n as f64).round() as usize;
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val)
    }
}

/// Why a complex ended up where it did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub fully_labeled: bool,
    /// Cluster id of each chain, as read from the cluster file.
    pub chain_clusters: BTreeMap<String, String>,
    /// Representative of the merged cluster group of this complex.
    pub group: String,
    /// `None` when the sample was excluded for sharing a group with test.
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitProvenance {
    pub seed: u64,
    /// Clusters sharing a complex are merged transitively (union-find).
    pub merge_rule: String,
    pub samples: BTreeMap<String, SampleProvenance>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub provenance: SplitProvenance,
}

impl SplitAssignment {
    pub fn members(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.members(split).count()
    }

    /// The `{complex_id: split}` document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.assignment).expect("string map serializes")
    }

    pub fn from_json(text: &str) -> Result<BTreeMap<String, Split>> {
        crate::structio::from_json_str(text)
    }

    /// Verifies that no merged cluster group holds both a train and a test complex.
    pub fn check_leakage(&self) -> Result<()> {
        let groups_of = |split: Split| -> BTreeSet<&str> {
            self.provenance
                .samples
                .values()
                .filter(|p| p.split == Some(split))
                .map(|p| p.group.as_str())
                .collect()
        };
        let test = groups_of(Split::Test);
        let leaked: Vec<&str> = groups_of(Split::Train).intersection(&test).copied().collect();
        if leaked.is_empty() {
            Ok(())
        } else {
            Err(Error::input(format!("cluster groups shared by train and test: {}", leaked.join(", "))))
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// The smaller index becomes the root, so the representative of a group
    /// is its lexicographically smallest cluster id.
    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            self.parent[hi] = lo;
        }
    }
}

/// Assigns fully labelled samples randomly by `fractions`; partially
/// labelled samples join train only when their cluster group holds no test
/// complex.
pub fn assemble_splits(
    samples: &[Sample],
    clusters: &BTreeMap<String, String>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitAssignment> {
    fractions.validate()?;
    let mut seen = BTreeSet::new();
    for s in samples {
        if !seen.insert(s.record.complex_id.as_str()) {
            return Err(Error::input(format!("duplicate complex id {}", s.record.complex_id)));
        }
    }
    let missing: Vec<String> = samples
        .iter()
        .flat_map(|s| s.record.chains.iter().map(|c| chain_key(&s.record.complex_id, &c.chain_id)))
        .filter(|k| !clusters.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::input(format!("chains missing from cluster file: {}", missing.join(", "))));
    }

    // BTreeSet order makes index order equal to lexicographic id order.
    let ids: Vec<&str> = clusters.values().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut uf = UnionFind::new(ids.len());
    let chain_clusters: Vec<BTreeMap<String, String>> = samples
        .iter()
        .map(|s| {
            s.record
                .chains
                .iter()
                .map(|c| (c.chain_id.clone(), clusters[&chain_key(&s.record.complex_id, &c.chain_id)].clone()))
                .collect()
        })
        .collect();
    for cc in &chain_clusters {
        let mut it = cc.values().map(|c| index[c.as_str()]);
        if let Some(first) = it.next() {
            for other in it {
                uf.union(first, other);
            }
        }
    }
    let groups: Vec<Option<usize>> = chain_clusters
        .iter()
        .map(|cc| cc.values().next().map(|c| uf.find(index[c.as_str()])))
        .collect();

    let full: Vec<bool> = samples
        .iter()
        .map(|s| is_fully_labeled(&s.labels, s.record.chains.iter().map(|c| c.chain_id.as_str())))
        .collect();
    let mut pool: Vec<usize> = (0..samples.len()).filter(|&i| full[i]).collect();
    pool.sort_by(|&a, &b| samples[a].record.complex_id.cmp(&samples[b].record.complex_id));
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val) = fractions.counts(pool.len());

    let mut split: Vec<Option<Split>> = vec![None; samples.len()];
    let mut notes: Vec<Option<String>> = vec![None; samples.len()];
    for (rank, &i) in pool.iter().enumerate() {
        split[i] = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    let test_groups: BTreeSet<usize> = (0..samples.len())
        .filter(|&i| split[i] == Some(Split::Test))
        .filter_map(|i| groups[i])
        .collect();
    let touches_test = |i: usize| groups[i].is_some_and(|g| test_groups.contains(&g));
    for i in 0..samples.len() {
        if full[i] {
            if split[i] == Some(Split::Train) && touches_test(i) {
                split[i] = Some(Split::Val);
                notes[i] = Some("moved from train to val: shares a cluster group with test".into());
            }
        } else if touches_test(i) {
            notes[i] = Some("excluded: shares a cluster group with test".into());
        } else {
            split[i] = Some(Split::Train);
        }
    }

    let assignment = samples
        .iter()
        .zip(&split)
        .filter_map(|(s, sp)| sp.map(|sp| (s.record.complex_id.clone(), sp)))
        .collect();
    let provenance = SplitProvenance {
        seed,
        merge_rule: "transitive union of clusters sharing a complex; representative is the smallest cluster id"
            .into(),
        samples: samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = SampleProvenance {
                    fully_labeled: full[i],
                    chain_clusters: chain_clusters[i].clone(),
                    group: groups[i].map(|g| ids[g].to_string()).unwrap_or_default(),
                    split: split[i],
                    note: notes[i].take(),
                };
                (s.record.complex_id.clone(), p)
            })
            .collect(),
    };
    let out = SplitAssignment { assignment, provenance };
    out.check_leakage()?;
    Ok(out)
}
