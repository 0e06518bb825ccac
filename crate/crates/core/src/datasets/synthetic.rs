//! Random desk-scale complexes with labels, for tests and demos.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::annotations::chain_key;
use super::labels::{LabelVec, PropertyLabels, SampleLabels};
use super::Sample;
use crate::error::{Error, Result};
use crate::structio::{Atom, Chain, ComplexRecord, Element, LigandAtom, Residue, ResidueType};
use crate::tasks::{LabelDims, TaskId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub max_residues: usize,
    /// Primary tasks, cycled over the samples in order.
    pub task_mix: Vec<TaskId>,
    pub seed: u64,
    pub dims: LabelDims,
    /// Probability that a sample carries one affinity label plus all four
    /// property vectors on every chain.
    pub full_fraction: f64,
    /// Number of distinct chain clusters, as a fraction of the chain count.
    pub cluster_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 8,
            max_residues: 12,
            task_mix: TaskId::ALL.to_vec(),
            seed: 0,
            dims: LabelDims::uniform(8),
            full_fraction: 0.5,
            cluster_fraction: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.max_residues == 0 || self.task_mix.is_empty() {
            return Err(Error::config("n_samples, max_residues and task_mix must be positive"));
        }
        if !(0.0..=1.0).contains(&self.full_fraction) || !(self.cluster_fraction > 0.0 && self.cluster_fraction <= 1.0) {
            return Err(Error::config("full_fraction must lie in [0, 1] and cluster_fraction in (0, 1]"));
        }
        self.dims.validated().map_err(Error::config)?;
        Ok(())
    }
}

const CA_STEP: f64 = 3.8;
const BOND: f64 = 1.5;
const LIGAND_ELEMENTS: [&str; 10] = ["C", "C", "C", "C", "N", "O", "O", "S", "F", "Zn"];

fn add(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

fn direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    UnitSphere.sample(rng)
}

fn residue(kind: ResidueType, ca: [f64; 3], rng: &mut ChaCha8Rng) -> Residue {
    let mut atoms = Vec::new();
    let mut anchor = ca;
    for name in kind.atom_order() {
        let xyz = if *name == "CA" {
            ca
        } else {
            let base = if atoms.len() <= 2 { ca } else { anchor };
            let p = add(base, direction(rng), BOND);
            anchor = p;
            p
        };
        let element = Element::from_symbol(&name[..1]).expect("canonical atom names start with an element");
        atoms.push(Atom {
            name: name.to_string(),
            element,
            xyz,
        });
    }
    Residue { kind, atoms }
}

fn chain(chain_id: &str, uniprot_id: String, n: usize, start: [f64; 3], rng: &mut ChaCha8Rng) -> Chain {
    let mut ca = start;
    let residues = (0..n)
        .map(|k| {
            if k > 0 {
                ca = add(ca, direction(rng), CA_STEP);
            }
            let kind = *ResidueType::CANONICAL.choose(rng).expect("nonempty");
            residue(kind, ca, rng)
        })
        .collect();
    Chain {
        chain_id: chain_id.into(),
        uniprot_id: Some(uniprot_id),
        residues,
    }
}

fn centroid(chain: &Chain) -> [f64; 3] {
    let mut c = [0.0; 3];
    let mut n = 0.0;
    for a in chain.residues.iter().flat_map(|r| &r.atoms) {
        c = add(c, a.xyz, 1.0);
        n += 1.0;
    }
    c.map(|v| v / n)
}

fn random_labels(dim: usize, rng: &mut ChaCha8Rng) -> LabelVec {
    let mut bits: Vec<bool> = (0..dim).map(|_| rng.gen_bool(0.3)).collect();
    if !bits.contains(&true) {
        bits[rng.gen_range(0..dim)] = true;
    }
    LabelVec::from_bools(&bits)
}

/// Affinity with a weak dependence on composition plus noise, in pK units.
fn affinity(rec: &ComplexRecord, rng: &mut ChaCha8Rng) -> f64 {
    let hydrophobic = [
        ResidueType::Ala,
        ResidueType::Val,
        ResidueType::Leu,
        ResidueType::Ile,
        ResidueType::Phe,
        ResidueType::Met,
        ResidueType::Trp,
    ];
    let residues: Vec<_> = rec.chains.iter().flat_map(|c| &c.residues).collect();
    let frac = residues.iter().filter(|r| hydrophobic.contains(&r.kind)).count() as f64 / residues.len() as f64;
    let noise: f64 = Normal::new(0.0, 0.3).expect("valid sigma").sample(rng);
    4.0 + 5.0 * frac + noise
}

/// One chain of `residues` random residues plus a ligand of `ligand`
/// atoms near the chain centroid.
pub fn random_complex(complex_id: &str, residues: usize, ligand: usize, rng: &mut ChaCha8Rng) -> Result<ComplexRecord> {
    if residues == 0 {
        return Err(Error::config("a random complex needs at least one residue"));
    }
    let chains = vec![chain("A", format!("{complex_id}A"), residues, [0.0; 3], rng)];
    let mut ligand_atoms = Vec::with_capacity(ligand);
    let mut p = add(centroid(&chains[0]), direction(rng), 3.0);
    for _ in 0..ligand {
        let sym = LIGAND_ELEMENTS.choose(rng).expect("nonempty");
        ligand_atoms.push(LigandAtom {
            element: Element::from_symbol(sym).expect("known symbol"),
            xyz: p,
        });
        p = add(p, direction(rng), BOND);
    }
    let record = ComplexRecord {
        complex_id: complex_id.into(),
        partition: ComplexRecord::default_partition(&chains, ligand > 0),
        chains,
        ligand_atoms,
    };
    record.validate()?;
    Ok(record)
}

/// Draws `config.n_samples` labelled complexes. Sample `i` has primary task
/// `task_mix[i % len]`; LBA samples carry one chain plus a small ligand and
/// PPA samples two chains.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let primary = config.task_mix[i % config.task_mix.len()];
        let with_ligand = match primary {
            TaskId::Lba => true,
            TaskId::Ppa => false,
            _ => rng.gen_bool(0.5),
        };
        let complex_id = format!("syn{i:04}");
        let n_chains = if with_ligand { 1 } else { 2 };
        let mut chains = Vec::new();
        for (k, id) in ["A", "B"].iter().take(n_chains).enumerate() {
            let n = rng.gen_range(1..=config.max_residues);
            let start = [12.0 * k as f64, 0.0, 0.0];
            chains.push(chain(id, format!("SYN{i:04}{id}"), n, start, &mut rng));
        }
        let mut ligand_atoms = Vec::new();
        if with_ligand {
            let mut p = add(centroid(&chains[0]), direction(&mut rng), 4.0);
            for _ in 0..rng.gen_range(3..=12) {
                let sym = LIGAND_ELEMENTS.choose(&mut rng).expect("nonempty");
                ligand_atoms.push(LigandAtom {
                    element: Element::from_symbol(sym).expect("known symbol"),
                    xyz: p,
                });
                p = add(p, direction(&mut rng), BOND);
            }
        }
        let record = ComplexRecord {
            complex_id,
            partition: ComplexRecord::default_partition(&chains, with_ligand),
            chains,
            ligand_atoms,
        };
        record.validate()?;

        let full = rng.gen_bool(config.full_fraction);
        let affinity_task = if with_ligand { TaskId::Lba } else { TaskId::Ppa };
        let mut labels = SampleLabels::default();
        if full || primary.is_affinity() {
            let v = affinity(&record, &mut rng);
            match affinity_task {
                TaskId::Lba => labels.lba = Some(v),
                _ => labels.ppa = Some(v),
            }
        }
        for c in &record.chains {
            let mut p = PropertyLabels::default();
            for t in TaskId::PROPERTY {
                if full || t == primary {
                    *p.slot(t) = Some(random_labels(config.dims.dim(t), &mut rng));
                }
            }
            if !p.is_empty() {
                labels.chains.insert(c.chain_id.clone(), p);
            }
        }
        out.push(Sample { record, labels });
    }
    Ok(out)
}

/// Text inputs mirroring the real pipeline for a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTables {
    /// `uniprot_id \t task \t index` rows with every chain's property bits.
    pub annotations: String,
    /// `complex_id \t task \t pK` rows.
    pub affinities: String,
    /// `chain_key \t cluster_id` rows.
    pub clusters: String,
}

pub fn synthetic_tables(samples: &[Sample], cluster_fraction: f64, seed: u64) -> SyntheticTables {
    let mut annotations = String::from("uniprot_id\ttask\tindex\n");
    let mut affinities = String::from("complex_id\ttask\tpK\n");
    let mut clusters = String::from("chain_key\tcluster_id\n");
    let keys: Vec<String> = samples
        .iter()
        .flat_map(|s| s.record.chains.iter().map(|c| chain_key(&s.record.complex_id, &c.chain_id)))
        .collect();
    let n_clusters = ((keys.len() as f64 * cluster_fraction).ceil() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1u64);
    let mut by_key = BTreeMap::new();
    for k in &keys {
        by_key.insert(k.clone(), format!("clu{:04}", rng.gen_range(0..n_clusters)));
    }
    for s in samples {
        for c in &s.record.chains {
            let (Some(uniprot), Some(p)) = (&c.uniprot_id, s.labels.chains.get(&c.chain_id)) else {
                continue;
            };
            for t in TaskId::PROPERTY {
                if let Some(v) = p.get(t) {
                    for j in v.ones() {
                        annotations.push_str(&format!("{uniprot}\t{t}\t{j}\n"));
                    }
                }
            }
        }
        for t in TaskId::AFFINITY {
            if let Some(v) = s.labels.affinity(t) {
                affinities.push_str(&format!("{}\t{t}\t{v:?}\n", s.record.complex_id));
            }
        }
    }
    for (k, c) in by_key {
        clusters.push_str(&format!("{k}\t{c}\n"));
    }
    SyntheticTables {
        annotations,
        affinities,
        clusters,
    }
}
