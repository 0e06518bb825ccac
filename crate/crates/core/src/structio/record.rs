use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::elements::Element;
use super::residues::{ResidueType, MAX_CHANNELS};
use crate::error::{Error, Result};

/// Which side of a complex a chain belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    Receptor,
    LigandSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub name: String,
    pub element: Element,
    pub xyz: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Residue {
    #[serde(rename = "type")]
    pub kind: ResidueType,
    pub atoms: Vec<Atom>,
}

impl Residue {
    pub fn atom(&self, name: &str) -> Option<&Atom> {
        self.atoms.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chain {
    pub chain_id: String,
    pub uniprot_id: Option<String>,
    pub residues: Vec<Residue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LigandAtom {
    pub element: Element,
    pub xyz: [f64; 3],
}

/// A parsed complex: protein chains plus small-molecule atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexRecord {
    pub complex_id: String,
    pub chains: Vec<Chain>,
    pub ligand_atoms: Vec<LigandAtom>,
    pub partition: BTreeMap<String, Entity>,
}

fn schema(path: String, message: impl Into<String>) -> Error {
    Error::Schema {
        path,
        message: message.into(),
    }
}

fn check_xyz(path: String, xyz: &[f64; 3]) -> Result<()> {
    if xyz.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(schema(path, "coordinates must be finite"))
    }
}

impl ComplexRecord {
    /// Total heavy atoms over chains and ligand.
    pub fn atom_count(&self) -> usize {
        let protein: usize = self
            .chains
            .iter()
            .flat_map(|c| &c.residues)
            .map(|r| r.atoms.len())
            .sum();
        protein + self.ligand_atoms.len()
    }

    pub fn residue_count(&self) -> usize {
        self.chains.iter().map(|c| c.residues.len()).sum()
    }

    pub fn chain(&self, chain_id: &str) -> Option<&Chain> {
        self.chains.iter().find(|c| c.chain_id == chain_id)
    }

    /// Checks every record invariant, naming the offending JSON path.
    pub fn validate(&self) -> Result<()> {
        if self.complex_id.is_empty() {
            return Err(schema("complex_id".into(), "must be nonempty"));
        }
        if self.chains.is_empty() && self.ligand_atoms.is_empty() {
            return Err(schema("chains".into(), "record holds no atoms"));
        }
        let mut ids = BTreeSet::new();
        for (ci, chain) in self.chains.iter().enumerate() {
            let at = format!("chains[{ci}]");
            if chain.chain_id.is_empty() {
                return Err(schema(format!("{at}.chain_id"), "must be nonempty"));
            }
            if !ids.insert(chain.chain_id.as_str()) {
                return Err(schema(
                    format!("{at}.chain_id"),
                    format!("duplicate chain id {:?}", chain.chain_id),
                ));
            }
            if chain.residues.is_empty() {
                return Err(schema(format!("{at}.residues"), "chain has no residues"));
            }
            for (ri, res) in chain.residues.iter().enumerate() {
                let at = format!("{at}.residues[{ri}]");
                if res.atoms.is_empty() {
                    return Err(schema(format!("{at}.atoms"), "residue has no atoms"));
                }
                if res.atoms.len() > MAX_CHANNELS {
                    return Err(schema(
                        format!("{at}.atoms"),
                        format!("{} atoms exceed the {MAX_CHANNELS}-channel limit", res.atoms.len()),
                    ));
                }
                let mut names = BTreeSet::new();
                for (ai, atom) in res.atoms.iter().enumerate() {
                    let at = format!("{at}.atoms[{ai}]");
                    if !names.insert(atom.name.as_str()) {
                        return Err(schema(
                            format!("{at}.name"),
                            format!("duplicate atom name {:?}", atom.name),
                        ));
                    }
                    if atom.element.is_hydrogen() {
                        return Err(schema(format!("{at}.element"), "hydrogen atoms are not allowed"));
                    }
                    check_xyz(format!("{at}.xyz"), &atom.xyz)?;
                }
            }
        }
        for (li, atom) in self.ligand_atoms.iter().enumerate() {
            if atom.element.is_hydrogen() {
                return Err(schema(
                    format!("ligand_atoms[{li}].element"),
                    "hydrogen atoms are not allowed",
                ));
            }
            check_xyz(format!("ligand_atoms[{li}].xyz"), &atom.xyz)?;
        }
        let keys: BTreeSet<&str> = self.partition.keys().map(String::as_str).collect();
        if keys != ids {
            let missing: Vec<_> = ids.difference(&keys).collect();
            let extra: Vec<_> = keys.difference(&ids).collect();
            return Err(schema(
                "partition".into(),
                format!("must cover exactly the chain ids (missing {missing:?}, unknown {extra:?})"),
            ));
        }
        Ok(())
    }

    /// Default partition: with ligand atoms every chain is receptor;
    /// otherwise the first chain is receptor and the rest ligand side.
    pub fn default_partition(chains: &[Chain], has_ligand: bool) -> BTreeMap<String, Entity> {
        chains
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let side = if has_ligand || i == 0 {
                    Entity::Receptor
                } else {
                    Entity::LigandSide
                };
                (c.chain_id.clone(), side)
            })
            .collect()
    }

    /// Copy keeping only CA atoms; residues without CA are dropped, as are
    /// chains left empty.
    pub fn strip_to_calpha(&self) -> ComplexRecord {
        let chains: Vec<Chain> = self
            .chains
            .iter()
            .filter_map(|c| {
                let residues: Vec<Residue> = c
                    .residues
                    .iter()
                    .filter_map(|r| {
                        r.atom("CA").map(|ca| Residue {
                            kind: r.kind,
                            atoms: vec![ca.clone()],
                        })
                    })
                    .collect();
                (!residues.is_empty()).then(|| Chain {
                    chain_id: c.chain_id.clone(),
                    uniprot_id: c.uniprot_id.clone(),
                    residues,
                })
            })
            .collect();
        let partition = self
            .partition
            .iter()
            .filter(|(k, _)| chains.iter().any(|c| &c.chain_id == *k))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        ComplexRecord {
            complex_id: self.complex_id.clone(),
            chains,
            ligand_atoms: self.ligand_atoms.clone(),
            partition,
        }
    }

    /// Applies `f` to every coordinate.
    pub fn map_coords(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> ComplexRecord {
        let mut out = self.clone();
        for atom in out.chains.iter_mut().flat_map(|c| &mut c.residues).flat_map(|r| &mut r.atoms) {
            atom.xyz = f(atom.xyz);
        }
        for atom in &mut out.ligand_atoms {
            atom.xyz = f(atom.xyz);
        }
        out
    }
}

/// Size filter: keep iff the heavy-atom count is at most `limit`.
pub fn filter_max_atoms(rec: &ComplexRecord, limit: usize) -> bool {
    rec.atom_count() <= limit
}

pub const DEFAULT_MAX_ATOMS: usize = 15_000;
