//! Fixed-column ATOM/HETATM reader and writer.
//!
//! Only the first model is read. Hydrogens, waters and common additives are
//! dropped; alternate locations keep the highest-occupancy copy.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::elements::Element;
use super::record::{Atom, Chain, ComplexRecord, LigandAtom, Residue};
use super::residues::{ResidueType, DISCARDED_HET, MAX_CHANNELS, MODIFIED_RESIDUES};
use crate::error::{Error, Result};

/// A parsed structure plus everything that was silently repaired.
#[derive(Debug, Clone)]
pub struct PdbParse {
    pub record: ComplexRecord,
    pub warnings: Vec<String>,
    /// Heavy atoms dropped because a residue exceeded the channel cap.
    pub truncated_atoms: usize,
}

fn field(line: &str, start: usize, end: usize) -> &str {
    // columns are 1-based inclusive
    let s = start - 1;
    if s >= line.len() {
        return "";
    }
    line.get(s..end.min(line.len())).unwrap_or("")
}

fn parse_coord(line: &str, start: usize, end: usize, lineno: usize, what: &str) -> Result<f64> {
    let raw = field(line, start, end).trim();
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line: lineno,
        message: format!("malformed {what} coordinate {raw:?} (columns {start}-{end})"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line: lineno,
            message: format!("non-finite {what} coordinate"),
        });
    }
    Ok(v)
}

fn infer_element(name_field: &str, hetatm: bool) -> Option<Element> {
    let letters: String = name_field
        .trim()
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .collect();
    if letters.is_empty() {
        return None;
    }
    // Two-letter symbols are left-justified in column 13 by convention.
    let left_justified = !name_field.starts_with(' ');
    if hetatm && left_justified && letters.len() >= 2 {
        if let Some(e) = Element::from_symbol(&letters[..2]) {
            return Some(e);
        }
    }
    Element::from_symbol(&letters[..1])
}

struct PendingAtom {
    name: String,
    element: Element,
    xyz: [f64; 3],
    occupancy: f64,
}

#[derive(Default)]
struct PendingResidue {
    res_name: String,
    atoms: Vec<PendingAtom>,
}

type ResidueKey = (i64, char);

#[derive(Default)]
struct PendingChain {
    residues: HashMap<ResidueKey, PendingResidue>,
    order: Vec<ResidueKey>,
}

/// Parses the ATOM/HETATM subset of a PDB file.
pub fn parse_pdb_subset(text: &str, complex_id: &str) -> Result<PdbParse> {
    let mut warnings = Vec::new();
    let mut chain_order: Vec<String> = Vec::new();
    let mut chains: HashMap<String, PendingChain> = HashMap::new();
    let mut uniprot: HashMap<String, String> = HashMap::new();
    let mut ligand: Vec<PendingAtom> = Vec::new();
    let mut ligand_keys: Vec<String> = Vec::new();
    let mut seen_model = false;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        let record = field(line, 1, 6).trim_end();
        match record {
            "MODEL" => {
                if seen_model {
                    break;
                }
                seen_model = true;
                continue;
            }
            "ENDMDL" | "END" => break,
            "DBREF" => {
                let chain_id = field(line, 13, 13).trim().to_string();
                if field(line, 27, 32).trim() == "UNP" {
                    let acc = field(line, 34, 41).trim();
                    if !acc.is_empty() {
                        uniprot.entry(chain_id).or_insert_with(|| acc.to_string());
                    }
                }
                continue;
            }
            "ATOM" | "HETATM" => {}
            _ => continue,
        }
        let hetatm = record == "HETATM";
        let name_field = field(line, 13, 16);
        let name = name_field.trim().to_string();
        let res_name = field(line, 18, 20).trim().to_uppercase();
        let element = match field(line, 77, 78).trim() {
            "D" | "d" => continue,
            "" => infer_element(name_field, hetatm),
            sym => Element::from_symbol(sym),
        };
        let Some(element) = element else {
            return Err(Error::Parse {
                line: lineno,
                message: format!("cannot determine the element of atom {name:?}"),
            });
        };
        if element.is_hydrogen() {
            continue;
        }
        if hetatm && DISCARDED_HET.contains(&res_name.as_str()) {
            continue;
        }
        let xyz = [
            parse_coord(line, 31, 38, lineno, "x")?,
            parse_coord(line, 39, 46, lineno, "y")?,
            parse_coord(line, 47, 54, lineno, "z")?,
        ];
        let occ_raw = field(line, 55, 60).trim();
        let occupancy = if occ_raw.is_empty() {
            1.0
        } else {
            occ_raw.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("malformed occupancy {occ_raw:?}"),
            })?
        };
        let atom = PendingAtom {
            name,
            element,
            xyz,
            occupancy,
        };
        let in_polymer = !hetatm || MODIFIED_RESIDUES.contains(&res_name.as_str());
        if !in_polymer {
            // alternate locations of one ligand atom share this key
            let key = format!("{}|{}|{}", field(line, 22, 27), res_name, atom.name);
            match ligand_keys.iter().position(|k| *k == key) {
                Some(k) if atom.occupancy > ligand[k].occupancy => ligand[k] = atom,
                Some(_) => {}
                None => {
                    ligand_keys.push(key);
                    ligand.push(atom);
                }
            }
            continue;
        }
        let chain_id = match field(line, 22, 22).trim() {
            "" => "A".to_string(),
            c => c.to_string(),
        };
        let seq_raw = field(line, 23, 26).trim();
        let seq: i64 = seq_raw.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("malformed residue sequence number {seq_raw:?}"),
        })?;
        let icode = field(line, 27, 27).chars().next().unwrap_or(' ');
        let chain = chains.entry(chain_id.clone()).or_insert_with(|| {
            chain_order.push(chain_id.clone());
            PendingChain::default()
        });
        let key = (seq, icode);
        let res = chain.residues.entry(key).or_insert_with(|| {
            chain.order.push(key);
            PendingResidue {
                res_name: res_name.clone(),
                atoms: Vec::new(),
            }
        });
        // alternate locations: keep the highest occupancy, first seen on ties
        match res.atoms.iter_mut().find(|a| a.name == atom.name) {
            Some(existing) if atom.occupancy > existing.occupancy => *existing = atom,
            Some(_) => {}
            None => res.atoms.push(atom),
        }
    }

    let mut truncated_atoms = 0;
    let mut out_chains = Vec::new();
    for chain_id in chain_order {
        let mut pending = chains.remove(&chain_id).unwrap();
        let mut keys = pending.order.clone();
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut residues = Vec::new();
        for key in keys {
            let res = pending.residues.remove(&key).unwrap();
            let kind = ResidueType::from_code(&res.res_name).unwrap_or(ResidueType::Unk);
            let mut atoms: Vec<Atom> = res
                .atoms
                .into_iter()
                .map(|a| Atom {
                    name: a.name,
                    element: a.element,
                    xyz: a.xyz,
                })
                .collect();
            atoms.sort_by_key(|a| kind.atom_rank(&a.name));
            if atoms.len() > MAX_CHANNELS {
                let extra = atoms.len() - MAX_CHANNELS;
                warnings.push(format!(
                    "chain {chain_id} residue {}{} ({}): dropped {extra} atoms beyond {MAX_CHANNELS} channels",
                    key.0,
                    key.1.to_string().trim(),
                    res.res_name
                ));
                truncated_atoms += extra;
                atoms.truncate(MAX_CHANNELS);
            }
            residues.push(Residue { kind, atoms });
        }
        out_chains.push(Chain {
            uniprot_id: uniprot.get(&chain_id).cloned(),
            chain_id,
            residues,
        });
    }

    let ligand_atoms: Vec<LigandAtom> = ligand
        .into_iter()
        .map(|a| LigandAtom {
            element: a.element,
            xyz: a.xyz,
        })
        .collect();

    if out_chains.is_empty() && ligand_atoms.is_empty() {
        return Err(Error::input("structure contains no heavy atoms"));
    }
    let partition = ComplexRecord::default_partition(&out_chains, !ligand_atoms.is_empty());
    let record = ComplexRecord {
        complex_id: complex_id.to_string(),
        chains: out_chains,
        ligand_atoms,
        partition,
    };
    record.validate()?;
    Ok(PdbParse {
        record,
        warnings,
        truncated_atoms,
    })
}

fn atom_name_field(name: &str, element: Element) -> String {
    if name.len() >= 4 || element.symbol().len() == 2 {
        format!("{name:<4}")
    } else {
        format!(" {name:<3}")
    }
}

/// Writes a record as ATOM/HETATM lines. Chain ids are truncated to one
/// character; coordinates are rounded to the format's three decimals.
pub fn write_pdb(rec: &ComplexRecord) -> String {
    let mut out = String::new();
    for c in &rec.chains {
        if let Some(acc) = &c.uniprot_id {
            let id: String = rec.complex_id.chars().take(4).collect();
            let _ = writeln!(
                out,
                "DBREF  {id:<4} {:1}    1  {:4}  UNP    {acc:<8} {acc:<12}",
                c.chain_id.chars().next().unwrap_or('A'),
                c.residues.len(),
            );
        }
    }
    let mut serial = 1;
    for c in &rec.chains {
        let chain_char = c.chain_id.chars().next().unwrap_or('A');
        for (ri, res) in c.residues.iter().enumerate() {
            for atom in &res.atoms {
                let _ = writeln!(
                    out,
                    "ATOM  {:>5} {} {:>3} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
                    serial % 100_000,
                    atom_name_field(&atom.name, atom.element),
                    res.kind.code(),
                    chain_char,
                    ri + 1,
                    atom.xyz[0],
                    atom.xyz[1],
                    atom.xyz[2],
                    1.0,
                    0.0,
                    atom.element.symbol().to_uppercase(),
                );
                serial += 1;
            }
        }
        let _ = writeln!(out, "TER");
    }
    for (k, atom) in rec.ligand_atoms.iter().enumerate() {
        let name = format!("{}{}", atom.element.symbol().to_uppercase(), k + 1);
        let _ = writeln!(
            out,
            "HETATM{:>5} {} LIG L 900    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
            serial % 100_000,
            atom_name_field(&name.chars().take(4).collect::<String>(), atom.element),
            atom.xyz[0],
            atom.xyz[1],
            atom.xyz[2],
            1.0,
            0.0,
            atom.element.symbol().to_uppercase(),
        );
        serial += 1;
    }
    out.push_str("END\n");
    out
}
