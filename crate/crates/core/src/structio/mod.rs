//! Structure inputs: PDB front-end, canonical complex records and their JSON
//! interchange format.

mod elements;
mod json;
mod pdb;
mod record;
mod residues;

pub use elements::{Element, ElementClass};
pub use json::{
    from_json_str, parse_canonical_json, parse_ndjson, to_canonical_string, write_canonical_json, write_ndjson,
    SignificantDigits,
};
pub use pdb::{parse_pdb_subset, write_pdb, PdbParse};
pub use record::{filter_max_atoms, Atom, Chain, ComplexRecord, Entity, LigandAtom, Residue, DEFAULT_MAX_ATOMS};
pub use residues::{ResidueType, MAX_CHANNELS};
