use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Maximum number of heavy-atom channels of a residue node.
pub const MAX_CHANNELS: usize = 14;

/// The 20 canonical amino acids plus `UNK` for anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResidueType {
    Ala,
    Arg,
    Asn,
    Asp,
    Cys,
    Gln,
    Glu,
    Gly,
    His,
    Ile,
    Leu,
    Lys,
    Met,
    Phe,
    Pro,
    Ser,
    Thr,
    Trp,
    Tyr,
    Val,
    Unk,
}

impl ResidueType {
    pub const COUNT: usize = 21;

    pub const CANONICAL: [ResidueType; 20] = [
        Self::Ala,
        Self::Arg,
        Self::Asn,
        Self::Asp,
        Self::Cys,
        Self::Gln,
        Self::Glu,
        Self::Gly,
        Self::His,
        Self::Ile,
        Self::Leu,
        Self::Lys,
        Self::Met,
        Self::Phe,
        Self::Pro,
        Self::Ser,
        Self::Thr,
        Self::Trp,
        Self::Tyr,
        Self::Val,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        use ResidueType::*;
        match self {
            Ala => "ALA",
            Arg => "ARG",
            Asn => "ASN",
            Asp => "ASP",
            Cys => "CYS",
            Gln => "GLN",
            Glu => "GLU",
            Gly => "GLY",
            His => "HIS",
            Ile => "ILE",
            Leu => "LEU",
            Lys => "LYS",
            Met => "MET",
            Phe => "PHE",
            Pro => "PRO",
            Ser => "SER",
            Thr => "THR",
            Trp => "TRP",
            Tyr => "TYR",
            Val => "VAL",
            Unk => "UNK",
        }
    }

    /// Canonical code lookup; `None` for non-canonical residue names.
    pub fn from_code(code: &str) -> Option<Self> {
        let code = code.trim();
        Self::CANONICAL
            .iter()
            .chain(&[Self::Unk])
            .copied()
            .find(|r| r.code().eq_ignore_ascii_case(code))
    }

    /// Heavy atoms in canonical channel order: backbone N, CA, C, O first,
    /// then the side chain in standard PDB naming order.
    pub fn atom_order(self) -> &'static [&'static str] {
        use ResidueType::*;
        match self {
            Ala => &["N", "CA", "C", "O", "CB"],
            Arg => &["N", "CA", "C", "O", "CB", "CG", "CD", "NE", "CZ", "NH1", "NH2"],
            Asn => &["N", "CA", "C", "O", "CB", "CG", "OD1", "ND2"],
            Asp => &["N", "CA", "C", "O", "CB", "CG", "OD1", "OD2"],
            Cys => &["N", "CA", "C", "O", "CB", "SG"],
            Gln => &["N", "CA", "C", "O", "CB", "CG", "CD", "OE1", "NE2"],
            Glu => &["N", "CA", "C", "O", "CB", "CG", "CD", "OE1", "OE2"],
            Gly => &["N", "CA", "C", "O"],
            His => &["N", "CA", "C", "O", "CB", "CG", "ND1", "CD2", "CE1", "NE2"],
            Ile => &["N", "CA", "C", "O", "CB", "CG1", "CG2", "CD1"],
            Leu => &["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2"],
            Lys => &["N", "CA", "C", "O", "CB", "CG", "CD", "CE", "NZ"],
            Met => &["N", "CA", "C", "O", "CB", "CG", "SD", "CE"],
            Phe => &["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ"],
            Pro => &["N", "CA", "C", "O", "CB", "CG", "CD"],
            Ser => &["N", "CA", "C", "O", "CB", "OG"],
            Thr => &["N", "CA", "C", "O", "CB", "OG1", "CG2"],
            Trp => &[
                "N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "NE1", "CE2", "CE3", "CZ2", "CZ3", "CH2",
            ],
            Tyr => &["N", "CA", "C", "O", "CB", "CG", "CD1", "CD2", "CE1", "CE2", "CZ", "OH"],
            Val => &["N", "CA", "C", "O", "CB", "CG1", "CG2"],
            Unk => &["N", "CA", "C", "O"],
        }
    }

    /// Position of `atom` in the canonical order; unknown names sort last.
    pub fn atom_rank(self, atom: &str) -> usize {
        self.atom_order()
            .iter()
            .position(|a| *a == atom)
            .unwrap_or(usize::MAX)
    }
}

impl fmt::Display for ResidueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ResidueType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_code(s).ok_or_else(|| format!("unknown residue type {s:?}"))
    }
}

impl Serialize for ResidueType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for ResidueType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Residue names of modified amino acids that stay in the polymer chain
/// (as `UNK`) even when written as HETATM records.
pub(crate) const MODIFIED_RESIDUES: &[&str] = &[
    "MSE", "SEP", "TPO", "PTR", "CSO", "CSD", "CME", "HYP", "MLY", "M3L", "KCX", "LLP", "OCS", "CAS",
    "PCA", "SAC", "TYS", "ALY", "CGU", "FME", "NLE", "ABA", "AIB", "DAL", "MLE", "SCH", "CSX",
];

/// Waters and frequent crystallization additives, dropped on ingest.
pub(crate) const DISCARDED_HET: &[&str] = &[
    "HOH", "WAT", "DOD", "H2O", "GOL", "EDO", "PEG", "PGE", "PG4", "1PE", "P6G", "SO4", "PO4",
    "ACT", "ACY", "DMS", "FMT", "MPD", "TRS", "BME", "EPE", "MES", "IMD", "CIT", "NA", "CL", "K",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_tables_fit_the_channel_cap() {
        for r in ResidueType::CANONICAL {
            let order = r.atom_order();
            assert!(order.len() <= MAX_CHANNELS, "{r}");
            assert_eq!(&order[..4], &["N", "CA", "C", "O"]);
            let mut unique = order.to_vec();
            unique.sort();
            unique.dedup();
            assert_eq!(unique.len(), order.len(), "{r}");
        }
        assert_eq!(ResidueType::Trp.atom_order().len(), MAX_CHANNELS);
    }

    #[test]
    fn codes_round_trip() {
        for r in ResidueType::CANONICAL.iter().chain(&[ResidueType::Unk]) {
            assert_eq!(ResidueType::from_code(r.code()), Some(*r));
            assert_eq!(r.index(), *r as usize);
        }
        assert_eq!(ResidueType::from_code("MSE"), None);
    }
}
