use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[rustfmt::skip]
const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

/// Elements that are neither metals nor part of the named vocabulary.
const NONMETALS: [u8; 24] = [
    1, 2, 5, 6, 7, 8, 9, 10, 14, 15, 16, 17, 18, 32, 33, 34, 35, 36, 51, 52, 53, 54, 85, 86,
];

/// A chemical element, stored by atomic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const H: Element = Element(1);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const S: Element = Element(16);

    pub fn from_atomic_number(z: u8) -> Option<Self> {
        (1..=118).contains(&z).then_some(Self(z))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize - 1]
    }

    /// Case-insensitive symbol lookup ("CL", "cl" and "Cl" all name chlorine).
    pub fn from_symbol(s: &str) -> Option<Self> {
        let s = s.trim();
        SYMBOLS
            .iter()
            .position(|sym| sym.eq_ignore_ascii_case(s))
            .map(|i| Self(i as u8 + 1))
    }

    pub fn is_hydrogen(self) -> bool {
        self.0 == 1
    }

    pub fn is_metal(self) -> bool {
        !NONMETALS.contains(&self.0)
    }

    pub fn class(self) -> ElementClass {
        use ElementClass::*;
        match self.0 {
            6 => C,
            7 => N,
            8 => O,
            16 => S,
            15 => P,
            9 => F,
            17 => Cl,
            35 => Br,
            53 => I,
            5 => B,
            34 => Se,
            _ if self.is_metal() => Metal,
            _ => Other,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_symbol(s).ok_or_else(|| format!("unknown element symbol {s:?}"))
    }
}

impl Serialize for Element {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The element vocabulary used for channel attributes and ligand embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementClass {
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
    B,
    Se,
    Metal,
    Other,
}

impl ElementClass {
    pub const COUNT: usize = 13;

    pub const ALL: [ElementClass; 13] = [
        Self::C,
        Self::N,
        Self::O,
        Self::S,
        Self::P,
        Self::F,
        Self::Cl,
        Self::Br,
        Self::I,
        Self::B,
        Self::Se,
        Self::Metal,
        Self::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for z in 1..=118u8 {
            let e = Element::from_atomic_number(z).unwrap();
            assert_eq!(Element::from_symbol(e.symbol()), Some(e));
        }
        assert_eq!(Element::from_symbol("CL").unwrap().symbol(), "Cl");
        assert_eq!(Element::from_symbol("Xx"), None);
    }

    #[test]
    fn vocabulary_classes() {
        assert_eq!(Element::from_symbol("Zn").unwrap().class(), ElementClass::Metal);
        assert_eq!(Element::from_symbol("Na").unwrap().class(), ElementClass::Metal);
        assert_eq!(Element::from_symbol("Si").unwrap().class(), ElementClass::Other);
        assert_eq!(Element::from_symbol("Se").unwrap().class(), ElementClass::Se);
        let idx: Vec<usize> = ElementClass::ALL.iter().map(|c| c.index()).collect();
        assert_eq!(idx, (0..ElementClass::COUNT).collect::<Vec<_>>());
    }
}
