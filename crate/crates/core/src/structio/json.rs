//! Canonical JSON interchange for [`ComplexRecord`].
//!
//! Output is compact, keys appear in schema order (partition keys sorted) and
//! every float is written with 17 significant digits, so identical records
//! always serialize to identical bytes and parsing restores them bit-exactly.

use std::io;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::Formatter;

use super::record::ComplexRecord;
use crate::error::{Error, Result};

/// `serde_json` formatter writing floats in `d.dddddddddddddddde±x` form.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignificantDigits;

impl Formatter for SignificantDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Serializes any value with the canonical float format.
pub fn to_canonical_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SignificantDigits);
    value
        .serialize(&mut ser)
        .expect("serializing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Deserializes `text`, reporting failures at their JSON path.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema {
            path: if path == "." { "$".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

pub fn write_canonical_json(rec: &ComplexRecord) -> String {
    to_canonical_string(rec)
}

pub fn parse_canonical_json(text: &str) -> Result<ComplexRecord> {
    let rec: ComplexRecord = from_json_str(text)?;
    rec.validate()?;
    Ok(rec)
}

/// One record per nonblank line.
pub fn parse_ndjson(text: &str) -> Result<Vec<ComplexRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_canonical_json(l).map_err(|e| match e {
                Error::Schema { path, message } => Error::Schema {
                    path: format!("line {}: {path}", i + 1),
                    message,
                },
                other => other,
            })
        })
        .collect()
}

pub fn write_ndjson(records: &[ComplexRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&write_canonical_json(r));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structio::{Atom, Chain, Element, Entity, LigandAtom, Residue, ResidueType};

    fn sample() -> ComplexRecord {
        ComplexRecord {
            complex_id: "1abc".into(),
            chains: vec![Chain {
                chain_id: "A".into(),
                uniprot_id: Some("P00734".into()),
                residues: vec![Residue {
                    kind: ResidueType::Gly,
                    atoms: vec![
                        Atom {
                            name: "N".into(),
                            element: Element::N,
                            xyz: [0.1, -2.0 / 3.0, 1e-300],
                        },
                        Atom {
                            name: "CA".into(),
                            element: Element::C,
                            xyz: [-0.0, 12345.678901234567, 5.0],
                        },
                    ],
                }],
            }],
            ligand_atoms: vec![LigandAtom {
                element: Element::from_symbol("Br").unwrap(),
                xyz: [1.0, 2.0, 3.0],
            }],
            partition: [("A".to_string(), Entity::Receptor)].into(),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let rec = sample();
        let text = write_canonical_json(&rec);
        let back = parse_canonical_json(&text).unwrap();
        assert_eq!(back, rec);
        assert_eq!(write_canonical_json(&back), text);
        // bitwise, including the sign of zero
        assert!(back.chains[0].residues[0].atoms[1].xyz[0].is_sign_negative());
    }

    #[test]
    fn floats_carry_17_significant_digits() {
        let text = write_canonical_json(&sample());
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains(r#""partition":{"A":"receptor"}"#));
    }

    #[test]
    fn missing_coordinates_are_located() {
        let text = write_canonical_json(&sample());
        let broken = text.replacen(r#","xyz":[1.0000000000000001e-1,-6.6666666666666663e-1,1.0000000000000000e-300]"#, "", 1);
        assert_ne!(broken, text);
        match parse_canonical_json(&broken) {
            Err(Error::Schema { path, message }) => {
                assert_eq!(path, "chains[0].residues[0].atoms[0]");
                assert!(message.contains("xyz"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_element_is_rejected() {
        let text = write_canonical_json(&sample()).replace(r#""element":"Br""#, r#""element":"Xx""#);
        match parse_canonical_json(&text) {
            Err(Error::Schema { path, message }) => {
                assert_eq!(path, "ligand_atoms[0].element");
                assert!(message.contains("Xx"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partition_must_cover_chains() {
        let mut rec = sample();
        rec.partition.clear();
        let text = write_canonical_json(&rec);
        assert!(matches!(
            parse_canonical_json(&text),
            Err(Error::Schema { path, .. }) if path == "partition"
        ));
    }

    #[test]
    fn ndjson_stream() {
        let mut other = sample();
        other.complex_id = "2xyz".into();
        let text = write_ndjson(&[sample(), other.clone()]);
        let back = parse_ndjson(&format!("{text}\n\n")).unwrap();
        assert_eq!(back, vec![sample(), other]);
    }
}
