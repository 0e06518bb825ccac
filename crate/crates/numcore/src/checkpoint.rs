//! Binary archive of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "HMCK"
//! version    u32      FORMAT_VERSION
//! dtype      u8       0 = float32, 1 = float64
//! count      u64      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rank u32, dims (u64 x rank),
//!   values   (IEEE-754, dtype width x numel)
//! ```
//!
//! Optimizer state is stored alongside the parameters under the reserved
//! `optim.` prefix so a resumed run continues the same trajectory.

use std::path::Path;

use crate::error::{NumError, Result};
use crate::params::{Moments, ParamStore};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HMCK";
pub const FORMAT_VERSION: u32 = 1;

const STEP_KEY: &str = "optim.step";
const FIRST_PREFIX: &str = "optim.m.";
const SECOND_PREFIX: &str = "optim.v.";

pub fn encode<T: Scalar>(entries: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE.tag());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            NumError::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads the dtype recorded in an archive header.
pub fn peek_dtype(bytes: &[u8]) -> Result<DType> {
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(NumError::Checkpoint("missing HMCK header".into()));
    }
    DType::from_tag(bytes[8]).ok_or_else(|| NumError::Checkpoint(format!("unknown dtype tag {}", bytes[8])))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(NumError::Checkpoint("missing HMCK header".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(NumError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let tag = r.take(1, "dtype")?[0];
    let dtype = DType::from_tag(tag).ok_or_else(|| NumError::Checkpoint(format!("unknown dtype tag {tag}")))?;
    if dtype != T::DTYPE {
        return Err(NumError::Checkpoint(format!(
            "archive holds {dtype}, requested {}",
            T::DTYPE
        )));
    }
    let count = r.u64("count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| NumError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dimension")? as usize);
        }
        let numel: usize = dims.iter().product();
        let width = dtype.size_of();
        let raw = r.take(numel * width, "values")?;
        let data = raw.chunks(width).map(T::read_le).collect();
        let tensor = Tensor::new(dims, data)
            .map_err(|e| NumError::Checkpoint(format!("tensor `{name}`: {e}")))?;
        entries.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(NumError::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Every parameter and buffer, followed by optimizer state when present.
pub fn store_entries<T: Scalar>(store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
    let mut out: Vec<(String, Tensor<T>)> = store
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.value.clone()))
        .collect();
    if store.step > 0 {
        out.push((
            STEP_KEY.to_string(),
            Tensor::from_f64([1], &[store.step as f64]).expect("one element"),
        ));
        for e in store.entries() {
            if let Some(m) = &e.moments {
                let shape = e.value.shape().to_vec();
                out.push((
                    format!("{FIRST_PREFIX}{}", e.name),
                    Tensor::new(shape.clone(), m.first.clone()).expect("moment shape"),
                ));
                out.push((
                    format!("{SECOND_PREFIX}{}", e.name),
                    Tensor::new(shape, m.second.clone()).expect("moment shape"),
                ));
            }
        }
    }
    out
}

/// Restores values (and optimizer state) into a store with the same layout.
///
/// Every store entry must be present with an identical shape; unknown names
/// are rejected.
pub fn restore_entries<T: Scalar>(store: &mut ParamStore<T>, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
    let mut seen = vec![false; store.len()];
    let mut step = 0;
    let mut moments: Vec<(crate::ParamId, bool, Vec<T>)> = Vec::new();
    for (name, tensor) in entries {
        if name == STEP_KEY {
            step = tensor.item()?.as_f64() as u64;
            continue;
        }
        let (target, first) = if let Some(rest) = name.strip_prefix(FIRST_PREFIX) {
            (rest, Some(true))
        } else if let Some(rest) = name.strip_prefix(SECOND_PREFIX) {
            (rest, Some(false))
        } else {
            (name.as_str(), None)
        };
        let id = store
            .id(target)
            .ok_or_else(|| NumError::Checkpoint(format!("unexpected tensor `{name}`")))?;
        if store.value(id).shape() != tensor.shape() {
            return Err(NumError::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                tensor.shape(),
                store.value(id).shape()
            )));
        }
        match first {
            None => {
                store.set_value(id, tensor)?;
                seen[id.index()] = true;
            }
            Some(is_first) => moments.push((id, is_first, tensor.to_vec())),
        }
    }
    if let Some(missing) = store.ids().find(|id| !seen[id.index()]) {
        return Err(NumError::Checkpoint(format!(
            "missing tensor `{}`",
            store.name(missing)
        )));
    }
    for id in store.ids().collect::<Vec<_>>() {
        store.entry_mut(id).moments = None;
    }
    for (id, is_first, data) in moments {
        let n = data.len();
        let entry = store.entry_mut(id);
        let m = entry.moments.get_or_insert_with(|| Moments {
            first: vec![T::zero(); n],
            second: vec![T::zero(); n],
        });
        if is_first {
            m.first = data;
        } else {
            m.second = data;
        }
    }
    store.step = step;
    store.zero_grad();
    Ok(())
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(&store_entries(store)))?;
    Ok(())
}

pub fn load<T: Scalar>(store: &mut ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = std::fs::read(path)?;
    restore_entries(store, decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{optimizer_step, OptimizerConfig};

    fn sample_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("layer.w", Tensor::from_f64([2, 2], &[1.0, -0.1, f64::MIN_POSITIVE, 3e300]).unwrap())
            .unwrap();
        s.insert("bias", Tensor::from_f64([3], &[0.0, -0.0, 1.0 / 3.0]).unwrap())
            .unwrap();
        s.insert_buffer("bn.var", Tensor::scalar(2.5)).unwrap();
        s
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&store_entries(&sample_store()));
        assert_eq!(&bytes[..4], b"HMCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 1);
        assert_eq!(u64::from_le_bytes(bytes[9..17].try_into().unwrap()), 3);
        // first name
        assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 7);
        assert_eq!(&bytes[21..28], b"layer.w");
    }

    #[test]
    fn bit_exact_roundtrip_with_optimizer_state() {
        let mut store = sample_store();
        for id in store.ids().collect::<Vec<_>>() {
            let g = store.value(id).map(|v| v * 1e-300 + 0.25);
            store.accumulate_grad(id, &g).unwrap();
        }
        optimizer_step(&mut store, &OptimizerConfig::adam(1e-3)).unwrap();
        let bytes = encode(&store_entries(&store));

        let mut restored = sample_store();
        restore_entries(&mut restored, decode(&bytes).unwrap()).unwrap();
        assert_eq!(restored.step, 1);
        for (a, b) in store.entries().iter().zip(restored.entries()) {
            let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
            assert_eq!(a.moments, b.moments);
        }
        assert_eq!(encode(&store_entries(&restored)), bytes);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let bytes = encode(&store_entries(&sample_store()));
        assert!(decode::<f32>(&bytes).is_err());
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(peek_dtype(&bytes).unwrap(), DType::F64);
    }

    #[test]
    fn rejects_layout_mismatch() {
        let bytes = encode(&store_entries(&sample_store()));
        let mut other = ParamStore::<f64>::new();
        other.insert("layer.w", Tensor::zeros([4]).unwrap()).unwrap();
        assert!(restore_entries(&mut other, decode(&bytes).unwrap()).is_err());
    }
}
