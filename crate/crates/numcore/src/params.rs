use std::collections::HashMap;

use crate::error::{NumError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    /// Buffers (running statistics) are stored and checkpointed but never
    /// updated by the optimizer.
    pub trainable: bool,
    pub moments: Option<Moments<T>>,
}

/// Named parameter values, their gradient accumulators and optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        self.insert_entry(name.into(), value, true)
    }

    /// Registers a non-trainable buffer.
    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        self.insert_entry(name.into(), value, false)
    }

    fn insert_entry(&mut self, name: String, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            grad: vec![T::zero(); value.numel()],
            value,
            trainable,
            moments: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(NumError::ShapeMismatch {
                op: "set_value",
                lhs: entry.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Tensor<T> {
        let e = &self.entries[id.0];
        Tensor::from_parts(e.value.shape().to_vec(), e.grad.clone())
    }

    pub fn grad_slice(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != grad.shape() {
            return Err(NumError::ShapeMismatch {
                op: "accumulate_grad",
                lhs: entry.value.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        for (g, &d) in entry.grad.iter_mut().zip(grad.data()) {
            *g = *g + d;
        }
        Ok(())
    }

    pub fn accumulate(&mut self, grads: &crate::tape::Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            self.accumulate_grad(*id, g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn scale_grads(&mut self, factor: T) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = *g * factor);
        }
    }

    /// Global L2 norm over the gradients of trainable parameters.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .flat_map(|e| e.grad.iter())
            .map(|g| {
                let g = g.as_f64();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(T::from_f64_lossy(max_norm / norm));
        }
        norm
    }

    /// Number of scalar values in trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub(crate) fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    /// Converts every value and optimizer moment to another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: conv(&e.grad),
                    trainable: e.trainable,
                    moments: e.moments.as_ref().map(|m| Moments {
                        first: conv(&m.first),
                        second: conv(&m.second),
                    }),
                })
                .collect(),
            by_name: self.by_name.clone(),
            step: self.step,
        }
    }
}
