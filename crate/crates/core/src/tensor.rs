//! Dense parameter storage with per-tensor gradient slots.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config, usage, Result};

/// Row-major dense array of `f64` with a lazily allocated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(config!("tensor dimensions must be positive, got {shape:?}"));
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(config!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            ));
        }
        Ok(Self { shape: shape.to_vec(), values, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns; 1 for vectors.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.values.len());
        let n = self.values.len();
        let g = self.grad.get_or_insert_with(|| vec![0.0; n]);
        for (a, d) in g.iter_mut().zip(delta) {
            *a += d;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Handle to one entry of a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Named tensors in insertion order.
///
/// Iteration order is the insertion order, which fixes the order of optimizer
/// updates and checkpoint records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Entry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.id(name).is_some() {
            return Err(usage!("duplicate parameter name `{name}`"));
        }
        self.entries.push(Entry { name: name.to_string(), tensor, trainable: true });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    /// Adds every slot of `grads` into the matching tensor's gradient.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (entry, slot) in self.entries.iter_mut().zip(&grads.slots) {
            if let Some(g) = slot {
                entry.tensor.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Total number of scalar values.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Copies values from `other`, matching entries by name and shape.
    pub fn load_values(&mut self, other: &ParameterSet) -> Result<()> {
        for entry in &mut self.entries {
            let src = other
                .id(&entry.name)
                .map(|id| other.get(id))
                .ok_or_else(|| config!("missing parameter `{}`", entry.name))?;
            if src.shape() != entry.tensor.shape() {
                return Err(config!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    entry.name,
                    src.shape(),
                    entry.tensor.shape()
                ));
            }
            entry.tensor.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }
}

/// Gradient buffers produced by one backward pass, indexed like the
/// [`ParameterSet`] they were computed against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(param_count: usize) -> Self {
        Self { slots: vec![None; param_count] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
        let t = Tensor::new(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
        assert!(t.grad().is_none());
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let mut set = ParameterSet::new();
        let a = set.add("a", Tensor::zeros(&[1]).unwrap()).unwrap();
        let b = set.add("b", Tensor::zeros(&[2]).unwrap()).unwrap();
        assert!(set.add("a", Tensor::zeros(&[1]).unwrap()).is_err());
        assert_eq!(set.iter().map(|(n, _)| n).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!((a.index(), b.index()), (0, 1));
    }
}
