use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{contract_err, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Named trainable tensors, addressed by a `/`-separated path.
///
/// Insertion order is the canonical order: checkpoints, optimizer state and
/// gradient buffers all follow it.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

// A clone gets its own identity so graph bindings never confuse the two.
impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
            index: self.index.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values.iter().zip(&other.values).all(|(a, b)| a.bitwise_eq(b))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub(crate) fn store_id(&self) -> u64 {
        self.id
    }

    /// Adds a parameter; paths must be unique.
    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let path = path.into();
        if self.index.contains_key(&path) {
            return Err(contract_err!("duplicate parameter path {path}"));
        }
        let id = ParamId(self.values.len());
        self.index.insert(path.clone(), id);
        self.names.push(path);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(contract_err!(
                "parameter {} has shape {:?}, replacement has {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, path: &str) -> Option<ParamId> {
        self.index.get(path).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> + '_ {
        self.ids().map(|id| (id, self.names[id.0].as_str(), &self.values[id.0]))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// A new store holding the parameters whose path satisfies `keep`, in
    /// canonical order.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            if keep(name) {
                out.insert(name.clone(), value.clone())
                    .expect("paths are unique in the source");
            }
        }
        out
    }

    /// Copies every parameter whose path starts with `prefix` from `other`.
    /// Returns the number of tensors copied.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (_, name, value) in other.iter() {
            if !name.starts_with(prefix) {
                continue;
            }
            let id = self
                .lookup(name)
                .ok_or_else(|| contract_err!("parameter {name} missing from target"))?;
            self.set(id, value.clone())?;
            copied += 1;
        }
        Ok(copied)
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    buffers: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            buffers: store.values.iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.buffers[id.0]
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn add_slice(&mut self, id: ParamId, g: &[f64]) {
        for (a, b) in self.buffers[id.0].iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for b in &mut self.buffers {
            for x in b {
                *x *= c;
            }
        }
    }

    /// True when every entry of parameter `id` is exactly zero.
    pub fn is_zero(&self, id: ParamId) -> bool {
        self.buffers[id.0].iter().all(|&x| x == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.buffers.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_paths_rejected() {
        let mut s = ParamStore::new();
        s.insert("a/w", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a/w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn copy_prefix_only_touches_prefix() {
        let mut a = ParamStore::new();
        a.insert("enc/w", Tensor::zeros(&[2])).unwrap();
        a.insert("cls/w", Tensor::zeros(&[2])).unwrap();
        let mut b = a.clone();
        b.set(ParamId(0), Tensor::full(&[2], 1.0)).unwrap();
        b.set(ParamId(1), Tensor::full(&[2], 2.0)).unwrap();
        assert_eq!(a.copy_prefix_from(&b, "enc/").unwrap(), 1);
        assert_eq!(a.get(ParamId(0)).data(), &[1.0, 1.0]);
        assert_eq!(a.get(ParamId(1)).data(), &[0.0, 0.0]);
    }
}
