//! Named parameter registry.

use std::collections::BTreeMap;

use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Glorot,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub init: Init,
}

/// All learned tensors of a model, keyed by unique path names.
///
/// Initial values depend only on `(init, seed, name)`, so the order of
/// registration never changes them.
#[derive(Clone, Debug)]
pub struct ParamStore {
    seed: u64,
    entries: BTreeMap<String, ParamEntry>,
}

fn initial_values(shape: &[usize], init: Init, seed: u64, name: &str) -> Vec<f64> {
    let n: usize = shape.iter().product();
    match init {
        Init::Zeros => vec![0.0; n],
        Init::Constant(c) => vec![c; n],
        Init::Glorot => {
            let (fan_in, fan_out) = match shape {
                [a] => (*a, *a),
                [a, b] => (*a, *b),
                [_, a, b] => (*a, *b),
                _ => (n, n),
            };
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = RngStream::labeled(seed, name);
            (0..n).map(|_| rng.uniform_range(-a, a)).collect()
        }
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { seed, entries: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let values = initial_values(shape, init, self.seed, name);
        let tensor = Tensor::new(shape, values)?;
        self.entries
            .insert(name.to_string(), ParamEntry { name: name.to_string(), tensor, init });
        Ok(())
    }

    /// Inserts an entry with explicit values (checkpoint restore).
    pub fn insert_loaded(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        self.entries.insert(
            name.to_string(),
            ParamEntry { name: name.to_string(), tensor, init: Init::Zeros },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Overwrites the values of `name`, keeping its shape.
    pub fn set(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let t = self.get_mut(name)?;
        if t.len() != values.len() {
            return Err(Error::dim("set", format!("{name}: {} values for {:?}", values.len(), t.shape())));
        }
        t.values_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Entries in name order.
    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.values_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// Stores `grads` into the matching entries' gradient slots.
    pub fn set_grads(&mut self, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for entry in self.entries.values_mut() {
            match grads.get(&entry.name) {
                Some(g) => entry.tensor.set_grad(g.clone())?,
                None => entry.tensor.set_grad(vec![0.0; entry.tensor.len()])?,
            }
        }
        Ok(())
    }
}
