//! Named parameter storage. Values live here between steps; each forward
//! pass binds them as fresh leaf tensors so gradients can be read back by
//! name after `backward`.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::invalid(
                "param",
                format!("`{name}`: shape {shape:?} needs {} values, got {}", shape.iter().product::<usize>(), value.len()),
            ));
        }
        if self.index.contains_key(&name) {
            return Err(Error::invalid("param", format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param {
            name,
            shape: shape.to_vec(),
            value,
        });
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &Tensor) -> Result<()> {
        self.insert(name, t.shape(), t.to_vec())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn bind(&self, requires_grad: bool) -> Bound<'_> {
        let leaves = self
            .entries
            .iter()
            .map(|p| Tensor::leaf(&p.shape, p.value.clone(), requires_grad).expect("store keeps shapes consistent"))
            .collect();
        Bound { store: self, leaves }
    }
}

/// Parameters of one store bound as leaf tensors for a single graph.
pub struct Bound<'a> {
    store: &'a ParamStore,
    leaves: Vec<Tensor>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.store
            .position(name)
            .map(|i| &self.leaves[i])
            .ok_or_else(|| Error::invalid("param", format!("no parameter named `{name}`")))
    }

    /// Gradients in store order; parameters the loss does not reach get zeros.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.leaves
            .iter()
            .map(|t| t.take_grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }
}

/// Uniform `±1/sqrt(fan_in)` weights.
pub(crate) fn uniform_fan_in<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("valid normal");
    (0..n).map(|_| normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_bind_and_read_gradients() {
        let mut store = ParamStore::new();
        store.insert("w", &[2], vec![1.0, 2.0]).unwrap();
        store.insert("unused", &[1], vec![5.0]).unwrap();
        assert!(store.insert("w", &[1], vec![0.0]).is_err());
        assert!(store.insert("bad", &[3], vec![0.0]).is_err());

        let bound = store.bind(true);
        bound.get("w").unwrap().square().sum().backward().unwrap();
        assert_eq!(bound.grads(), vec![vec![2.0, 4.0], vec![0.0]]);
        assert!(bound.get("missing").is_err());
        assert_eq!(store.num_values(), 3);
    }
}
