use std::collections::BTreeMap;

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Convolution weight `[out, in, k, k]` drawn from N(0, std²) plus a
    /// zero bias `[1, out, 1, 1]`, stored as `name.weight` / `name.bias`.
    pub fn add_conv<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        std: f64,
        rng: &mut R,
    ) {
        self.insert(
            format!("{name}.weight"),
            Tensor::randn([out_channels, in_channels, kernel, kernel], std, rng),
        );
        self.insert(
            format!("{name}.bias"),
            Tensor::zeros([1, out_channels, 1, 1]),
        );
    }
}

/// Lazily binds store entries into a graph as trainable leaves, so that only
/// parameters a forward pass actually touches become graph nodes.
pub struct Binder<'a> {
    store: &'a ParamStore,
    bound: BTreeMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder {
            store,
            bound: BTreeMap::new(),
        }
    }

    pub fn var(&mut self, graph: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .store
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter '{name}'")))?;
        let v = graph.param(t.clone());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients for every store entry; unbound entries get zeros.
    pub fn gradients(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        self.store
            .iter()
            .map(|(name, t)| {
                let g = match self.bound.get(name) {
                    Some(&v) => graph.grad(v),
                    None => Tensor::zeros(t.shape()),
                };
                (name.to_string(), g)
            })
            .collect()
    }
}
