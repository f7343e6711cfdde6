use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(Arc::new(t));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| self.tensors[i].as_ref())
    }

    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub(crate) fn shared(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.tensors[id])
    }

    /// Mutable access; copies only if a graph still holds the tensor.
    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[id])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Zero tensors shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_init<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}
