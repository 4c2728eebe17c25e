use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::HashMap;

/// Named tensors in insertion order. Iteration order is the order of
/// registration and therefore identical across runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let i = self.index.remove(name)?;
        self.names.remove(i);
        self.trainable.remove(i);
        let v = self.values.remove(i);
        for (j, n) in self.names.iter().enumerate().skip(i) {
            self.index.insert(n.clone(), j);
        }
        Some(v)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.values[i])
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.values[i]),
            None => Err(Error::Config(format!("unknown parameter {name}"))),
        }
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "parameter assignment",
                lhs: slot.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.index.get(name).is_some_and(|&i| self.trainable[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `(name, value, trainable)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.trainable)
            .map(|((n, v), &t)| (n.as_str(), v, t))
    }
}
