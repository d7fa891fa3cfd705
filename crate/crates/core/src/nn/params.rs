use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered registry of named parameter tensors. Each parameter appears once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a parameter and returns its index.
    ///
    /// # Panics
    /// If `name` is already registered.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, tensor });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.params[i].tensor
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.params[i].tensor
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.params[i].tensor)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn set_trainable(&mut self, on: bool) {
        for p in &mut self.params {
            p.tensor.set_requires_grad(on);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Adds the gradients found for `bound[i]` into parameter `i`.
    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &[Var<'_, T>]) -> Result<()> {
        if bound.len() != self.params.len() {
            return shape_err("binding does not match parameter registry");
        }
        for (p, v) in self.params.iter_mut().zip(bound) {
            if let (true, Some(g)) = (p.tensor.requires_grad(), grads.wrt(v)) {
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
