//! Named learnable parameters and their gradient buffers.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns every parameter of a model, in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    precision: Precision,
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new(precision: Precision) -> Self {
        ParamStore {
            precision,
            params: Vec::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Changes the precision of later computations. Switching to `F32`
    /// rounds the stored values.
    pub fn set_precision(&mut self, precision: Precision) {
        self.precision = precision;
        for p in &mut self.params {
            precision.round_all(p.value.data_mut());
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::config(alloc::format!("duplicate parameter name `{name}`")));
        }
        let value = value.rounded(self.precision);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds a set of tape gradients into the stored `grad` buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        debug_assert_eq!(grads.per_param.len(), self.params.len());
        let precision = self.precision;
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                p.grad.add_assign(g);
                precision.round_all(p.grad.data_mut());
            }
        }
    }

    /// Sets every parameter whose name satisfies `pred` to zero.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.value.data_mut().fill(0.0);
            }
        }
    }

    /// Overwrites values from `(name, tensor)` pairs. Every stored parameter
    /// must be present exactly once with a matching shape.
    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::config(alloc::format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (name, t) in values {
            let id = self
                .find(name)
                .ok_or_else(|| Error::config(alloc::format!("unknown parameter `{name}`")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != t.shape() {
                return Err(Error::shape("load_values", p.value.shape(), t.shape()));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) per_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n: usize) -> Self {
        Gradients {
            per_param: alloc::vec![None; n],
        }
    }

    /// Gradient of one parameter; `None` when it did not take part.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.per_param.get(id.0).and_then(|g| g.as_ref())
    }

    /// Sums another gradient set into this one.
    pub fn merge(&mut self, other: &Gradients) {
        for (a, b) in self.per_param.iter_mut().zip(&other.per_param) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_are_zero_after_zero_grads() {
        let mut s = ParamStore::new(Precision::F64);
        let id = s.register("w", Tensor::full(&[2, 2], 3.0)).unwrap();
        s.get_mut(id).grad.data_mut().fill(1.5);
        s.zero_grads();
        assert!(s.get(id).grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(s.get(id).grad.shape(), s.get(id).value.shape());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(Precision::F64);
        s.register("w", Tensor::zeros(&[1])).unwrap();
        assert!(s.register("w", Tensor::zeros(&[1])).is_err());
    }
}
