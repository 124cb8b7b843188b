use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::graph::{Gradients, Graph, Var};
use super::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    /// Layer index, starting at 1.
    pub layer: usize,
}

/// Ordered named tensors, each assigned to one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: &str, layer: usize, value: Tensor<T>) -> Result<()> {
        if layer == 0 {
            return Err(Error::InvalidArgument(format!("parameter '{name}': layer indices start at 1")));
        }
        if self.entries.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        self.entries.insert(name.to_string(), Param { value, layer });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest layer index.
    pub fn n_layers(&self) -> usize {
        self.entries.values().map(|p| p.layer).max().unwrap_or(0)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.values().map(|p| &p.value)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.values_mut().map(|p| &mut p.value)
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.values().map(|p| p.layer)
    }

    pub fn numel(&self) -> usize {
        self.values().map(Tensor::len).sum()
    }

    /// Same names and shapes as `other`.
    pub fn check_aligned<U: Scalar>(&self, other: &ParamSet<U>, op: &'static str) -> Result<()> {
        let ok = self.len() == other.len()
            && self.entries.iter().zip(other.entries.iter()).all(|((ka, a), (kb, b))| ka == kb && a.value.shape == b.value.shape);
        if ok {
            Ok(())
        } else {
            Err(Error::shape(op, "parameter sets are not aligned"))
        }
    }

    /// Elementwise combination of two aligned sets.
    pub fn zip_map(&self, other: &ParamSet<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<ParamSet<T>> {
        self.check_aligned(other, op)?;
        let mut out = self.clone();
        for (a, b) in out.values_mut().zip(other.values()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x = f(*x, *y));
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> ParamSet<T> {
        let mut out = self.clone();
        out.values_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = f(*v)));
        out
    }

    pub fn zeros_like(&self) -> ParamSet<T> {
        self.map(|_| T::zero())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self.entries.iter().map(|(k, p)| (k.clone(), Param { value: p.value.cast(), layer: p.layer })).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(Tensor::is_finite)
    }

    /// Adds every tensor to `g` in order.
    pub fn to_vars(&self, g: &mut Graph<T>, requires_grad: bool) -> Vec<Var> {
        self.values()
            .map(|t| if requires_grad { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Gradients for `vars` (aligned with this set) as a set of the same layout.
    pub fn grads_of(&self, grads: &Gradients<T>, vars: &[Var]) -> ParamSet<T> {
        let mut out = self.clone();
        for (t, v) in out.values_mut().zip(vars) {
            *t = grads.get_or_zeros(*v, &t.shape);
        }
        out
    }

    pub fn flatten(&self) -> Vec<T> {
        self.values().flat_map(|t| t.data.iter().copied()).collect()
    }
}
