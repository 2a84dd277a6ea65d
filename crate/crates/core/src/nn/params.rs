//! Named parameter collections.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{Draw, Rng};
use crate::scalar::Scalar;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Map from parameter path (e.g. `encoder.conv1.weight`) to tensor.
///
/// Iteration order is the sorted path order, which makes optimizer and
/// checkpoint traversal deterministic.
#[derive(Clone, Debug, Default)]
pub struct Params<S> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Params<S> {
    pub fn new() -> Self {
        Params {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<S>) -> Result<()> {
        let path = path.into();
        if self.map.contains_key(&path) {
            return Err(Error::contract(format!("duplicate parameter path {path}")));
        }
        self.map.insert(path, tensor);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<S>> {
        self.map.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<S>> {
        self.map.get_mut(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Path of the first parameter containing a NaN/Inf, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.map
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(p, _)| p.as_str())
    }

    /// Kaiming-uniform dense layer: `{prefix}.weight [d_in,d_out]` and a zero
    /// `{prefix}.bias [d_out]`.
    pub fn add_dense(&mut self, prefix: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Result<()> {
        let w = kaiming_uniform(vec![d_in, d_out], d_in, rng);
        self.insert(format!("{prefix}.weight"), w)?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(vec![d_out]))
    }

    /// Kaiming-uniform conv layer: `{prefix}.weight [c_out,c_in,kh,kw]` and a
    /// zero `{prefix}.bias [c_out]`.
    pub fn add_conv(
        &mut self,
        prefix: &str,
        c_out: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        let w = kaiming_uniform(vec![c_out, c_in, kh, kw], c_in * kh * kw, rng);
        self.insert(format!("{prefix}.weight"), w)?;
        self.insert(format!("{prefix}.bias"), Tensor::zeros(vec![c_out]))
    }

    /// Registers every parameter as a differentiable leaf on the tape.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        let mut ids = BTreeMap::new();
        for (path, tensor) in &self.map {
            ids.insert(path.clone(), tape.leaf(tensor.clone()));
        }
        Bound { ids }
    }

    /// Pulls gradients off the tape into the parameter tensors. Every bound
    /// parameter must have received a gradient.
    pub fn absorb_grads(&mut self, tape: &Tape<S>, bound: &Bound) -> Result<()> {
        for (path, id) in &bound.ids {
            let grad = tape.grad(*id).ok_or_else(|| {
                Error::contract(format!("parameter {path} received no gradient"))
            })?;
            self.map
                .get_mut(path)
                .ok_or_else(|| Error::contract(format!("unknown parameter {path}")))?
                .accumulate_grad(grad);
        }
        Ok(())
    }
}

/// Tape leaf ids for a bound parameter set.
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, path: &str) -> NodeId {
        *self
            .ids
            .get(path)
            .unwrap_or_else(|| panic!("parameter {path} not bound"))
    }
}

/// Uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]` (the ReLU-gain Kaiming
/// bound).
fn kaiming_uniform<S: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| S::from_f64(rng.f64_in(-bound, bound)))
        .collect();
    Tensor::new(shape, data).unwrap()
}
