//! SGD with momentum and Adam.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub enum Optimizer<S> {
    Sgd(Sgd<S>),
    Adam(Adam<S>),
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind, lr: S, momentum: S) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(lr, momentum)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr)),
        }
    }

    pub fn step(&mut self, params: &mut Params<S>) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(params),
            Optimizer::Adam(o) => o.step(params),
        }
    }
}

/// `v <- momentum*v + g; p <- p - lr*v`. Gradients are cleared after the
/// step and parameters are checked for finiteness.
pub struct Sgd<S> {
    lr: S,
    momentum: S,
    velocity: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(lr: S, momentum: S) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut Params<S>) -> Result<()> {
        for (path, tensor) in params.iter_mut() {
            let grad = tensor
                .grad()
                .ok_or_else(|| Error::contract(format!("no gradient for parameter {path}")))?
                .to_vec();
            let vel = self
                .velocity
                .entry(path.clone())
                .or_insert_with(|| vec![S::zero(); grad.len()]);
            let data = tensor.data_mut();
            for ((p, v), g) in data.iter_mut().zip(vel.iter_mut()).zip(grad) {
                *v = self.momentum * *v + g;
                *p = *p - self.lr * *v;
            }
            tensor.clear_grad();
        }
        if let Some(path) = params.first_non_finite() {
            return Err(Error::NonFinite(format!("parameter {path} after sgd step")));
        }
        Ok(())
    }
}

/// Adam with bias correction; `beta1=0.9`, `beta2=0.999`, `eps=1e-8`.
pub struct Adam<S> {
    lr: S,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut Params<S>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let lr = self.lr.as_f64();
        for (path, tensor) in params.iter_mut() {
            let grad = tensor
                .grad()
                .ok_or_else(|| Error::contract(format!("no gradient for parameter {path}")))?
                .to_vec();
            let m = self
                .m
                .entry(path.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .v
                .entry(path.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let data = tensor.data_mut();
            for (i, g) in grad.iter().enumerate() {
                let g = g.as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                data[i] = S::from_f64(data[i].as_f64() - update);
            }
            tensor.clear_grad();
        }
        if let Some(path) = params.first_non_finite() {
            return Err(Error::NonFinite(format!("parameter {path} after adam step")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn one_param(value: f32) -> Params<f32> {
        let mut p = Params::new();
        p.insert("p", Tensor::new(vec![1], vec![value]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn sgd_single_step() {
        let mut params = one_param(1.0);
        params.get_mut("p").unwrap().accumulate_grad(&[1.0]);
        let mut opt = Sgd::new(0.1f32, 0.0);
        opt.step(&mut params).unwrap();
        assert_eq!(params.get("p").unwrap().data()[0], 0.9);
        assert!(params.get("p").unwrap().grad().is_none());
    }

    #[test]
    fn sgd_momentum_two_steps() {
        // grad 1 each step, momentum 0.9: v1=1, v2=1.9 -> p: 1 -> 0.9 -> 0.71
        let mut params = one_param(1.0);
        let mut opt = Sgd::new(0.1f32, 0.9);
        params.get_mut("p").unwrap().accumulate_grad(&[1.0]);
        opt.step(&mut params).unwrap();
        assert!((params.get("p").unwrap().data()[0] - 0.9).abs() < 1e-7);
        params.get_mut("p").unwrap().accumulate_grad(&[1.0]);
        opt.step(&mut params).unwrap();
        assert!((params.get("p").unwrap().data()[0] - 0.71).abs() < 1e-6);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut params = one_param(1.0);
        let mut opt = Sgd::new(0.1f32, 0.0);
        assert!(matches!(
            opt.step(&mut params),
            Err(crate::error::Error::Contract(_))
        ));
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        // loss = (p-3)^2, grad = 2(p-3), lr=0.1, 200 steps
        let mut params = one_param(0.0);
        let mut opt = Sgd::new(0.1f32, 0.0);
        for _ in 0..200 {
            let p = params.get("p").unwrap().data()[0];
            params.get_mut("p").unwrap().accumulate_grad(&[2.0 * (p - 3.0)]);
            opt.step(&mut params).unwrap();
        }
        assert!((params.get("p").unwrap().data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut params = one_param(0.0);
        let mut opt = Adam::new(0.1f32);
        for _ in 0..500 {
            let p = params.get("p").unwrap().data()[0];
            params.get_mut("p").unwrap().accumulate_grad(&[2.0 * (p - 3.0)]);
            opt.step(&mut params).unwrap();
        }
        assert!((params.get("p").unwrap().data()[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn non_finite_parameters_abort() {
        let mut params = one_param(1.0);
        params.get_mut("p").unwrap().accumulate_grad(&[f32::INFINITY]);
        let mut opt = Sgd::new(0.1f32, 0.0);
        assert!(matches!(
            opt.step(&mut params),
            Err(crate::error::Error::NonFinite(_))
        ));
    }
}
