//! Reverse-mode autodiff tape.
//!
//! Operations append nodes in execution order, so the node list is already
//! topologically sorted and the backward pass is a single reverse sweep.
//! A tape lives for one forward/backward step and is not shareable across
//! threads.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kernels;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

enum Op<S> {
    Leaf,
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    MaxPool2 { x: NodeId, argmax: Vec<u32> },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: S },
    Reshape { x: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    MixRows { p: NodeId, pos: NodeId, neg: NodeId },
    Sum { x: NodeId },
    SoftmaxCe { logits: NodeId, labels: Vec<u16>, probs: Vec<S> },
    BceLogits { z: NodeId, t: NodeId },
}

struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    needs_grad: bool,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() as u32 - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.idx()].value
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if it was
    /// reached.
    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.grads.get(id.idx()).and_then(|g| g.as_deref())
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Records a differentiable leaf (a parameter or an input under study).
    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let value = kernels::dense_forward(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Dense { x, w, b }, value, ng))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let value = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Conv2d { x, w, b }, value, ng))
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (value, argmax) = kernels::maxpool2_forward(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(Op::MaxPool2 { x, argmax }, value, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = kernels::relu_forward(self.value(x));
        let ng = self.needs(x);
        self.push(Op::Relu { x }, value, ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = kernels::sigmoid_forward(self.value(x));
        let ng = self.needs(x);
        self.push(Op::Sigmoid { x }, value, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, value, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, value, ng))
    }

    pub fn scale(&mut self, x: NodeId, c: S) -> NodeId {
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(Op::Scale { x, c }, value, ng)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(x).clone().reshaped(shape)?;
        let ng = self.needs(x);
        Ok(self.push(Op::Reshape { x }, value, ng))
    }

    /// Concatenates `[n, w_i]` tensors along the feature axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero tensors"));
        }
        let n = self.value(parts[0]).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != n {
                return Err(Error::shape(
                    "concat_cols",
                    format!("expected [{n}, _], got {s:?}"),
                ));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![S::zero(); n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..n {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let value = Tensor::new(vec![n, total], data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            value,
            ng,
        ))
    }

    /// Per-row convex mix `p*pos + (1-p)*neg` with `p` of shape `[n]` or
    /// `[n,1]`. With `p` exactly 0 or 1 the result equals `neg`/`pos`
    /// bitwise.
    pub fn mix_rows(&mut self, p: NodeId, pos: NodeId, neg: NodeId) -> Result<NodeId> {
        let (n, m) = match self.value(pos).shape() {
            [n, m] => (*n, *m),
            s => return Err(Error::shape("mix_rows", format!("pos {s:?}"))),
        };
        if self.value(neg).shape() != [n, m] || self.value(p).numel() != n {
            return Err(Error::shape(
                "mix_rows",
                format!(
                    "p {:?}, pos {:?}, neg {:?}",
                    self.value(p).shape(),
                    self.value(pos).shape(),
                    self.value(neg).shape()
                ),
            ));
        }
        let mut data = vec![S::zero(); n * m];
        {
            let pv = self.value(p).data();
            let posv = self.value(pos).data();
            let negv = self.value(neg).data();
            for i in 0..n {
                let w = pv[i];
                let wn = S::one() - w;
                for j in 0..m {
                    data[i * m + j] = w * posv[i * m + j] + wn * negv[i * m + j];
                }
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        let ng = self.needs(p) || self.needs(pos) || self.needs(neg);
        Ok(self.push(Op::MixRows { p, pos, neg }, value, ng))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = crate::scalar::sum_f64(self.value(x).data());
        let ng = self.needs(x);
        self.push(Op::Sum { x }, Tensor::scalar(S::from_f64(total)), ng)
    }

    pub fn softmax_ce(&mut self, logits: NodeId, labels: &[u16]) -> Result<NodeId> {
        let (loss, probs) = kernels::softmax_ce_forward(self.value(logits), labels)?;
        let ng = self.needs(logits);
        Ok(self.push(
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            ng,
        ))
    }

    pub fn bce_logits(&mut self, z: NodeId, t: NodeId) -> Result<NodeId> {
        let loss = kernels::bce_logits_forward(self.value(z), self.value(t))?;
        let ng = self.needs(z);
        Ok(self.push(Op::BceLogits { z, t }, Tensor::scalar(loss), ng))
    }

    fn add_grad(&mut self, id: NodeId, delta: Vec<S>) {
        if !self.nodes[id.idx()].needs_grad {
            return;
        }
        let slot = &mut self.grads[id.idx()];
        match slot {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *slot = Some(delta),
        }
    }

    /// Runs the reverse sweep from a scalar loss, filling gradients for every
    /// differentiable node that contributed to it.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.idx()] = Some(vec![S::one()]);

        for i in (0..=loss.idx()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].clone() else {
                continue;
            };
            let g = Tensor::new(self.nodes[i].value.shape().to_vec(), g).unwrap();
            // Take the op out so value lookups and grad writes don't fight
            // over the node list borrow.
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let mut deltas: Vec<(NodeId, Vec<S>)> = Vec::new();
            match &op {
                Op::Leaf => {}
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = kernels::dense_backward(self.value(*x), self.value(*w), &g);
                    deltas.push((*x, dx.into_data()));
                    deltas.push((*w, dw.into_data()));
                    deltas.push((*b, db.into_data()));
                }
                Op::Conv2d { x, w, b } => {
                    let (dx, dw, db) = kernels::conv2d_backward(self.value(*x), self.value(*w), &g);
                    deltas.push((*x, dx.into_data()));
                    deltas.push((*w, dw.into_data()));
                    deltas.push((*b, db.into_data()));
                }
                Op::MaxPool2 { x, argmax } => {
                    let dx = kernels::maxpool2_backward(&g, argmax, self.value(*x).shape());
                    deltas.push((*x, dx.into_data()));
                }
                Op::Relu { x } => {
                    let dx = kernels::relu_backward(self.value(*x), &g);
                    deltas.push((*x, dx.into_data()));
                }
                Op::Sigmoid { x } => {
                    let dx = kernels::sigmoid_backward(&self.nodes[i].value, &g);
                    deltas.push((*x, dx.into_data()));
                }
                Op::Add { a, b } => {
                    deltas.push((*a, g.data().to_vec()));
                    deltas.push((*b, g.data().to_vec()));
                }
                Op::Mul { a, b } => {
                    let da = g
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    let db = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    deltas.push((*a, da));
                    deltas.push((*b, db));
                }
                Op::Scale { x, c } => {
                    deltas.push((*x, g.data().iter().map(|&gv| gv * *c).collect()));
                }
                Op::Reshape { x } => {
                    deltas.push((*x, g.data().to_vec()));
                }
                Op::ConcatCols { parts } => {
                    let n = self.nodes[i].value.shape()[0];
                    let total = self.nodes[i].value.shape()[1];
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        let mut dp = vec![S::zero(); n * w];
                        for r in 0..n {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        deltas.push((p, dp));
                        off += w;
                    }
                }
                Op::MixRows { p, pos, neg } => {
                    let n = self.value(*pos).shape()[0];
                    let m = self.value(*pos).shape()[1];
                    let pv = self.value(*p).data();
                    let posv = self.value(*pos).data();
                    let negv = self.value(*neg).data();
                    let mut dp = vec![S::zero(); n];
                    let mut dpos = vec![S::zero(); n * m];
                    let mut dneg = vec![S::zero(); n * m];
                    for r in 0..n {
                        let w = pv[r];
                        let wn = S::one() - w;
                        let mut acc = 0.0f64;
                        for j in 0..m {
                            let gv = g.data()[r * m + j];
                            dpos[r * m + j] = gv * w;
                            dneg[r * m + j] = gv * wn;
                            acc +=
                                gv.as_f64() * (posv[r * m + j].as_f64() - negv[r * m + j].as_f64());
                        }
                        dp[r] = S::from_f64(acc);
                    }
                    deltas.push((*p, dp));
                    deltas.push((*pos, dpos));
                    deltas.push((*neg, dneg));
                }
                Op::Sum { x } => {
                    let gv = g.data()[0];
                    deltas.push((*x, vec![gv; self.value(*x).numel()]));
                }
                Op::SoftmaxCe {
                    logits,
                    labels,
                    probs,
                } => {
                    let classes = self.value(*logits).shape()[1];
                    let d = kernels::softmax_ce_backward(probs, labels, classes, g.data()[0]);
                    deltas.push((*logits, d.into_data()));
                }
                Op::BceLogits { z, t } => {
                    let d = kernels::bce_logits_backward(self.value(*z), self.value(*t), g.data()[0]);
                    deltas.push((*z, d.into_data()));
                }
            }
            self.nodes[i].op = op;
            for (id, delta) in deltas {
                self.add_grad(id, delta);
            }
        }
        Ok(())
    }
}
