//! Two-stage conv-relu-pool trunk with a dense projection.
//!
//! The same topology (at different widths) serves as the frozen patch
//! embedder and as the concept-encoding backbone of every model, which keeps
//! encoder parameter counts identical across model kinds.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

use super::kernels;
use super::params::{Bound, Params};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvTrunk {
    pub c1: usize,
    pub c2: usize,
    pub d_out: usize,
    pub input_hw: (usize, usize),
}

impl ConvTrunk {
    pub fn new(c1: usize, c2: usize, d_out: usize, input_hw: (usize, usize)) -> Result<Self> {
        if input_hw.0 % 4 != 0 || input_hw.1 % 4 != 0 {
            return Err(Error::contract(format!(
                "trunk input {}x{} must be divisible by 4 (two 2x2 pools)",
                input_hw.0, input_hw.1
            )));
        }
        Ok(ConvTrunk {
            c1,
            c2,
            d_out,
            input_hw,
        })
    }

    pub fn flat_dim(&self) -> usize {
        self.c2 * (self.input_hw.0 / 4) * (self.input_hw.1 / 4)
    }

    pub fn add_params<S: Scalar>(
        &self,
        params: &mut Params<S>,
        prefix: &str,
        rng: &mut Rng,
    ) -> Result<()> {
        params.add_conv(&format!("{prefix}.conv1"), self.c1, 1, 3, 3, rng)?;
        params.add_conv(&format!("{prefix}.conv2"), self.c2, self.c1, 3, 3, rng)?;
        params.add_dense(&format!("{prefix}.fc"), self.flat_dim(), self.d_out, rng)
    }

    /// Tape forward: conv-relu-pool twice, flatten, dense to `d_out`.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        prefix: &str,
        x: NodeId,
    ) -> Result<NodeId> {
        let n = tape.value(x).shape()[0];
        let h = tape.conv2d(
            x,
            bound.id(&format!("{prefix}.conv1.weight")),
            bound.id(&format!("{prefix}.conv1.bias")),
        )?;
        let h = tape.relu(h);
        let h = tape.maxpool2(h)?;
        let h = tape.conv2d(
            h,
            bound.id(&format!("{prefix}.conv2.weight")),
            bound.id(&format!("{prefix}.conv2.bias")),
        )?;
        let h = tape.relu(h);
        let h = tape.maxpool2(h)?;
        let h = tape.reshape(h, vec![n, self.flat_dim()])?;
        tape.dense(
            h,
            bound.id(&format!("{prefix}.fc.weight")),
            bound.id(&format!("{prefix}.fc.bias")),
        )
    }

    /// Inference-only forward via the raw kernels (no tape, no gradients).
    pub fn forward_infer<S: Scalar>(
        &self,
        params: &Params<S>,
        prefix: &str,
        x: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let n = x.shape()[0];
        let get = |name: &str| {
            params
                .get(&format!("{prefix}.{name}"))
                .ok_or_else(|| Error::Dependency(format!("missing parameter {prefix}.{name}")))
        };
        let h = kernels::conv2d_forward(x, get("conv1.weight")?, get("conv1.bias")?)?;
        let h = kernels::relu_forward(&h);
        let (h, _) = kernels::maxpool2_forward(&h)?;
        let h = kernels::conv2d_forward(&h, get("conv2.weight")?, get("conv2.bias")?)?;
        let h = kernels::relu_forward(&h);
        let (h, _) = kernels::maxpool2_forward(&h)?;
        let h = h.reshaped(vec![n, self.flat_dim()])?;
        kernels::dense_forward(&h, get("fc.weight")?, get("fc.bias")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn tape_and_inference_forwards_agree() {
        let trunk = ConvTrunk::new(4, 8, 16, (8, 12)).unwrap();
        let mut rng = stream(1, "trunk", 0);
        let mut params: Params<f32> = Params::new();
        trunk.add_params(&mut params, "enc", &mut rng).unwrap();

        let x_data: Vec<f32> = (0..2 * 8 * 12).map(|i| ((i * 37) % 11) as f32 / 11.0).collect();
        let x = Tensor::new(vec![2, 1, 8, 12], x_data).unwrap();

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xn = tape.constant(x.clone());
        let h_tape = trunk.forward(&mut tape, &bound, "enc", xn).unwrap();

        let h_infer = trunk.forward_infer(&params, "enc", &x).unwrap();
        assert_eq!(tape.value(h_tape).data(), h_infer.data());
        assert_eq!(h_infer.shape(), [2, 16]);
    }

    #[test]
    fn indivisible_input_rejected() {
        assert!(ConvTrunk::new(4, 8, 16, (10, 12)).is_err());
    }
}
