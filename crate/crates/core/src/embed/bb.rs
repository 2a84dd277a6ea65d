//! The black-box activation space: the concept-encoding trunk of a
//! task-trained model, reused as a patch embedder.

use crate::error::Result;
use crate::nn::trunk::ConvTrunk;
use crate::nn::{Params, Tensor};
use crate::F;

use super::{ActivationSpace, SpaceName};

/// Wraps a trained model's encoder parameters (`encoder.*`) as an activation
/// space. Patches are rescaled to the encoder's own input size.
pub fn build_bb_act(
    params: Params<F>,
    trunk: ConvTrunk,
    provenance: impl Into<String>,
) -> Result<ActivationSpace> {
    let space = ActivationSpace::new(SpaceName::BbAct, trunk, "encoder", params, provenance);
    // Probe once so missing/mis-shaped encoder parameters fail here rather
    // than mid-pipeline.
    let probe = Tensor::zeros(vec![1, trunk.input_hw.0, trunk.input_hw.1]);
    space.embed_one(&probe)?;
    Ok(space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::scalar::dist;

    fn encoder_params(seed: u64, trunk: &ConvTrunk) -> Params<F> {
        let mut p = Params::new();
        trunk
            .add_params(&mut p, "encoder", &mut stream(seed, "bb-test", 0))
            .unwrap();
        p
    }

    #[test]
    fn embedding_equals_encoder_activation() {
        let trunk = ConvTrunk::new(4, 8, 16, (8, 16)).unwrap();
        let params = encoder_params(1, &trunk);
        let patch = Tensor::filled(vec![1, 8, 16], 0.3);
        let direct = trunk
            .forward_infer(&params, "encoder", &Tensor::filled(vec![1, 1, 8, 16], 0.3))
            .unwrap();
        let space = build_bb_act(params, trunk, "ckpt:test").unwrap();
        let emb = space.embed_one(&patch).unwrap();
        for (a, b) in emb.values.iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(space.dim, 16);
    }

    #[test]
    fn different_seeds_give_different_embeddings() {
        let trunk = ConvTrunk::new(4, 8, 16, (8, 16)).unwrap();
        let a = build_bb_act(encoder_params(1, &trunk), trunk, "a").unwrap();
        let b = build_bb_act(encoder_params(2, &trunk), trunk, "b").unwrap();
        let patch = Tensor::filled(vec![1, 8, 16], 0.7);
        let ea = a.embed_one(&patch).unwrap();
        let eb = b.embed_one(&patch).unwrap();
        assert!(dist(&ea.values, &eb.values) > 0.0);
    }

    #[test]
    fn missing_encoder_parameters_fail_eagerly() {
        let trunk = ConvTrunk::new(4, 8, 16, (8, 16)).unwrap();
        assert!(build_bb_act(Params::new(), trunk, "empty").is_err());
    }
}
