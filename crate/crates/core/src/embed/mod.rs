//! Activation spaces: map patches into a vector space where segment
//! similarity is Euclidean distance.
//!
//! Two backends behind one interface: a small frozen extractor pretrained on
//! a rotation pretext task (`pt_act`), and the concept-encoding part of a
//! task-trained black-box model (`bb_act`).

pub mod bb;
pub mod pt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::nn::trunk::ConvTrunk;
use crate::nn::{Params, Tensor};
use crate::F;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceName {
    PtAct,
    BbAct,
}

impl SpaceName {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceName::PtAct => "pt_act",
            SpaceName::BbAct => "bb_act",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pt_act" => Ok(SpaceName::PtAct),
            "bb_act" => Ok(SpaceName::BbAct),
            other => Err(Error::Config(format!(
                "unknown activation space '{other}' (expected pt_act or bb_act)"
            ))),
        }
    }
}

/// A point in an activation space, tagged with the space it came from.
#[derive(Clone, Debug)]
pub struct EmbeddingVector {
    pub values: Vec<F>,
    pub space: SpaceName,
}

/// A deterministic patch-to-vector map with a fixed output dimension.
pub struct ActivationSpace {
    pub name: SpaceName,
    pub dim: usize,
    pub input_hw: (usize, usize),
    pub provenance: String,
    trunk: ConvTrunk,
    prefix: String,
    params: Params<F>,
}

impl ActivationSpace {
    pub fn new(
        name: SpaceName,
        trunk: ConvTrunk,
        prefix: impl Into<String>,
        params: Params<F>,
        provenance: impl Into<String>,
    ) -> Self {
        ActivationSpace {
            name,
            dim: trunk.d_out,
            input_hw: trunk.input_hw,
            provenance: provenance.into(),
            trunk,
            prefix: prefix.into(),
            params,
        }
    }

    /// Embeds patches in order; batching matches per-item calls.
    pub fn embed_batch(&self, patches: &[Tensor<F>]) -> Result<Vec<EmbeddingVector>> {
        let (h, w) = self.input_hw;
        for p in patches {
            if p.shape() != [1, h, w] {
                return Err(Error::shape(
                    "embed",
                    format!("patch {:?} vs embedder input [1, {h}, {w}]", p.shape()),
                ));
            }
        }
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(256) {
            let mut data = Vec::with_capacity(chunk.len() * h * w);
            for p in chunk {
                data.extend_from_slice(p.data());
            }
            let x = Tensor::new(vec![chunk.len(), 1, h, w], data)?;
            let latent = self.trunk.forward_infer(&self.params, &self.prefix, &x)?;
            for row in latent.data().chunks(self.dim) {
                out.push(EmbeddingVector {
                    values: row.to_vec(),
                    space: self.name,
                });
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, patch: &Tensor<F>) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(std::slice::from_ref(patch))?.pop().unwrap())
    }

    /// SHA-256 of the parameter serialization; unchanged across a pipeline
    /// run for frozen spaces.
    pub fn checkpoint_sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(checkpoint::to_bytes(&self.params));
        hex(&hasher.finalize())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    pub fn params(&self) -> &Params<F> {
        &self.params
    }

    pub fn trunk(&self) -> &ConvTrunk {
        &self.trunk
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
