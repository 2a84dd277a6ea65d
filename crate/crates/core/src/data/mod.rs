//! Datasets: the synthetic Shapes-ADD task, real MNIST-ADD via IDX files,
//! and the canonical binary store.

pub mod glyph;
pub mod idx;
pub mod mnist_add;
pub mod shapes_add;
pub mod store;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::F;

pub use glyph::JitterConfig;
pub use idx::DigitPool;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            other => Err(Error::contract(format!("unknown split code {other}"))),
        }
    }
}

/// Binary matrix stored row-major as one byte per cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptMatrix {
    pub n: usize,
    pub k: usize,
    pub bits: Vec<u8>,
}

impl ConceptMatrix {
    pub fn zeros(n: usize, k: usize) -> Self {
        ConceptMatrix {
            n,
            k,
            bits: vec![0; n * k],
        }
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.k..(i + 1) * self.k]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.k + j] = v as u8;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub n_classes: usize,
    pub concept_names: Vec<String>,
}

/// Grayscale images in `[0,1]` with task labels, and (optionally) a
/// ground-truth concept matrix kept for evaluation only.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub images: Tensor<F>,
    pub task_labels: Vec<u16>,
    pub concept_truth: Option<ConceptMatrix>,
    pub split: Split,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor<F>,
        task_labels: Vec<u16>,
        concept_truth: Option<ConceptMatrix>,
        split: Split,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let n = match images.shape() {
            [n, 1, _, _] => *n,
            s => {
                return Err(Error::shape(
                    "dataset",
                    format!("expected [n,1,h,w] images, got {s:?}"),
                ))
            }
        };
        if task_labels.len() != n {
            return Err(Error::contract(format!(
                "{n} images but {} labels",
                task_labels.len()
            )));
        }
        if let Some(bad) = task_labels.iter().find(|&&l| l as usize >= meta.n_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {} classes",
                meta.n_classes
            )));
        }
        if let Some(cm) = &concept_truth {
            if cm.n != n || cm.k != meta.concept_names.len() {
                return Err(Error::contract(format!(
                    "concept matrix {}x{} does not match {n} samples x {} concepts",
                    cm.n,
                    cm.k,
                    meta.concept_names.len()
                )));
            }
        }
        let mut images = images;
        for v in images.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(LabeledDataset {
            images,
            task_labels,
            concept_truth,
            split,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.task_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }

    /// Flat `h*w` pixel slice of image `i`.
    pub fn image(&self, i: usize) -> &[F] {
        let hw = self.height() * self.width();
        &self.images.data()[i * hw..(i + 1) * hw]
    }

    /// Mean pixel intensity over the whole dataset (f64 accumulation).
    pub fn mean_intensity(&self) -> F {
        let total: f64 = self.images.data().iter().map(|&v| v as f64).sum();
        (total / self.images.numel() as f64) as F
    }

    /// Indices of samples with the given task label.
    pub fn indices_of_class(&self, class: u16) -> Vec<usize> {
        self.task_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of the same dataset with a different concept matrix (used to
    /// attach auto-annotations).
    pub fn with_concepts(&self, concepts: ConceptMatrix, names: Vec<String>) -> Result<Self> {
        LabeledDataset::new(
            self.images.clone(),
            self.task_labels.clone(),
            Some(concepts),
            self.split,
            DatasetMeta {
                n_classes: self.meta.n_classes,
                concept_names: names,
            },
        )
    }
}
