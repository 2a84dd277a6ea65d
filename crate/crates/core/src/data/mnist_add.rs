//! Composes two pooled digit images into addition samples.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{stream, Draw};

use super::shapes_add::{concept_names, N_CLASSES, N_CONCEPTS};
use super::{ConceptMatrix, DatasetMeta, DigitPool, LabeledDataset, Split};

/// Draws digit classes uniformly, then an instance uniformly within the
/// class, and concatenates the halves horizontally.
pub fn compose_mnist_add(
    pool: &DigitPool,
    n: usize,
    seed: u64,
    split: Split,
) -> Result<LabeledDataset> {
    for d in 0..6 {
        if pool.by_digit[d].is_empty() {
            return Err(Error::contract(format!(
                "composition requires at least one pooled image of digit {d}"
            )));
        }
    }
    let (h, w) = (pool.height, pool.width);
    let out_w = 2 * w;
    let mut pixels = vec![0.0f32; n * h * out_w];
    let mut labels = Vec::with_capacity(n);
    let mut concepts = ConceptMatrix::zeros(n, N_CONCEPTS);

    for i in 0..n {
        let mut rng = stream(seed, "mnist-add", i as u64);
        let left = rng.below(6);
        let right = rng.below(6);
        let li = pool.by_digit[left][rng.below(pool.by_digit[left].len())];
        let ri = pool.by_digit[right][rng.below(pool.by_digit[right].len())];
        let img = &mut pixels[i * h * out_w..(i + 1) * h * out_w];
        for y in 0..h {
            img[y * out_w..y * out_w + w].copy_from_slice(&pool.images[li][y * w..(y + 1) * w]);
            img[y * out_w + w..(y + 1) * out_w]
                .copy_from_slice(&pool.images[ri][y * w..(y + 1) * w]);
        }
        labels.push((left + right) as u16);
        concepts.set(i, left, true);
        concepts.set(i, 6 + right, true);
    }

    LabeledDataset::new(
        Tensor::new(vec![n, 1, h, out_w], pixels)?,
        labels,
        Some(concepts),
        split,
        DatasetMeta {
            n_classes: N_CLASSES,
            concept_names: concept_names(),
        },
    )
}
