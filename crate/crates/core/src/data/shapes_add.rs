//! Shapes-ADD: a procedural, download-free two-digit addition task.
//!
//! Each sample concatenates two glyph halves (digits 0..5) into a 28x56
//! image; the task label is the sum (11 classes) and the ground-truth
//! concepts are the two concatenated one-hots (12 bits, exactly 2 set).

use crate::error::Result;
use crate::nn::Tensor;
use crate::rng::{stream, Draw};
use crate::F;

use super::glyph::{render_digit, JitterConfig, CELL};
use super::{ConceptMatrix, DatasetMeta, LabeledDataset, Split};

pub const N_CLASSES: usize = 11;
pub const N_CONCEPTS: usize = 12;
pub const HEIGHT: usize = CELL;
pub const WIDTH: usize = 2 * CELL;

pub fn concept_names() -> Vec<String> {
    (0..6)
        .map(|d| format!("left_{d}"))
        .chain((0..6).map(|d| format!("right_{d}")))
        .collect()
}

/// Generates `n` samples using per-sample streams derived from
/// `(seed, offset + i)`, so different index ranges are disjoint by
/// construction.
pub fn generate_with_offset(
    n: usize,
    seed: u64,
    jitter: &JitterConfig,
    offset: u64,
    split: Split,
) -> Result<LabeledDataset> {
    let hw = HEIGHT * WIDTH;
    let mut pixels = vec![0.0f32; n * hw];
    let mut labels = Vec::with_capacity(n);
    let mut concepts = ConceptMatrix::zeros(n, N_CONCEPTS);

    for i in 0..n {
        let mut rng = stream(seed, "shapes-add", offset + i as u64);
        let left = rng.below(6) as u8;
        let right = rng.below(6) as u8;
        let lhs = render_digit(left, jitter, &mut rng);
        let rhs = render_digit(right, jitter, &mut rng);
        let img = &mut pixels[i * hw..(i + 1) * hw];
        for y in 0..HEIGHT {
            img[y * WIDTH..y * WIDTH + CELL].copy_from_slice(&lhs[y * CELL..(y + 1) * CELL]);
            img[y * WIDTH + CELL..(y + 1) * WIDTH]
                .copy_from_slice(&rhs[y * CELL..(y + 1) * CELL]);
        }
        labels.push((left + right) as u16);
        concepts.set(i, left as usize, true);
        concepts.set(i, 6 + right as usize, true);
    }

    LabeledDataset::new(
        Tensor::new(vec![n, 1, HEIGHT, WIDTH], pixels)?,
        labels,
        Some(concepts),
        split,
        DatasetMeta {
            n_classes: N_CLASSES,
            concept_names: concept_names(),
        },
    )
}

pub fn generate_shapes_add(n: usize, seed: u64, jitter: &JitterConfig) -> Result<LabeledDataset> {
    generate_with_offset(n, seed, jitter, 0, Split::Train)
}

/// Train/val/test splits over disjoint index ranges of the same seed.
pub fn generate_splits(
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
    jitter: &JitterConfig,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let train = generate_with_offset(n_train, seed, jitter, 0, Split::Train)?;
    let val = generate_with_offset(n_val, seed, jitter, n_train as u64, Split::Val)?;
    let test =
        generate_with_offset(n_test, seed, jitter, (n_train + n_val) as u64, Split::Test)?;
    Ok((train, val, test))
}

/// Adds clamped gaussian pixel noise; used by the intervention experiments.
pub fn corrupt_with_noise(dataset: &LabeledDataset, sigma: f32, seed: u64) -> LabeledDataset {
    let mut out = dataset.clone();
    let mut rng = stream(seed, "corrupt", 0);
    for v in out.images.data_mut() {
        *v = (*v + sigma * rng.standard_normal() as F).clamp(0.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_shapes_add(1, 7, &JitterConfig::zero()).unwrap();
        let b = generate_shapes_add(1, 7, &JitterConfig::zero()).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.task_labels, b.task_labels);
    }

    #[test]
    fn labels_are_sums_with_two_concept_bits() {
        let d = generate_shapes_add(200, 3, &JitterConfig::default()).unwrap();
        let cm = d.concept_truth.as_ref().unwrap();
        for i in 0..d.len() {
            let row = cm.row(i);
            assert_eq!(row.iter().filter(|&&b| b == 1).count(), 2);
            let left = row[..6].iter().position(|&b| b == 1).unwrap();
            let right = row[6..].iter().position(|&b| b == 1).unwrap();
            assert_eq!(d.task_labels[i] as usize, left + right);
            assert!(d.task_labels[i] < 11);
        }
    }

    #[test]
    fn digit_frequencies_are_uniform_within_3_sigma() {
        // Binomial(n, 1/6) per digit and side.
        let n = 12_000usize;
        let d = generate_shapes_add(n, 99, &JitterConfig::zero()).unwrap();
        let cm = d.concept_truth.as_ref().unwrap();
        let mut counts = [0usize; 12];
        for i in 0..n {
            for (j, &b) in cm.row(i).iter().enumerate() {
                counts[j] += b as usize;
            }
        }
        let mean = n as f64 / 6.0;
        let sigma = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for (j, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "digit bit {j}: count {c} vs mean {mean:.1} +- {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let (tr1, va1, _) = generate_splits(20, 10, 10, 5, &JitterConfig::default()).unwrap();
        let (tr2, va2, _) = generate_splits(20, 10, 10, 5, &JitterConfig::default()).unwrap();
        assert_eq!(tr1.images.data(), tr2.images.data());
        assert_eq!(va1.images.data(), va2.images.data());
        // A val image never equals a train image (disjoint streams).
        for i in 0..va1.len() {
            for j in 0..tr1.len() {
                assert_ne!(va1.image(i), tr1.image(j));
            }
        }
        assert_eq!(va1.split, Split::Val);
    }
}
