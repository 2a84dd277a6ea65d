//! Per-class concept discovery: segment, embed, cluster, filter.
//!
//! All candidates of a class carry equal importance; there is no saliency or
//! ranking signal anywhere in the output.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::cluster::kmeans_best_of;
use crate::data::LabeledDataset;
use crate::embed::ActivationSpace;
use crate::error::{Error, Result};
use crate::rng::{stream, Draw};
use crate::scalar::{dist, Scalar};
use crate::segment::{extract_patch, segment_multires, ResolutionLevel, SegmentationConfig, SegmentPatch};
use crate::F;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PatchRef {
    pub image_id: usize,
    pub level: ResolutionLevel,
    pub segment_id: u32,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    pub clusters_per_class: usize,
    /// Members beyond this distance percentile of their cluster are dropped.
    pub percentile: f64,
    pub min_cluster_size: usize,
    /// Minimum fraction of the class's images a cluster must draw from.
    pub min_image_fraction: f64,
    /// Minimum images a class needs before discovery runs at all.
    pub min_images: usize,
    /// Cap on images sampled per class (seeded draw).
    pub max_images_per_class: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            clusters_per_class: 8,
            percentile: 0.95,
            min_cluster_size: 10,
            min_image_fraction: 0.25,
            min_images: 10,
            max_images_per_class: 60,
            restarts: 4,
            max_iter: 100,
            seed: 0,
        }
    }
}

/// A cluster of segment patches from one class, described as a hypersphere:
/// center is the member centroid, radius the maximum member distance.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ClassConceptCandidate {
    pub class: u16,
    pub center: Vec<F>,
    pub radius: F,
    pub member_patch_refs: Vec<PatchRef>,
    pub support_images: BTreeSet<usize>,
    /// Member embeddings; carried in memory for aggregation, not serialized.
    #[serde(skip)]
    pub member_embeddings: Vec<Vec<F>>,
}

/// Drops members beyond the per-cluster distance percentile, then clusters
/// that are too small or supported by too few images. Returns surviving
/// member indices per cluster.
pub fn filter_outliers(
    assignments: &[usize],
    embeddings: &[Vec<F>],
    centers: &[Vec<F>],
    image_ids: &[usize],
    n_class_images: usize,
    cfg: &DiscoveryConfig,
) -> Vec<Vec<usize>> {
    let k = centers.len();
    let mut survivors: Vec<Vec<usize>> = vec![Vec::new(); k];
    for c in 0..k {
        let members: Vec<usize> = (0..embeddings.len()).filter(|&i| assignments[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut dists: Vec<f64> = members
            .iter()
            .map(|&i| dist(&embeddings[i], &centers[c]))
            .collect();
        let mut sorted = dists.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Nearest-rank percentile.
        let rank = ((cfg.percentile * sorted.len() as f64).ceil() as usize)
            .clamp(1, sorted.len())
            - 1;
        let threshold = sorted[rank];
        let kept: Vec<usize> = members
            .iter()
            .zip(dists.drain(..))
            .filter(|(_, d)| *d <= threshold)
            .map(|(&i, _)| i)
            .collect();
        if kept.len() < cfg.min_cluster_size {
            continue;
        }
        let support: BTreeSet<usize> = kept.iter().map(|&i| image_ids[i]).collect();
        if (support.len() as f64) < cfg.min_image_fraction * n_class_images as f64 {
            continue;
        }
        survivors[c] = kept;
    }
    survivors
}

/// Segments and embeds every sampled image of a class; the patches and their
/// refs, in a deterministic order.
fn class_patches(
    dataset: &LabeledDataset,
    image_indices: &[usize],
    space: &ActivationSpace,
    seg_cfg: &SegmentationConfig,
    fill: F,
) -> Result<(Vec<SegmentPatch>, Vec<PatchRef>)> {
    let mut patches = Vec::new();
    let mut refs = Vec::new();
    for &i in image_indices {
        let masks = segment_multires(dataset.image(i), dataset.height(), dataset.width(), i, seg_cfg)?;
        for mask in &masks {
            for seg in 0..mask.n_segments as u32 {
                let p = extract_patch(
                    dataset.image(i),
                    mask,
                    seg,
                    dataset.task_labels[i],
                    fill,
                    space.input_hw,
                )?;
                if p.pixel_mask.iter().filter(|&&m| m).count() < seg_cfg.min_segment_px {
                    continue;
                }
                refs.push(PatchRef {
                    image_id: i,
                    level: mask.resolution_level,
                    segment_id: seg,
                });
                patches.push(p);
            }
        }
    }
    Ok((patches, refs))
}

/// Concept candidates for one class: cluster the class's segment embeddings,
/// filter outliers, and rebuild centers/radii over the survivors.
pub fn discover_class_concepts(
    dataset: &LabeledDataset,
    class: u16,
    space: &ActivationSpace,
    cfg: &DiscoveryConfig,
    seg_cfg: &SegmentationConfig,
    fill: F,
) -> Result<Vec<ClassConceptCandidate>> {
    let mut image_indices = dataset.indices_of_class(class);
    if image_indices.len() < cfg.min_images {
        return Err(Error::Discovery {
            class: class as usize,
            details: format!(
                "{} images, need at least {}",
                image_indices.len(),
                cfg.min_images
            ),
        });
    }
    if image_indices.len() > cfg.max_images_per_class {
        stream(cfg.seed, "discover-sample", class as u64).shuffle(&mut image_indices);
        image_indices.truncate(cfg.max_images_per_class);
        image_indices.sort_unstable();
    }

    let (patches, refs) = class_patches(dataset, &image_indices, space, seg_cfg, fill)?;
    let embeddings: Vec<Vec<F>> = space
        .embed_batch(&patches.iter().map(|p| p.patch.clone()).collect::<Vec<_>>())?
        .into_iter()
        .map(|e| e.values)
        .collect();
    if embeddings.is_empty() {
        return Err(Error::Discovery {
            class: class as usize,
            details: "no usable segments".into(),
        });
    }

    let k = cfg.clusters_per_class.min(embeddings.len());
    // Per-class seed: the class label folded into the discovery seed.
    let result = kmeans_best_of(
        &embeddings,
        k,
        cfg.seed ^ class as u64,
        cfg.restarts,
        cfg.max_iter,
    )?;

    let image_ids: Vec<usize> = refs.iter().map(|r| r.image_id).collect();
    let survivors = filter_outliers(
        &result.assignments,
        &embeddings,
        &result.centers,
        &image_ids,
        image_indices.len(),
        cfg,
    );

    let mut candidates = Vec::new();
    for kept in survivors.into_iter().filter(|s| !s.is_empty()) {
        let dim = space.dim;
        let mut center = vec![0.0f64; dim];
        for &i in &kept {
            for (c, v) in center.iter_mut().zip(&embeddings[i]) {
                *c += *v as f64;
            }
        }
        for c in center.iter_mut() {
            *c /= kept.len() as f64;
        }
        let center: Vec<F> = center.into_iter().map(|v| v as F).collect();
        let radius = kept
            .iter()
            .map(|&i| dist(&embeddings[i], &center))
            .fold(0.0f64, f64::max) as F;
        candidates.push(ClassConceptCandidate {
            class,
            center,
            radius,
            member_patch_refs: kept.iter().map(|&i| refs[i]).collect(),
            support_images: kept.iter().map(|&i| image_ids[i]).collect(),
            member_embeddings: kept.iter().map(|&i| embeddings[i].clone()).collect(),
        });
    }
    Ok(candidates)
}

/// Discovery over every class present in the dataset, parallel across
/// classes.
pub fn discover_all(
    dataset: &LabeledDataset,
    space: &ActivationSpace,
    cfg: &DiscoveryConfig,
    seg_cfg: &SegmentationConfig,
) -> Result<Vec<ClassConceptCandidate>> {
    let fill = dataset.mean_intensity();
    let mut classes: Vec<u16> = dataset.task_labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let per_class: Vec<Result<Vec<ClassConceptCandidate>>> = classes
        .par_iter()
        .map(|&c| discover_class_concepts(dataset, c, space, cfg, seg_cfg, fill))
        .collect();
    let mut out = Vec::new();
    for r in per_class {
        out.extend(r?);
    }
    Ok(out)
}

/// Validates the containment invariant: every member lies inside its
/// candidate's hypersphere (up to `tol`).
pub fn containment_violations<S: Scalar>(
    candidates: &[ClassConceptCandidate],
    tol: S,
) -> usize {
    candidates
        .iter()
        .map(|cand| {
            cand.member_embeddings
                .iter()
                .filter(|e| dist(e, &cand.center) > cand.radius as f64 + tol.as_f64())
                .count()
        })
        .sum()
}
