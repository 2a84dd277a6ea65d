//! The global concept space: aggregated hyperspheres and hypersphere-
//! membership annotation.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::cluster::kmeans_best_of;
use crate::data::{ConceptMatrix, LabeledDataset};
use crate::discover::{ClassConceptCandidate, PatchRef};
use crate::embed::{ActivationSpace, SpaceName};
use crate::error::{Error, Result};
use crate::scalar::dist;
use crate::segment::{extract_patch, segment_multires, SegmentationConfig};
use crate::F;

pub const MAX_EXEMPLARS: usize = 10;

/// A region in the activation space: centroid plus max-member radius, with
/// the classes whose candidates it merged and a few exemplar patches.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ConceptHypersphere {
    pub id: usize,
    pub center: Vec<F>,
    pub radius: F,
    pub classes: Vec<u16>,
    pub exemplars: Vec<PatchRef>,
    /// (class, candidate index) provenance; in-memory only.
    #[serde(skip)]
    pub member_candidates: Vec<(u16, usize)>,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ConceptSpace {
    pub space_name: SpaceName,
    pub dim: usize,
    pub concepts: Vec<ConceptHypersphere>,
}

impl ConceptSpace {
    /// Concept ids available to a class (those whose member candidates
    /// include it).
    pub fn class_index(&self, class: u16) -> Vec<usize> {
        self.concepts
            .iter()
            .filter(|c| c.classes.contains(&class))
            .map(|c| c.id)
            .collect()
    }

    pub fn k_global(&self) -> usize {
        self.concepts.len()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let space: ConceptSpace = serde_json::from_slice(&bytes)?;
        for (i, c) in space.concepts.iter().enumerate() {
            if c.id != i {
                return Err(Error::contract(format!(
                    "concept ids must be dense: found {} at position {i}",
                    c.id
                )));
            }
            if c.center.len() != space.dim {
                return Err(Error::contract(format!(
                    "concept {i} center dim {} != space dim {}",
                    c.center.len(),
                    space.dim
                )));
            }
        }
        Ok(space)
    }
}

/// Clusters candidate centers into `k_global` concepts, then recomputes each
/// concept's hypersphere from the union of its member candidates' patch
/// embeddings so containment survives the merge.
pub fn aggregate(
    candidates: &[ClassConceptCandidate],
    k_global: usize,
    seed: u64,
    space_name: SpaceName,
) -> Result<ConceptSpace> {
    if candidates.len() < k_global {
        return Err(Error::Aggregation(format!(
            "{} candidates for k_global={k_global}; lower k_global",
            candidates.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Aggregation("no candidates".into()));
    }
    let dim = candidates[0].center.len();
    if candidates.iter().any(|c| c.center.len() != dim) {
        return Err(Error::Aggregation("candidate dims differ".into()));
    }

    let centers: Vec<Vec<F>> = candidates.iter().map(|c| c.center.clone()).collect();
    let clustering = kmeans_best_of(&centers, k_global, seed, 8, 100)?;

    let mut concepts = Vec::with_capacity(k_global);
    for concept_id in 0..k_global {
        let member_idx: Vec<usize> = (0..candidates.len())
            .filter(|&i| clustering.assignments[i] == concept_id)
            .collect();
        debug_assert!(!member_idx.is_empty(), "kmeans repair keeps clusters filled");

        // Union of member embeddings.
        let mut center = vec![0.0f64; dim];
        let mut total = 0usize;
        for &i in &member_idx {
            for e in &candidates[i].member_embeddings {
                for (c, v) in center.iter_mut().zip(e) {
                    *c += *v as f64;
                }
            }
            total += candidates[i].member_embeddings.len();
        }
        for c in center.iter_mut() {
            *c /= total as f64;
        }
        let center: Vec<F> = center.iter().map(|&v| v as F).collect();

        let mut radius = 0.0f64;
        let mut ranked: Vec<(f64, PatchRef)> = Vec::new();
        for &i in &member_idx {
            for (e, r) in candidates[i]
                .member_embeddings
                .iter()
                .zip(&candidates[i].member_patch_refs)
            {
                let d = dist(e, &center);
                radius = radius.max(d);
                ranked.push((d, *r));
            }
        }
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let exemplars = ranked
            .iter()
            .take(MAX_EXEMPLARS)
            .map(|(_, r)| *r)
            .collect();

        let mut classes: Vec<u16> = member_idx.iter().map(|&i| candidates[i].class).collect();
        classes.sort_unstable();
        classes.dedup();

        // Candidate index within its class, for provenance.
        let member_candidates = member_idx
            .iter()
            .map(|&i| {
                let class = candidates[i].class;
                let nth = candidates[..i].iter().filter(|c| c.class == class).count();
                (class, nth)
            })
            .collect();

        concepts.push(ConceptHypersphere {
            id: concept_id,
            center,
            radius: radius as F,
            classes,
            exemplars,
            member_candidates,
        });
    }

    Ok(ConceptSpace {
        space_name,
        dim,
        concepts,
    })
}

/// The auto-annotated dataset: base images/labels plus hypersphere-membership
/// concept bits.
#[derive(Clone, Debug)]
pub struct AnnotatedDataset {
    pub base: LabeledDataset,
    pub auto_concepts: ConceptMatrix,
}

impl AnnotatedDataset {
    /// Dataset with the auto-annotations in the concept channel, for the
    /// store format.
    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        let names = (0..self.auto_concepts.k)
            .map(|j| format!("auto_{j}"))
            .collect();
        self.base.with_concepts(self.auto_concepts.clone(), names)
    }
}

/// Annotates every image: bit `j` is set iff `j` belongs to the image's
/// class index and some segment embedding lies inside concept `j`'s
/// hypersphere (union over segments).
pub fn annotate(
    space: &ConceptSpace,
    dataset: &LabeledDataset,
    embedder: &ActivationSpace,
    seg_cfg: &SegmentationConfig,
    fill: F,
) -> Result<AnnotatedDataset> {
    if embedder.dim != space.dim {
        return Err(Error::contract(format!(
            "embedder dim {} != concept space dim {}",
            embedder.dim, space.dim
        )));
    }
    if embedder.name != space.space_name {
        return Err(Error::contract(format!(
            "annotating a {} space with a {} embedder",
            space.space_name.as_str(),
            embedder.name.as_str()
        )));
    }
    let k = space.k_global();
    let class_indices: BTreeMap<u16, Vec<usize>> = dataset
        .task_labels
        .iter()
        .map(|&c| (c, space.class_index(c)))
        .collect();

    let rows: Vec<Result<Vec<u8>>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let allowed = &class_indices[&dataset.task_labels[i]];
            let mut row = vec![0u8; k];
            if allowed.is_empty() {
                return Ok(row);
            }
            let masks =
                segment_multires(dataset.image(i), dataset.height(), dataset.width(), i, seg_cfg)?;
            let mut patches = Vec::new();
            for mask in &masks {
                for seg in 0..mask.n_segments as u32 {
                    let p = extract_patch(
                        dataset.image(i),
                        mask,
                        seg,
                        dataset.task_labels[i],
                        fill,
                        embedder.input_hw,
                    )?;
                    if p.pixel_mask.iter().filter(|&&m| m).count() >= seg_cfg.min_segment_px {
                        patches.push(p.patch);
                    }
                }
            }
            let embeddings = embedder.embed_batch(&patches)?;
            for e in &embeddings {
                for &j in allowed {
                    if row[j] == 0 {
                        let c = &space.concepts[j];
                        if dist(&e.values, &c.center) <= c.radius as f64 {
                            row[j] = 1;
                        }
                    }
                }
            }
            Ok(row)
        })
        .collect();

    let mut bits = Vec::with_capacity(dataset.len() * k);
    for r in rows {
        bits.extend(r?);
    }
    Ok(AnnotatedDataset {
        base: dataset.clone(),
        auto_concepts: ConceptMatrix {
            n: dataset.len(),
            k,
            bits,
        },
    })
}

/// Per-concept, per-class activation frequencies from an annotation matrix.
pub fn activation_stats(
    annotated: &AnnotatedDataset,
) -> BTreeMap<usize, BTreeMap<u16, f64>> {
    let k = annotated.auto_concepts.k;
    let mut count: BTreeMap<(usize, u16), (usize, usize)> = BTreeMap::new();
    for i in 0..annotated.base.len() {
        let class = annotated.base.task_labels[i];
        let row = annotated.auto_concepts.row(i);
        for j in 0..k {
            let e = count.entry((j, class)).or_insert((0, 0));
            e.0 += row[j] as usize;
            e.1 += 1;
        }
    }
    let mut out: BTreeMap<usize, BTreeMap<u16, f64>> = BTreeMap::new();
    for ((j, class), (active, total)) in count {
        out.entry(j)
            .or_default()
            .insert(class, active as f64 / total as f64);
    }
    out
}

/// Optional pass: drops concepts that activate at or above `bg_threshold`
/// uniformly across every class that can express them, then re-densifies
/// ids.
pub fn filter_concepts(
    space: &ConceptSpace,
    stats: &BTreeMap<usize, BTreeMap<u16, f64>>,
    bg_threshold: f64,
) -> Result<ConceptSpace> {
    let mut kept = Vec::new();
    for concept in &space.concepts {
        // Background-like means firing at or above the threshold in every
        // class of the dataset; a concept confined to one class has zero
        // frequency elsewhere and is kept.
        let background = match stats.get(&concept.id) {
            Some(by_class) => {
                !by_class.is_empty() && by_class.values().all(|&f| f >= bg_threshold)
            }
            None => false,
        };
        if !background {
            kept.push(concept.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::Aggregation(
            "background filter would drop every concept".into(),
        ));
    }
    for (new_id, c) in kept.iter_mut().enumerate() {
        c.id = new_id;
    }
    Ok(ConceptSpace {
        space_name: space.space_name,
        dim: space.dim,
        concepts: kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Split};
    use crate::discover::ClassConceptCandidate;
    use crate::embed::pt::pt_trunk;
    use crate::nn::{Params, Tensor};
    use crate::rng::stream;
    use crate::segment::ResolutionLevel;
    use std::collections::BTreeSet;

    fn candidate(class: u16, center: Vec<F>, members: Vec<Vec<F>>) -> ClassConceptCandidate {
        let radius = members
            .iter()
            .map(|e| dist(e, &center))
            .fold(0.0f64, f64::max) as F;
        ClassConceptCandidate {
            class,
            center,
            radius,
            member_patch_refs: (0..members.len())
                .map(|i| PatchRef {
                    image_id: i,
                    level: ResolutionLevel::Coarse,
                    segment_id: 0,
                })
                .collect(),
            support_images: (0..members.len()).collect::<BTreeSet<_>>(),
            member_embeddings: members,
        }
    }

    #[test]
    fn identity_aggregation_preserves_candidates() {
        let cands = vec![
            candidate(0, vec![0.0, 0.0], vec![vec![0.1, 0.0], vec![-0.1, 0.0]]),
            candidate(1, vec![5.0, 5.0], vec![vec![5.2, 5.0], vec![4.8, 5.0]]),
        ];
        let space = aggregate(&cands, 2, 7, SpaceName::PtAct).unwrap();
        assert_eq!(space.k_global(), 2);
        for concept in &space.concepts {
            let matching = cands
                .iter()
                .find(|c| dist(&c.center, &concept.center) < 1e-6)
                .expect("one concept per candidate");
            assert!((concept.radius - matching.radius).abs() < 1e-6);
            assert_eq!(concept.classes.len(), 1);
        }
    }

    #[test]
    fn shared_concepts_merge_across_classes() {
        let shared_members = vec![vec![1.0, 1.0], vec![1.1, 1.0], vec![0.9, 1.0]];
        let cands = vec![
            candidate(2, vec![1.0, 1.0], shared_members.clone()),
            candidate(5, vec![1.0, 1.0], shared_members),
            candidate(3, vec![9.0, 9.0], vec![vec![9.0, 9.0], vec![9.1, 9.0]]),
        ];
        let space = aggregate(&cands, 2, 3, SpaceName::PtAct).unwrap();
        let merged = space
            .concepts
            .iter()
            .find(|c| c.classes.len() == 2)
            .expect("identical candidates from two classes merge");
        assert_eq!(merged.classes, vec![2, 5]);
        assert_eq!(space.class_index(2), space.class_index(5));
        // Containment over the union of members.
        for cand in &cands[..2] {
            for e in &cand.member_embeddings {
                assert!(dist(e, &merged.center) <= merged.radius as f64 + 1e-6);
            }
        }
    }

    #[test]
    fn too_few_candidates_is_an_aggregation_error() {
        let cands = vec![candidate(0, vec![0.0], vec![vec![0.0]])];
        match aggregate(&cands, 5, 0, SpaceName::PtAct) {
            Err(Error::Aggregation(msg)) => assert!(msg.contains("lower k_global")),
            other => panic!("expected aggregation error, got {other:?}"),
        }
    }

    fn toy_embedder(seed: u64) -> ActivationSpace {
        let trunk = pt_trunk();
        let mut params = Params::new();
        trunk
            .add_params(&mut params, "embed", &mut stream(seed, "space-test", 0))
            .unwrap();
        ActivationSpace::new(SpaceName::PtAct, trunk, "embed", params, "fixed")
    }

    fn tiny_dataset(n: usize, label: u16) -> LabeledDataset {
        let mut pixels = Vec::new();
        for i in 0..n {
            let mut rng = stream(9, "tiny", i as u64);
            use crate::rng::Draw;
            for _ in 0..28 * 56 {
                pixels.push(rng.f64_in(0.0, 1.0) as f32);
            }
        }
        LabeledDataset::new(
            Tensor::new(vec![n, 1, 28, 56], pixels).unwrap(),
            vec![label; n],
            None,
            Split::Train,
            DatasetMeta {
                n_classes: 11,
                concept_names: vec![],
            },
        )
        .unwrap()
    }

    /// A concept space with one concept anchored at a real segment embedding
    /// of image 0, one unreachable concept, and one out-of-class concept.
    fn anchored_space(
        dataset: &LabeledDataset,
        embedder: &ActivationSpace,
        label: u16,
    ) -> ConceptSpace {
        let seg_cfg = SegmentationConfig::default();
        let masks = segment_multires(dataset.image(0), 28, 56, 0, &seg_cfg).unwrap();
        let patch = extract_patch(dataset.image(0), &masks[0], 0, label, 0.5, embedder.input_hw)
            .unwrap();
        let anchor = embedder.embed_one(&patch.patch).unwrap().values;
        let far: Vec<F> = anchor.iter().map(|v| v + 1000.0).collect();
        ConceptSpace {
            space_name: SpaceName::PtAct,
            dim: embedder.dim,
            concepts: vec![
                ConceptHypersphere {
                    id: 0,
                    center: anchor.clone(),
                    radius: 0.0,
                    classes: vec![label],
                    exemplars: vec![],
                    member_candidates: vec![],
                },
                ConceptHypersphere {
                    id: 1,
                    center: far,
                    radius: 0.001,
                    classes: vec![label],
                    exemplars: vec![],
                    member_candidates: vec![],
                },
                ConceptHypersphere {
                    id: 2,
                    center: anchor,
                    radius: 1000.0,
                    classes: vec![label + 1],
                    exemplars: vec![],
                    member_candidates: vec![],
                },
            ],
        }
    }

    #[test]
    fn annotation_class_restriction_and_membership() {
        let dataset = tiny_dataset(2, 4);
        let embedder = toy_embedder(11);
        let space = anchored_space(&dataset, &embedder, 4);
        let annotated = annotate(
            &space,
            &dataset,
            &embedder,
            &SegmentationConfig::default(),
            0.5,
        )
        .unwrap();
        // Segment exactly at the center: distance 0 <= radius 0 sets bit 0.
        assert_eq!(annotated.auto_concepts.row(0)[0], 1);
        // Unreachable hypersphere stays 0.
        assert_eq!(annotated.auto_concepts.row(0)[1], 0);
        // Concept of another class is structurally 0 even though every
        // embedding lies inside it.
        assert_eq!(annotated.auto_concepts.row(0)[2], 0);
    }

    #[test]
    fn enlarging_radii_is_monotone() {
        let dataset = tiny_dataset(3, 4);
        let embedder = toy_embedder(12);
        let mut space = anchored_space(&dataset, &embedder, 4);
        let seg = SegmentationConfig::default();
        let before = annotate(&space, &dataset, &embedder, &seg, 0.5).unwrap();
        for c in &mut space.concepts {
            c.radius += 5.0;
        }
        let after = annotate(&space, &dataset, &embedder, &seg, 0.5).unwrap();
        for (b, a) in before
            .auto_concepts
            .bits
            .iter()
            .zip(&after.auto_concepts.bits)
        {
            assert!(a >= b, "bits may only turn on when radii grow");
        }
    }

    #[test]
    fn annotation_is_reproducible() {
        let dataset = tiny_dataset(3, 2);
        let embedder = toy_embedder(13);
        let space = anchored_space(&dataset, &embedder, 2);
        let seg = SegmentationConfig::default();
        let a = annotate(&space, &dataset, &embedder, &seg, 0.5).unwrap();
        let b = annotate(&space, &dataset, &embedder, &seg, 0.5).unwrap();
        assert_eq!(a.auto_concepts, b.auto_concepts);
    }

    #[test]
    fn dim_mismatch_is_a_contract_error() {
        let dataset = tiny_dataset(1, 0);
        let embedder = toy_embedder(14);
        let space = ConceptSpace {
            space_name: SpaceName::PtAct,
            dim: embedder.dim + 1,
            concepts: vec![],
        };
        assert!(matches!(
            annotate(&space, &dataset, &embedder, &SegmentationConfig::default(), 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn background_filter_drops_uniformly_active_concepts() {
        let space = ConceptSpace {
            space_name: SpaceName::PtAct,
            dim: 2,
            concepts: vec![
                ConceptHypersphere {
                    id: 0,
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                    classes: vec![0, 1],
                    exemplars: vec![],
                    member_candidates: vec![],
                },
                ConceptHypersphere {
                    id: 1,
                    center: vec![1.0, 1.0],
                    radius: 1.0,
                    classes: vec![0],
                    exemplars: vec![],
                    member_candidates: vec![],
                },
            ],
        };
        let mut stats: BTreeMap<usize, BTreeMap<u16, f64>> = BTreeMap::new();
        stats.insert(0, BTreeMap::from([(0, 0.95), (1, 0.97)]));
        stats.insert(1, BTreeMap::from([(0, 0.95), (1, 0.0)]));

        // Concept 0 is active in 95%+ of every class it can express: drop.
        let filtered = filter_concepts(&space, &stats, 0.9).unwrap();
        assert_eq!(filtered.k_global(), 1);
        assert_eq!(filtered.concepts[0].classes, vec![0]);
        assert_eq!(filtered.concepts[0].id, 0, "ids re-densified");

        // Threshold above 1 is a no-op.
        let noop = filter_concepts(&space, &stats, 1.01).unwrap();
        assert_eq!(noop.k_global(), 2);

        // Dropping everything errors.
        stats.insert(1, BTreeMap::from([(0, 0.95)]));
        assert!(filter_concepts(&space, &stats, 0.9).is_err());
    }

    #[test]
    fn json_roundtrip_preserves_schema_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("concepts.json");
        let cands = vec![
            candidate(0, vec![0.0, 0.0], vec![vec![0.1, 0.0]; 3]),
            candidate(1, vec![4.0, 4.0], vec![vec![4.0, 4.1]; 3]),
        ];
        let space = aggregate(&cands, 2, 1, SpaceName::PtAct).unwrap();
        space.save_json(&path).unwrap();
        let loaded = ConceptSpace::load_json(&path).unwrap();
        assert_eq!(loaded.dim, 2);
        assert_eq!(loaded.k_global(), 2);
        for (a, b) in space.concepts.iter().zip(&loaded.concepts) {
            assert_eq!(a.center, b.center);
            assert_eq!(a.radius, b.radius);
            assert_eq!(a.classes, b.classes);
            assert_eq!(a.exemplars, b.exemplars);
        }
        let json: serde_json::Value =
            serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        let obj = json.as_object().unwrap();
        assert!(obj.contains_key("space_name"));
        assert!(obj.contains_key("dim"));
        let c0 = &json["concepts"][0];
        for field in ["id", "center", "radius", "classes", "exemplars"] {
            assert!(c0.get(field).is_some(), "missing {field}");
        }
    }
}
