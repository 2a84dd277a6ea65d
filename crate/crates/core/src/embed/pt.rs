//! The fixed patch embedder: a small conv trunk pretrained once on a
//! self-supervised rotation pretext task (0/90/180/270 on glyph segment
//! crops), then frozen. Never sees task labels.

use std::path::Path;

use crate::data::glyph::JitterConfig;
use crate::data::shapes_add::generate_shapes_add;
use crate::error::Result;
use crate::nn::trunk::ConvTrunk;
use crate::nn::{checkpoint, Params, Sgd, Tape, Tensor};
use crate::rng::{stream, Draw};
use crate::segment::{bilinear_resize, segment_crop, segment_multires, SegmentationConfig};
use crate::F;

use super::{ActivationSpace, SpaceName};

pub const PT_DIM: usize = 32;
pub const PT_INPUT: (usize, usize) = (16, 16);
const PRETRAIN_IMAGES: usize = 600;
const PRETRAIN_EPOCHS: usize = 22;

pub fn pt_trunk() -> ConvTrunk {
    ConvTrunk::new(16, 32, PT_DIM, PT_INPUT).unwrap()
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct PtPretrainReport {
    pub holdout_accuracy: f32,
    pub n_patches: usize,
    pub epochs: usize,
}

/// Clockwise quarter turn; output dims are (w, h).
fn rot90_cw(src: &[F], h: usize, w: usize) -> (Vec<F>, usize, usize) {
    let mut dst = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            dst[x * h + (h - 1 - y)] = src[y * w + x];
        }
    }
    (dst, w, h)
}

fn rotate_quarters(src: Vec<F>, h: usize, w: usize, quarters: usize) -> (Vec<F>, usize, usize) {
    let mut cur = (src, h, w);
    for _ in 0..quarters % 4 {
        cur = rot90_cw(&cur.0, cur.1, cur.2);
    }
    cur
}

/// Pretrains the extractor and returns it frozen, along with the pretext
/// holdout accuracy.
pub fn build_pt_act(seed: u64) -> Result<(ActivationSpace, PtPretrainReport)> {
    let images = generate_shapes_add(PRETRAIN_IMAGES, splitmix(seed), &JitterConfig::default())?;
    let fill = images.mean_intensity();
    let seg_cfg = SegmentationConfig::default();

    // Rotated crops: rotation happens before the rescale so elongated
    // strokes keep their aspect cue. Coarse and mid segments only; fine
    // fragments are too small to carry orientation.
    let mut rng = stream(seed, "pt-rotations", 0);
    let mut xs: Vec<Vec<F>> = Vec::new();
    let mut ys: Vec<u16> = Vec::new();
    for i in 0..images.len() {
        let masks = segment_multires(images.image(i), images.height(), images.width(), i, &seg_cfg)?;
        for mask in &masks {
            if mask.resolution_level == crate::segment::ResolutionLevel::Fine {
                continue;
            }
            for seg in 0..mask.n_segments as u32 {
                let c = segment_crop(images.image(i), mask, seg, fill)?;
                if c.count < seg_cfg.min_segment_px {
                    continue;
                }
                // Background segments carry no orientation; keep only crops
                // with some ink.
                let ink = images.image(i)
                    .iter()
                    .zip(&c.pixel_mask)
                    .filter(|(&v, &m)| m && v > 0.35)
                    .count();
                if ink < 14 {
                    continue;
                }
                let q = rng.below(4);
                let (buf, rh, rw) = rotate_quarters(c.crop, c.bh, c.bw, q);
                xs.push(bilinear_resize(&buf, rh, rw, PT_INPUT.0, PT_INPUT.1));
                ys.push(q as u16);
            }
        }
    }
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    stream(seed, "pt-shuffle", 0).shuffle(&mut order);
    let n_train = n * 4 / 5;

    let trunk = pt_trunk();
    let mut params: Params<F> = Params::new();
    let mut init_rng = stream(seed, "pt-init", 0);
    trunk.add_params(&mut params, "embed", &mut init_rng)?;
    params.add_dense("rot_head", PT_DIM, 4, &mut init_rng)?;

    let lr: f32 = std::env::var("ACEM_PT_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.05);
    let epochs: usize = std::env::var("ACEM_PT_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(PRETRAIN_EPOCHS);
    let mut opt = Sgd::new(lr, 0.9);
    let batch = 64;
    for epoch in 0..epochs {
        let mut epoch_order = order[..n_train].to_vec();
        stream(seed, "pt-epoch", epoch as u64).shuffle(&mut epoch_order);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in epoch_order.chunks(batch) {
            let (x, labels) = gather(&xs, &ys, chunk);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let xn = tape.constant(x);
            let latent = trunk.forward(&mut tape, &bound, "embed", xn)?;
            let latent = tape.relu(latent);
            let logits = tape.dense(latent, bound.id("rot_head.weight"), bound.id("rot_head.bias"))?;
            let loss = tape.softmax_ce(logits, &labels)?;
            loss_sum += tape.value(loss).data()[0] as f64;
            batches += 1;
            tape.backward(loss)?;
            params.absorb_grads(&tape, &bound)?;
            opt.step(&mut params)?;
        }
        if std::env::var_os("ACEM_PT_TRACE").is_some() {
            eprintln!("pt epoch {epoch}: mean loss {:.4}", loss_sum / batches as f64);
        }
    }

    // Holdout accuracy on the pretext task.
    let holdout = &order[n_train..];
    let mut correct = 0usize;
    for chunk in holdout.chunks(256) {
        let (x, labels) = gather(&xs, &ys, chunk);
        let latent = trunk.forward_infer(&params, "embed", &x)?;
        let latent = crate::nn::kernels::relu_forward(&latent);
        let logits = crate::nn::kernels::dense_forward(
            &latent,
            params.get("rot_head.weight").unwrap(),
            params.get("rot_head.bias").unwrap(),
        )?;
        for (row, &label) in logits.data().chunks(4).zip(&labels) {
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            correct += (arg == label as usize) as usize;
        }
    }
    if std::env::var_os("ACEM_PT_TRACE").is_some() {
        eprintln!("pt holdout accuracy {:.4}", correct as f32 / holdout.len() as f32);
    }
    let report = PtPretrainReport {
        holdout_accuracy: correct as f32 / holdout.len() as f32,
        n_patches: n,
        epochs: PRETRAIN_EPOCHS,
    };

    // Freeze: keep only the trunk parameters.
    let mut frozen = Params::new();
    for (name, tensor) in params.iter() {
        if name.starts_with("embed.") {
            frozen.insert(name.clone(), tensor.clone())?;
        }
    }
    Ok((
        ActivationSpace::new(SpaceName::PtAct, trunk, "embed", frozen, "fixed"),
        report,
    ))
}

/// Loads the frozen extractor from `path`, or pretrains and persists it.
pub fn build_pt_act_cached(seed: u64, path: &Path) -> Result<(ActivationSpace, Option<PtPretrainReport>)> {
    if path.exists() {
        let params = checkpoint::load(path)?;
        return Ok((
            ActivationSpace::new(SpaceName::PtAct, pt_trunk(), "embed", params, "fixed"),
            None,
        ));
    }
    let (space, report) = build_pt_act(seed)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    space.save(path)?;
    Ok((space, Some(report)))
}

fn gather(xs: &[Vec<F>], ys: &[u16], idx: &[usize]) -> (Tensor<F>, Vec<u16>) {
    let hw = PT_INPUT.0 * PT_INPUT.1;
    let mut data = Vec::with_capacity(idx.len() * hw);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(&xs[i]);
        labels.push(ys[i]);
    }
    (
        Tensor::new(vec![idx.len(), 1, PT_INPUT.0, PT_INPUT.1], data).unwrap(),
        labels,
    )
}

fn splitmix(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x2545_F491_4F6C_DD1D)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_quarter_turns_are_identity() {
        let src: Vec<F> = (0..12).map(|i| i as f32).collect();
        let (r, h, w) = rotate_quarters(src.clone(), 3, 4, 4);
        assert_eq!((h, w), (3, 4));
        assert_eq!(r, src);
        let (r1, h1, w1) = rotate_quarters(src.clone(), 3, 4, 1);
        assert_eq!((h1, w1), (4, 3));
        // Top-left of the source lands at the top-right after a cw turn.
        assert_eq!(r1[2], src[0]);
    }

    #[test]
    fn pretraining_learns_rotations_and_freezes() {
        let (space, report) = build_pt_act(7).unwrap();
        assert!(
            report.holdout_accuracy > 0.8,
            "pretext holdout accuracy {} too low",
            report.holdout_accuracy
        );
        assert_eq!(space.dim, PT_DIM);
        // Frozen space: same patch embeds identically, hash stable.
        let p = Tensor::filled(vec![1, 16, 16], 0.25);
        let a = space.embed_one(&p).unwrap();
        let b = space.embed_one(&p).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(space.checkpoint_sha256(), space.checkpoint_sha256());
    }

    #[test]
    fn cached_build_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pt.ckpt");
        let (a, first) = build_pt_act_cached(3, &path).unwrap();
        assert!(first.is_some());
        let (b, second) = build_pt_act_cached(3, &path).unwrap();
        assert!(second.is_none());
        assert_eq!(a.checkpoint_sha256(), b.checkpoint_sha256());
    }
}
