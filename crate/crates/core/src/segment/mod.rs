//! Multi-resolution SLIC segmentation and patch extraction.

pub mod slic;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::F;

pub use slic::{connected_components, slic_mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionLevel {
    Coarse,
    Mid,
    Fine,
}

impl ResolutionLevel {
    pub const ALL: [ResolutionLevel; 3] =
        [ResolutionLevel::Coarse, ResolutionLevel::Mid, ResolutionLevel::Fine];

    pub fn as_str(self) -> &'static str {
        match self {
            ResolutionLevel::Coarse => "coarse",
            ResolutionLevel::Mid => "mid",
            ResolutionLevel::Fine => "fine",
        }
    }
}

/// A superpixel partition of one image at one resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMask {
    pub image_id: usize,
    pub label_map: Vec<u32>,
    pub h: usize,
    pub w: usize,
    pub resolution_level: ResolutionLevel,
    pub n_segments: usize,
}

impl SegmentMask {
    pub fn segment_pixels(&self, segment_id: u32) -> Vec<usize> {
        self.label_map
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == segment_id)
            .map(|(p, _)| p)
            .collect()
    }
}

/// A superpixel crop rescaled to an embedder's input size.
#[derive(Clone, Debug)]
pub struct SegmentPatch {
    pub image_id: usize,
    pub class_label: u16,
    pub resolution_level: ResolutionLevel,
    pub segment_id: u32,
    /// Per-pixel membership in source image coordinates.
    pub pixel_mask: Vec<bool>,
    pub patch: Tensor<F>,
    pub area_fraction: F,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    /// Target superpixel counts at (coarse, mid, fine).
    pub counts: (usize, usize, usize),
    pub compactness: f64,
    pub max_iter: usize,
    /// Segments smaller than this many pixels are skipped at patch
    /// extraction (noise guard at the finest level).
    pub min_segment_px: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            counts: (4, 8, 15),
            compactness: 0.2,
            max_iter: 10,
            min_segment_px: 5,
        }
    }
}

/// SLIC at the three configured resolutions. Pure function of its inputs.
pub fn segment_multires(
    image: &[F],
    h: usize,
    w: usize,
    image_id: usize,
    cfg: &SegmentationConfig,
) -> Result<Vec<SegmentMask>> {
    let counts = [cfg.counts.0, cfg.counts.1, cfg.counts.2];
    ResolutionLevel::ALL
        .iter()
        .zip(counts)
        .map(|(&level, n)| {
            slic_mask(image_id, image, h, w, n, cfg.compactness, cfg.max_iter, level)
        })
        .collect()
}

/// A segment's bounding-box crop before rescaling. Non-member pixels inside
/// the box carry the fill value.
pub struct SegmentCrop {
    pub crop: Vec<F>,
    pub bh: usize,
    pub bw: usize,
    pub pixel_mask: Vec<bool>,
    pub count: usize,
}

/// Crops a segment's bounding box, filling non-member pixels with `fill`
/// (the dataset mean).
pub fn segment_crop(
    image: &[F],
    mask: &SegmentMask,
    segment_id: u32,
    fill: F,
) -> Result<SegmentCrop> {
    if segment_id as usize >= mask.n_segments {
        return Err(Error::contract(format!(
            "segment id {segment_id} out of range ({} segments)",
            mask.n_segments
        )));
    }
    let (h, w) = (mask.h, mask.w);
    let mut pixel_mask = vec![false; h * w];
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0usize, w, 0usize);
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mask.label_map[y * w + x] == segment_id {
                pixel_mask[y * w + x] = true;
                count += 1;
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    debug_assert!(count > 0, "masks contain no empty segment ids");
    let (bh, bw) = (y1 - y0 + 1, x1 - x0 + 1);
    let mut crop = vec![fill; bh * bw];
    for y in y0..=y1 {
        for x in x0..=x1 {
            if pixel_mask[y * w + x] {
                crop[(y - y0) * bw + (x - x0)] = image[y * w + x];
            }
        }
    }
    Ok(SegmentCrop {
        crop,
        bh,
        bw,
        pixel_mask,
        count,
    })
}

/// Crops a segment's bounding box, fills non-member pixels with
/// `fill` (the dataset mean), and bilinearly rescales to `target`.
pub fn extract_patch(
    image: &[F],
    mask: &SegmentMask,
    segment_id: u32,
    class_label: u16,
    fill: F,
    target: (usize, usize),
) -> Result<SegmentPatch> {
    let c = segment_crop(image, mask, segment_id, fill)?;
    let resized = bilinear_resize(&c.crop, c.bh, c.bw, target.0, target.1);
    Ok(SegmentPatch {
        image_id: mask.image_id,
        class_label,
        resolution_level: mask.resolution_level,
        segment_id,
        pixel_mask: c.pixel_mask,
        patch: Tensor::new(vec![1, target.0, target.1], resized)?,
        area_fraction: c.count as F / (mask.h * mask.w) as F,
    })
}

/// Bilinear resampling with half-pixel centers.
pub fn bilinear_resize(src: &[F], sh: usize, sw: usize, th: usize, tw: usize) -> Vec<F> {
    let mut out = vec![0.0f32; th * tw];
    let scale_y = sh as f32 / th as f32;
    let scale_x = sw as f32 / tw as f32;
    for ty in 0..th {
        let sy = ((ty as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f32;
        for tx in 0..tw {
            let sx = ((tx as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[ty * tw + tx] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Dumps a label map as an 8-bit PGM for debugging.
pub fn dump_pgm(mask: &SegmentMask, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "P5\n{} {}\n255", mask.w, mask.h)?;
    let scale = 255.0 / (mask.n_segments.max(2) - 1) as f32;
    let bytes: Vec<u8> = mask
        .label_map
        .iter()
        .map(|&l| (l as f32 * scale).round().min(255.0) as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}
