//! Procedural seven-segment-style digit glyphs.
//!
//! Digits 0..5 are drawn as capsule strokes on a 28x28 cell with optional
//! translation, rotation, stroke-width jitter, and pixel noise.

use crate::rng::{Draw, Rng};
use crate::F;

pub const CELL: usize = 28;

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterConfig {
    /// Max |translation| in pixels, both axes.
    pub translate_px: f32,
    /// Max |rotation| in degrees.
    pub rotate_deg: f32,
    /// Max |stroke width delta| in pixels.
    pub stroke_jitter: f32,
    /// Gaussian pixel noise sigma (values re-clamped to [0,1]).
    pub noise_sigma: f32,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            translate_px: 3.0,
            rotate_deg: 15.0,
            stroke_jitter: 0.5,
            noise_sigma: 0.05,
        }
    }
}

impl JitterConfig {
    pub fn zero() -> Self {
        JitterConfig {
            translate_px: 0.0,
            rotate_deg: 0.0,
            stroke_jitter: 0.0,
            noise_sigma: 0.0,
        }
    }
}

/// Segment endpoints: a=top, b=top-right, c=bottom-right, d=bottom,
/// e=bottom-left, f=top-left, g=middle.
const SEGMENTS: [((f32, f32), (f32, f32)); 7] = [
    ((8.0, 5.0), (20.0, 5.0)),   // a
    ((21.0, 6.0), (21.0, 13.0)), // b
    ((21.0, 15.0), (21.0, 22.0)),// c
    ((8.0, 23.0), (20.0, 23.0)), // d
    ((7.0, 15.0), (7.0, 22.0)),  // e
    ((7.0, 6.0), (7.0, 13.0)),   // f
    ((8.0, 14.0), (20.0, 14.0)), // g
];

/// Active segments per digit 0..5.
const DIGIT_SEGMENTS: [&[usize]; 6] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
];

const BASE_STROKE: f32 = 2.6;
const AA: f32 = 0.7;
/// Strokes taper from 1.3x width at the start to 0.7x at the end, so every
/// stroke fragment carries its orientation.
const TAPER: f32 = 0.45;

/// Distance to the segment and the normalized position of the closest point
/// along it.
fn point_segment_distance(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> (f32, f32) {
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    (((px - cx).powi(2) + (py - cy).powi(2)).sqrt(), t)
}

/// Renders `digit` into a `CELL*CELL` buffer. The per-sample RNG drives all
/// jitter draws, so the same stream always reproduces the same glyph.
pub fn render_digit(digit: u8, jitter: &JitterConfig, rng: &mut Rng) -> Vec<F> {
    assert!(digit <= 5, "glyphs cover digits 0..5");
    // Scale a symmetric unit draw so a zero range is exactly zero while the
    // draw count stays constant.
    let mut draw = |max: f32| (rng.f64_in(-1.0, 1.0) * max as f64) as f32;
    let tx = draw(jitter.translate_px);
    let ty = draw(jitter.translate_px);
    let theta = draw(jitter.rotate_deg).to_radians();
    let stroke = BASE_STROKE + draw(jitter.stroke_jitter);

    let segs = DIGIT_SEGMENTS[digit as usize];
    let (sin, cos) = theta.sin_cos();
    let center = CELL as f32 / 2.0;
    let half = stroke / 2.0;

    let mut out = vec![0.0f32; CELL * CELL];
    for y in 0..CELL {
        for x in 0..CELL {
            // Inverse transform the pixel into glyph coordinates.
            let (px, py) = (x as f32 - center - tx, y as f32 - center - ty);
            let gx = px * cos + py * sin + center;
            let gy = -px * sin + py * cos + center;
            let mut ink = 0.0f32;
            for &s in segs {
                let (a, b) = SEGMENTS[s];
                let (d, t) = point_segment_distance(gx, gy, a, b);
                let half_t = half * (1.0 + TAPER - 2.0 * TAPER * t);
                ink = ink.max(((half_t + AA - d) / (2.0 * AA)).clamp(0.0, 1.0));
            }
            out[y * CELL + x] = ink;
        }
    }

    if jitter.noise_sigma > 0.0 {
        for v in &mut out {
            *v = (*v + jitter.noise_sigma * rng.standard_normal() as f32).clamp(0.0, 1.0);
        }
    }
    out
}

/// Binary stroke mask of the canonical (jitter-free) glyph; used by tests to
/// measure patch/stroke overlap.
pub fn stroke_mask(digit: u8) -> Vec<bool> {
    let segs = DIGIT_SEGMENTS[digit as usize];
    let mut mask = vec![false; CELL * CELL];
    for y in 0..CELL {
        for x in 0..CELL {
            let d = segs
                .iter()
                .map(|&s| {
                    let (a, b) = SEGMENTS[s];
                    point_segment_distance(x as f32, y as f32, a, b).0
                })
                .fold(f32::INFINITY, f32::min);
            mask[y * CELL + x] = d <= BASE_STROKE * (1.0 + TAPER) / 2.0 + AA;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn canonical_glyphs_are_deterministic() {
        let a = render_digit(3, &JitterConfig::zero(), &mut stream(7, "g", 0));
        let b = render_digit(3, &JitterConfig::zero(), &mut stream(7, "g", 0));
        assert_eq!(a, b);
    }

    #[test]
    fn digits_are_distinct() {
        let zero = JitterConfig::zero();
        for da in 0..6u8 {
            for db in (da + 1)..6 {
                let a = render_digit(da, &zero, &mut stream(1, "g", 0));
                let b = render_digit(db, &zero, &mut stream(1, "g", 0));
                let diff: f32 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
                assert!(diff > 10.0, "digits {da} and {db} too similar");
            }
        }
    }

    #[test]
    fn values_stay_in_unit_interval() {
        let mut rng = stream(2, "g", 1);
        let img = render_digit(5, &JitterConfig::default(), &mut rng);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn stroke_mask_covers_glyph_ink() {
        let img = render_digit(2, &JitterConfig::zero(), &mut stream(3, "g", 0));
        let mask = stroke_mask(2);
        for (i, &v) in img.iter().enumerate() {
            if v > 0.5 {
                assert!(mask[i], "ink at {i} outside stroke mask");
            }
        }
    }
}
