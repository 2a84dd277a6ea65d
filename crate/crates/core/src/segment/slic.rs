//! SLIC superpixels: k-means in (x, y, intensity) with grid-seeded centers
//! and connectivity enforcement.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{ResolutionLevel, SegmentMask};

struct Center {
    y: f64,
    x: f64,
    intensity: f64,
}

/// Segments a grayscale image into roughly `n_segments` connected
/// superpixels.
///
/// Centers start on a regular grid with spacing `S = sqrt(h*w/n)`; pixels are
/// assigned by `D = sqrt(d_int^2 + (d_xy/S)^2 * compactness^2)` (ties to the
/// lowest center index); assignment/update iterates until centers move less
/// than 0.1 px or `max_iter` is reached. Orphan components are then merged
/// into the largest adjacent segment and ids densified.
pub fn slic<S: Scalar>(
    pixels: &[S],
    h: usize,
    w: usize,
    n_segments: usize,
    compactness: f64,
    max_iter: usize,
) -> Result<Vec<u32>> {
    if h == 0 || w == 0 || pixels.len() != h * w {
        return Err(Error::shape("slic", format!("{h}x{w} vs {}", pixels.len())));
    }
    if n_segments == 0 {
        return Err(Error::contract("slic requires n_segments >= 1"));
    }
    if n_segments > h * w {
        return Err(Error::contract(format!(
            "n_segments {n_segments} exceeds pixel count {}",
            h * w
        )));
    }

    let spacing = ((h * w) as f64 / n_segments as f64).sqrt();
    let ny = ((h as f64 / spacing).round() as usize).max(1);
    let nx = ((w as f64 / spacing).round() as usize).max(1);
    let mut centers: Vec<Center> = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            // Half-pixel offset: pixel centers span [0, h-1], so grid
            // quantiles land between pixels and ties split evenly.
            let y = (i as f64 + 0.5) * h as f64 / ny as f64 - 0.5;
            let x = (j as f64 + 0.5) * w as f64 / nx as f64 - 0.5;
            let py = (y.round().max(0.0) as usize).min(h - 1);
            let px = (x.round().max(0.0) as usize).min(w - 1);
            centers.push(Center {
                y,
                x,
                intensity: pixels[py * w + px].as_f64(),
            });
        }
    }

    let mut assign = vec![0u32; h * w];
    for _ in 0..max_iter {
        assign_pixels(pixels, h, w, &centers, spacing, compactness, &mut assign);

        // Update centers to cluster means; empty clusters keep their spot.
        let k = centers.len();
        let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); k];
        for y in 0..h {
            for x in 0..w {
                let c = assign[y * w + x] as usize;
                let s = &mut sums[c];
                s.0 += y as f64;
                s.1 += x as f64;
                s.2 += pixels[y * w + x].as_f64();
                s.3 += 1;
            }
        }
        let mut movement = 0.0f64;
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.3 == 0 {
                continue;
            }
            let ny = s.0 / s.3 as f64;
            let nx = s.1 / s.3 as f64;
            movement = movement.max(((ny - c.y).powi(2) + (nx - c.x).powi(2)).sqrt());
            c.y = ny;
            c.x = nx;
            c.intensity = s.2 / s.3 as f64;
        }
        if movement < 0.1 {
            break;
        }
    }
    assign_pixels(pixels, h, w, &centers, spacing, compactness, &mut assign);

    enforce_connectivity(&mut assign, h, w);
    Ok(assign)
}

fn assign_pixels<S: Scalar>(
    pixels: &[S],
    h: usize,
    w: usize,
    centers: &[Center],
    spacing: f64,
    compactness: f64,
    assign: &mut [u32],
) {
    let spatial_scale = (compactness / spacing).powi(2);
    for y in 0..h {
        for x in 0..w {
            let i = pixels[y * w + x].as_f64();
            let mut best = f64::INFINITY;
            let mut best_c = 0u32;
            for (ci, c) in centers.iter().enumerate() {
                let di = i - c.intensity;
                let dy = y as f64 - c.y;
                let dx = x as f64 - c.x;
                let d2 = di * di + spatial_scale * (dy * dy + dx * dx);
                if d2 < best {
                    best = d2;
                    best_c = ci as u32;
                }
            }
            assign[y * w + x] = best_c;
        }
    }
}

/// 4-connected component labeling; returns per-pixel component id and the
/// component count.
pub fn connected_components(labels: &[u32], h: usize, w: usize) -> (Vec<u32>, usize) {
    let mut comp = vec![u32::MAX; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp[start] != u32::MAX {
            continue;
        }
        let label = labels[start];
        comp[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == u32::MAX && labels[q] == label {
                    comp[q] = next;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        next += 1;
    }
    (comp, next as usize)
}

/// Keeps the largest component of every label; merges the rest into the
/// largest adjacent segment, then densifies label ids.
fn enforce_connectivity(assign: &mut [u32], h: usize, w: usize) {
    let (comp, n_comp) = connected_components(assign, h, w);
    let mut comp_size = vec![0usize; n_comp];
    let mut comp_label = vec![0u32; n_comp];
    for p in 0..h * w {
        comp_size[comp[p] as usize] += 1;
        comp_label[comp[p] as usize] = assign[p];
    }
    // Largest component per label wins the label.
    let mut main_of_label: std::collections::BTreeMap<u32, u32> = Default::default();
    for c in 0..n_comp {
        let l = comp_label[c];
        let cur = main_of_label.entry(l).or_insert(c as u32);
        if comp_size[c] > comp_size[*cur as usize]
            || (comp_size[c] == comp_size[*cur as usize] && (c as u32) < *cur)
        {
            *cur = c as u32;
        }
    }
    let is_main: Vec<bool> = (0..n_comp)
        .map(|c| main_of_label[&comp_label[c]] == c as u32)
        .collect();

    // Each pixel's final segment is identified by its component's "home"
    // component (a main one after merging).
    let mut home: Vec<u32> = (0..n_comp as u32).collect();
    let mut merged: Vec<bool> = is_main.clone();
    let mut area: Vec<usize> = comp_size.clone();
    loop {
        let mut progressed = false;
        for c in 0..n_comp {
            if merged[c] {
                continue;
            }
            // Largest already-merged neighbor component (ties: lowest home).
            let mut best: Option<(usize, u32)> = None;
            for p in 0..h * w {
                if comp[p] as usize != c {
                    continue;
                }
                let (y, x) = (p / w, p % w);
                for q in neighbors(y, x, h, w) {
                    let qc = comp[q] as usize;
                    if qc != c && merged[qc] {
                        let target = home[qc];
                        let cand = (area[target as usize], target);
                        best = Some(match best {
                            None => cand,
                            Some(b) => {
                                if cand.0 > b.0 || (cand.0 == b.0 && cand.1 < b.1) {
                                    cand
                                } else {
                                    b
                                }
                            }
                        });
                    }
                }
            }
            if let Some((_, target)) = best {
                home[c] = target;
                merged[c] = true;
                area[target as usize] += comp_size[c];
                progressed = true;
            }
        }
        if merged.iter().all(|&m| m) {
            break;
        }
        assert!(progressed, "orphan merging must progress on a connected grid");
    }

    // Densify: main components in ascending id order become 0..m.
    let mut dense: std::collections::BTreeMap<u32, u32> = Default::default();
    for c in 0..n_comp {
        if is_main[c] {
            let next = dense.len() as u32;
            dense.insert(c as u32, next);
        }
    }
    for p in 0..h * w {
        assign[p] = dense[&home[comp[p] as usize]];
    }
}

fn neighbors(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let mut v = Vec::with_capacity(4);
    if y > 0 {
        v.push((y - 1) * w + x);
    }
    if y + 1 < h {
        v.push((y + 1) * w + x);
    }
    if x > 0 {
        v.push(y * w + x - 1);
    }
    if x + 1 < w {
        v.push(y * w + x + 1);
    }
    v.into_iter()
}

/// Wraps a label map into a [`SegmentMask`].
pub fn slic_mask<S: Scalar>(
    image_id: usize,
    pixels: &[S],
    h: usize,
    w: usize,
    n_segments: usize,
    compactness: f64,
    max_iter: usize,
    level: ResolutionLevel,
) -> Result<SegmentMask> {
    let label_map = slic(pixels, h, w, n_segments, compactness, max_iter)?;
    let n = label_map.iter().copied().max().unwrap_or(0) as usize + 1;
    Ok(SegmentMask {
        image_id,
        label_map,
        h,
        w,
        resolution_level: level,
        n_segments: n,
    })
}
