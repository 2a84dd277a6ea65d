//! Lloyd's k-means with k-means++ seeding and empty-cluster repair.

use crate::error::{Error, Result};
use crate::rng::{stream, Draw};
use crate::scalar::{sq_dist, Scalar};

#[derive(Clone, Debug)]
pub struct KMeansResult<S> {
    pub centers: Vec<Vec<S>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centers.
    pub inertia: S,
    pub iterations: usize,
}

/// Nearest center per point; ties go to the lowest center index.
fn assign_all<S: Scalar>(points: &[Vec<S>], centers: &[Vec<S>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = f64::INFINITY;
            let mut best_c = 0;
            for (ci, c) in centers.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best {
                    best = d;
                    best_c = ci;
                }
            }
            best_c
        })
        .collect()
}

fn inertia_of<S: Scalar>(points: &[Vec<S>], centers: &[Vec<S>], assign: &[usize]) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum()
}

fn update_centers<S: Scalar>(points: &[Vec<S>], assign: &[usize], k: usize) -> Vec<Option<Vec<S>>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v.as_f64();
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| {
            (c > 0).then(|| s.into_iter().map(|v| S::from_f64(v / c as f64)).collect())
        })
        .collect()
}

/// Re-seeds each empty cluster at the point currently farthest from its
/// assigned center. Returns true if anything was repaired.
fn repair_empties<S: Scalar>(
    points: &[Vec<S>],
    centers: &mut [Vec<S>],
    assign: &mut [usize],
) -> bool {
    let k = centers.len();
    let mut counts = vec![0usize; k];
    for &a in assign.iter() {
        counts[a] += 1;
    }
    let mut repaired = false;
    let mut taken = vec![false; points.len()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = (0..points.len())
            .filter(|&i| !taken[i] && counts[assign[i]] > 1)
            .max_by(|&i, &j| {
                let di = sq_dist(&points[i], &centers[assign[i]]);
                let dj = sq_dist(&points[j], &centers[assign[j]]);
                di.partial_cmp(&dj).unwrap().then(j.cmp(&i))
            });
        if let Some(i) = far {
            counts[assign[i]] -= 1;
            centers[c] = points[i].clone();
            assign[i] = c;
            counts[c] = 1;
            taken[i] = true;
            repaired = true;
        }
    }
    repaired
}

fn kmeans_pp_init<S: Scalar>(points: &[Vec<S>], k: usize, seed: u64) -> Vec<Vec<S>> {
    let mut rng = stream(seed, "kmeans++", 0);
    let n = points.len();
    let mut centers: Vec<Vec<S>> = Vec::with_capacity(k);
    centers.push(points[rng.below(n)].clone());
    let mut d2: Vec<f64> = vec![0.0; n];
    while centers.len() < k {
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let d = centers
                .iter()
                .map(|c| sq_dist(p, c))
                .fold(f64::INFINITY, f64::min);
            d2[i] = d;
            total += d;
        }
        let next = if total > 0.0 {
            // Weighted draw proportional to squared distance.
            let u = rng.f64_in(0.0, total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centers.push(points[next].clone());
    }
    centers
}

/// k-means++ init then Lloyd iterations until the assignment reaches a
/// fixpoint or `max_iter`.
pub fn kmeans<S: Scalar>(
    points: &[Vec<S>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansResult<S>> {
    if k == 0 {
        return Err(Error::contract("kmeans requires k >= 1"));
    }
    if k > points.len() {
        return Err(Error::contract(format!(
            "kmeans k={k} exceeds point count {}",
            points.len()
        )));
    }
    let mut centers = kmeans_pp_init(points, k, seed);
    let mut assign = assign_all(points, &centers);
    let mut repaired = repair_empties(points, &mut centers, &mut assign);
    let mut prev_inertia = inertia_of(points, &centers, &assign);
    let mut iterations = 0;

    for it in 1..=max_iter {
        iterations = it;
        for (c, new) in update_centers(points, &assign, k).into_iter().enumerate() {
            if let Some(new) = new {
                centers[c] = new;
            }
        }
        let mut new_assign = assign_all(points, &centers);
        let new_repaired = repair_empties(points, &mut centers, &mut new_assign);
        let new_inertia = inertia_of(points, &centers, &new_assign);
        // Lloyd steps never increase inertia unless a repair interfered.
        debug_assert!(
            repaired || new_repaired || new_inertia <= prev_inertia * (1.0 + 1e-9) + 1e-12,
            "inertia rose {prev_inertia} -> {new_inertia}"
        );
        let converged = new_assign == assign && !new_repaired;
        assign = new_assign;
        prev_inertia = new_inertia;
        repaired = new_repaired;
        if converged {
            break;
        }
    }

    Ok(KMeansResult {
        inertia: S::from_f64(prev_inertia),
        centers,
        assignments: assign,
        iterations,
    })
}

/// Best of `restarts` seeded runs by inertia (ties keep the earliest run).
pub fn kmeans_best_of<S: Scalar>(
    points: &[Vec<S>],
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<KMeansResult<S>> {
    let mut best: Option<KMeansResult<S>> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans(points, k, seed.wrapping_add(r as u64), max_iter)?;
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}
