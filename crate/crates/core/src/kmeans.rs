//! k-means++ seeding followed by Lloyd iterations, on flat f64 points.

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub dim: usize,
    pub k: usize,
    /// `k * dim` row-major.
    pub centroids: Vec<f64>,
    /// Objective after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, self.dim, x)
    }
}

#[inline]
pub(crate) fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closest centroid, lowest index on ties.
pub(crate) fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq(row, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub const MAX_ITERS: usize = 25;
pub const TOL: f64 = 1e-4;

/// Clusters `points` (`n * dim`, row-major) into `k` centroids.
///
/// Stops when no centroid moves by `tol` or more (Euclidean), or after
/// `max_iters` Lloyd steps. Empty clusters are reseeded at the point
/// farthest from its centroid.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeans> {
    if dim == 0 || k == 0 || points.len() % dim != 0 {
        return Err(Error::InvalidParameter("kmeans: dim, k must be >= 1 and points whole rows".into()));
    }
    let n = points.len() / dim;
    if n < k {
        return Err(Error::InsufficientData(format!("kmeans: {n} points for {k} clusters")));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut r = rng::seeded(seed);

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng::below(&mut r, n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq(row(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng::uniform(&mut r) * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng::below(&mut r, n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq(row(i), &centroids[start..]));
        }
    }

    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0f64; n];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        for i in 0..n {
            let (c, d) = nearest(&centroids, dim, row(i));
            assign[i] = c;
            dist[i] = d;
        }
        objective.push(dist.iter().sum());

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        let mut taken = vec![false; n];
        for c in 0..k {
            let new: Vec<f64> = if counts[c] > 0 {
                sums[c * dim..(c + 1) * dim].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n >= k");
                taken[far] = true;
                dist[far] = 0.0;
                row(far).to_vec()
            };
            shift = shift.max(sq(&new, &centroids[c * dim..(c + 1) * dim]).sqrt());
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&new);
        }
        if shift < tol {
            break;
        }
    }
    Ok(KMeans { dim, k, centroids, objective, iterations })
}
