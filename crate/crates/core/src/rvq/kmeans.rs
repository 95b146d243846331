//! Lloyd's k-means with k-means++ seeding. Used to seed codebooks and as
//! the single-codebook tokenizer baseline.

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub k: usize,
    pub d: usize,
    /// `k * d` row-major centroids.
    pub centroids: Vec<f64>,
    /// Points assigned to each centroid in the final iteration.
    pub counts: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid, lowest index on ties.
pub fn assign(point: &[f64], centroids: &[f64], d: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cen) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(point, cen);
        if dist < best_d {
            best_d = dist;
            best = c;
        }
    }
    best
}

/// Fits `k` centroids to `data` (`n * d` row-major) with at most `iters`
/// Lloyd iterations.
pub fn kmeans_fit(data: &[f64], d: usize, k: usize, iters: usize, rng: &mut SeededRng) -> Result<KMeans> {
    if d == 0 || !data.len().is_multiple_of(d) {
        return Err(Error::shape("kmeans_fit", "data is not a whole number of rows"));
    }
    let n = data.len() / d;
    if k == 0 || n < k {
        return Err(Error::Invalid(format!("kmeans_fit needs at least k={k} points, got {n}")));
    }
    let row = |i: usize| &data[i * d..(i + 1) * d];

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * d);
    centroids.extend_from_slice(row(rng.below(n)));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..d])).collect();
    while centroids.len() < k * d {
        let pick = if dist.iter().all(|&v| v == 0.0) {
            warn!("kmeans_fit: all remaining points coincide with chosen centroids; duplicating");
            rng.below(n)
        } else {
            rng.weighted(&dist)?
        };
        let c = row(pick).to_vec();
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }

    let mut labels = vec![usize::MAX; n];
    let mut counts = vec![0; k];
    let mut iterations = 0;
    for _ in 0..iters {
        iterations += 1;
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let c = assign(row(i), &centroids, d);
            if c != *label {
                *label = c;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * d];
        counts = vec![0; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for j in 0..d {
                sums[c * d + j] += data[i * d + j];
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if iters == 0 {
        for i in 0..n {
            counts[assign(row(i), &centroids, d)] += 1;
        }
    }
    Ok(KMeans { k, d, centroids, counts, iterations })
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.d..(c + 1) * self.d]
    }

    /// Mean squared distance from each point to its centroid.
    pub fn distortion(&self, data: &[f64]) -> f64 {
        let n = data.len() / self.d;
        data.chunks_exact(self.d).map(|p| sq_dist(p, self.centroid(assign(p, &self.centroids, self.d)))).sum::<f64>() / n as f64
    }
}
