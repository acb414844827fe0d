//! Lloyd's k-means with k-means++ seeding.
//!
//! Used to train the coarse quantizer and the product-quantization codebooks.
//! Deterministic for a fixed seed: seeding draws from a ChaCha stream, and
//! assignment ties go to the lowest centroid index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Outcome of a k-means run.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub dim: usize,
    /// `k × dim`, row-major.
    pub centroids: Vec<f32>,
    /// Cluster of each input point after the final iteration.
    pub assignments: Vec<usize>,
    /// Total squared distortion after each Lloyd iteration.
    pub distortion: Vec<f64>,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

#[inline]
pub(crate) fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Index of the nearest centroid and its squared distance; lowest index wins ties.
pub(crate) fn nearest(point: &[f32], centroids: &[f32], dim: usize) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_sq(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Clusters `points` (`n × dim`, row-major) into `k` groups.
pub fn kmeans(points: &[f32], dim: usize, k: usize, iters: usize, seed: u64) -> Result<KMeans> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(crate::error::invalid("point buffer is not a whole number of rows"));
    }
    if k == 0 {
        return Err(crate::error::invalid("k must be at least 1"));
    }
    if iters == 0 {
        return Err(crate::error::invalid("iters must be at least 1"));
    }
    let n = points.len() / dim;
    if n < k {
        return Err(Error::InvalidArgument(format!("{n} points cannot form {k} clusters")));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seed(points, dim, k, &mut rng);

    let mut assignments = vec![0usize; n];
    let mut dists = vec![0f32; n];
    let mut distortion = Vec::with_capacity(iters);

    for _ in 0..iters {
        for i in 0..n {
            let (c, d) = nearest(row(i), &centroids, dim);
            assignments[i] = c;
            dists[i] = d;
        }

        let mut counts = vec![0usize; k];
        for &c in &assignments {
            counts[c] += 1;
        }

        // Empty clusters take over the point currently farthest from its
        // centroid; each reseed uses a different point.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                assignments[i] = c;
                counts[c] = 1;
                dists[i] = 0.0;
            }
        }

        let mut sums = vec![0f64; k * dim];
        for i in 0..n {
            let c = assignments[i];
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for j in 0..dim {
                centroids[c * dim + j] = (sums[c * dim + j] * inv) as f32;
            }
        }

        let total: f64 = (0..n)
            .map(|i| l2_sq(row(i), &centroids[assignments[i] * dim..(assignments[i] + 1) * dim]) as f64)
            .sum();
        distortion.push(total);
    }

    Ok(KMeans {
        dim,
        centroids,
        assignments,
        distortion,
    })
}

fn plus_plus_seed(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));

    let mut best: Vec<f64> = (0..n).map(|i| l2_sq(row(i), row(first)) as f64).collect();
    for _ in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in best.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // fewer distinct points than clusters
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(row(pick));
        let c = &points[pick * dim..(pick + 1) * dim];
        for (i, b) in best.iter_mut().enumerate() {
            let d = l2_sq(row(i), c) as f64;
            if d < *b {
                *b = d;
            }
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, per: usize, centers: &[[f32; 2]]) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0f32, 0.7).unwrap();
        let mut out = Vec::new();
        for c in centers {
            for _ in 0..per {
                out.push(c[0] + noise.sample(&mut rng));
                out.push(c[1] + noise.sample(&mut rng));
            }
        }
        out
    }

    #[test]
    fn separated_duplicates() {
        let pts = [0.0, 0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0];
        let km = kmeans(&pts, 2, 2, 5, 1).unwrap();
        let mut cs: Vec<Vec<f32>> = (0..2).map(|c| km.centroid(c).to_vec()).collect();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
    }

    #[test]
    fn exact_cover_has_zero_distortion() {
        let pts = [0.0, 1.0, 5.0, 2.0, -3.0, 4.0, 5.0, 2.0];
        let km = kmeans(&pts, 2, 3, 10, 9).unwrap();
        assert_eq!(*km.distortion.last().unwrap(), 0.0);
    }

    #[test]
    fn distortion_never_increases() {
        let pts = blobs(3, 80, &[[0.0, 0.0], [4.0, 1.0], [-3.0, 5.0], [2.0, -4.0], [6.0, 6.0]]);
        for seed in 0..5 {
            let km = kmeans(&pts, 2, 7, 25, seed).unwrap();
            for w in km.distortion.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", km.distortion);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let pts = blobs(5, 50, &[[0.0, 0.0], [5.0, 5.0]]);
        let a = kmeans(&pts, 2, 4, 10, 42).unwrap();
        let b = kmeans(&pts, 2, 4, 10, 42).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn errors() {
        let pts = [0.0, 1.0];
        assert!(kmeans(&pts, 1, 0, 3, 0).is_err());
        assert!(kmeans(&pts, 1, 3, 3, 0).is_err());
        assert!(kmeans(&pts, 1, 1, 0, 0).is_err());
    }

    #[test]
    fn no_empty_cluster_survives() {
        // three distinct points, two copies each: every cluster must own a point
        let pts = [0.0, 0.0, 1.0, 1.0, 9.0, 9.0];
        let km = kmeans(&pts, 1, 3, 4, 11).unwrap();
        let mut seen = [false; 3];
        for &a in &km.assignments {
            seen[a] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
