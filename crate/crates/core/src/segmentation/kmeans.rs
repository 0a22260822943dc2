use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::squared_distance;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative centroid movement drops below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 1000,
            seed: 0,
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub dim: usize,
    pub assignment: Vec<usize>,
    /// k x dim, row-major.
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squares after every iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim.max(1)
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Index of the nearest centroid by Euclidean distance; ties go to the lowest index.
pub fn nearest_centroid(v: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(v, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(row(i), row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            if d2[pick] == 0.0 {
                // rounding pushed us past the end; fall back to the last positive weight
                pick = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
            }
            pick
        } else {
            // all remaining points coincide with a center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(squared_distance(row(i), row(next)));
        }
    }
    chosen.iter().flat_map(|&i| row(i).to_vec()).collect()
}

/// Lloyd's algorithm with k-means++ seeding. Points are rows of `points` (row-major, `dim` wide).
///
/// Empty clusters are re-seeded with the point farthest from its own centroid,
/// taken from a cluster that keeps at least one member.
pub fn kmeans(points: &[f64], dim: usize, cfg: &KMeansConfig) -> Result<KMeansFit> {
    let n = points.len().checked_div(dim).unwrap_or(0);
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::TooManyClusters { k: cfg.k, points: n });
    }
    let k = cfg.k;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = plus_plus_init(points, dim, k, &mut rng);
    let mut objective = Vec::new();
    let mut assignment = vec![0usize; n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let nearest = par::map_range(n, |i| nearest_centroid(row(i), &centroids, dim));
        let mut dist: Vec<f64> = nearest.iter().map(|x| x.1).collect();
        for (a, (c, _)) in assignment.iter_mut().zip(&nearest) {
            *a = *c;
        }

        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for i in 0..n {
                if sizes[assignment[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                    far = Some(i);
                }
            }
            let i = far.expect("k <= n leaves a cluster with two members");
            sizes[assignment[i]] -= 1;
            assignment[i] = c;
            sizes[c] = 1;
            dist[i] = 0.0;
            centroids[c * dim..(c + 1) * dim].copy_from_slice(row(i));
        }

        let mut sums = vec![0.0; k * dim];
        for i in 0..n {
            let a = assignment[i];
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        let mut shift = 0.0;
        let mut scale = 0.0;
        for c in 0..k {
            for j in 0..dim {
                let new = sums[c * dim + j] / sizes[c] as f64;
                shift += (new - centroids[c * dim + j]).powi(2);
                scale += new * new;
                centroids[c * dim + j] = new;
            }
        }
        let wcss: f64 = (0..n)
            .map(|i| {
                let a = assignment[i];
                squared_distance(row(i), &centroids[a * dim..(a + 1) * dim])
            })
            .sum();
        objective.push(wcss);
        if shift.sqrt() <= cfg.tol * scale.sqrt().max(1e-12) {
            converged = true;
            break;
        }
    }
    Ok(KMeansFit {
        dim,
        assignment,
        centroids,
        objective,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            seed,
            ..KMeansConfig::default()
        }
    }

    fn sorted_centroids(fit: &KMeansFit) -> Vec<f64> {
        let mut c = fit.centroids.clone();
        c.sort_by(f64::total_cmp);
        c
    }

    #[test]
    fn separated_pair() {
        let fit = kmeans(&[0.0, 10.0], 1, &cfg(2, 0)).unwrap();
        assert_eq!(sorted_centroids(&fit), vec![0.0, 10.0]);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let pts = [1.0, 2.0, 3.0, 6.0, -1.0, 1.0];
        let fit = kmeans(&pts, 2, &cfg(1, 4)).unwrap();
        assert!((fit.centroids[0] - 1.0).abs() < 1e-12);
        assert!((fit.centroids[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters() {
        assert!(matches!(
            kmeans(&[0.0, 1.0], 1, &cfg(3, 0)),
            Err(Error::TooManyClusters { k: 3, points: 2 })
        ));
    }

    #[test]
    fn duplicates_never_leave_empty_clusters() {
        let pts = vec![1.0; 10].into_iter().chain([5.0, 5.0]).collect::<Vec<_>>();
        for seed in 0..20 {
            let fit = kmeans(&pts, 1, &cfg(4, seed)).unwrap();
            assert!(fit.cluster_sizes().iter().all(|&s| s > 0));
        }
    }

    #[test]
    fn nearest_centroid_ties_to_lowest() {
        assert_eq!(nearest_centroid(&[5.0], &[0.0, 10.0], 1).0, 0);
        assert_eq!(nearest_centroid(&[0.1], &[0.0, 10.0], 1).0, 0);
        assert_eq!(nearest_centroid(&[9.0], &[0.0, 10.0], 1).0, 1);
    }
}
