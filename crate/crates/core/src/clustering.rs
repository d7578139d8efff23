//! k-means (Lloyd iterations, k-means++ seeding) for placing inducing points.

use faer::{Mat, MatRef};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PgpError, Result};
use crate::kernel::rows_of;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative decrease of the within-cluster sum of squares falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Cluster a uniform subsample of at most this many rows.
    pub sample_cap: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            max_iters: 100,
            rel_tol: 1e-6,
            seed,
            sample_cap: 100_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.max_iters == 0 || !(self.rel_tol > 0.0) || self.sample_cap == 0 {
            return Err(PgpError::Config(format!("invalid k-means settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Mat<f64>,
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after each Lloyd iteration.
    pub history: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(points: MatRef<'_, f64>, cfg: &KMeansConfig) -> Result<Mat<f64>> {
    Ok(kmeans_detailed(points, cfg)?.centroids)
}

pub fn kmeans_detailed(points: MatRef<'_, f64>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all = rows_of(points);
    let data: Vec<Vec<f64>> = if all.len() > cfg.sample_cap {
        let mut idx = sample(&mut rng, all.len(), cfg.sample_cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| all[i].clone()).collect()
    } else {
        all
    };
    let n = data.len();
    if n < cfg.k {
        return Err(PgpError::Config(format!(
            "k-means needs at least k = {} points, got {n}",
            cfg.k
        )));
    }
    let dim = points.ncols();

    let mut centroids = seed_plus_plus(&data, cfg.k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut wcss = assign(&data, &centroids, &mut assignment, &mut dist);
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < cfg.max_iters && wcss > 0.0 {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (row, &c) in data.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..cfg.k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed from the point worst served by its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                    .expect("n >= k >= 1");
                centroids[c] = data[far].clone();
                dist[far] = 0.0;
            }
        }
        let next = assign(&data, &centroids, &mut assignment, &mut dist);
        debug_assert!(
            next <= wcss * (1.0 + 1e-12) + 1e-12,
            "WCSS increased from {wcss} to {next}"
        );
        history.push(next);
        let improvement = (wcss - next) / wcss;
        wcss = next;
        if improvement < cfg.rel_tol {
            break;
        }
    }

    Ok(KMeansResult {
        centroids: Mat::from_fn(cfg.k, dim, |i, j| centroids[i][j]),
        wcss,
        iterations,
        history,
    })
}

fn seed_plus_plus(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(data[rng.random_range(0..n)].clone());
    let mut nearest: Vec<f64> = data.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // Every point already coincides with a centroid.
            rng.random_range(0..n)
        };
        let c = data[pick].clone();
        for (slot, p) in nearest.iter_mut().zip(data) {
            *slot = slot.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(data: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &mut [usize], dist: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (i, p) in data.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_c = 0;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best {
                best = d;
                best_c = c;
            }
        }
        assignment[i] = best_c;
        dist[i] = best;
        total += best;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Mat<f64>, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let vals: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 0.1 } else { 0.9 } + noise.sample(&mut rng))
            .collect();
        let mean = |parity: usize| {
            let v: Vec<f64> = vals.iter().enumerate().filter(|(i, _)| i % 2 == parity).map(|(_, v)| *v).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        (Mat::from_fn(200, 1, |i, _| vals[i]), mean(0), mean(1))
    }

    #[test]
    fn k_equal_n_returns_the_points() {
        let pts = Mat::from_fn(5, 2, |i, j| (i * 3 + j) as f64 * 0.1);
        let res = kmeans_detailed(pts.as_ref(), &KMeansConfig::new(5, 1)).unwrap();
        assert_eq!(res.wcss, 0.0);
        let mut got: Vec<(u64, u64)> = (0..5)
            .map(|i| (res.centroids[(i, 0)].to_bits(), res.centroids[(i, 1)].to_bits()))
            .collect();
        let mut want: Vec<(u64, u64)> = (0..5).map(|i| (pts[(i, 0)].to_bits(), pts[(i, 1)].to_bits())).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn separated_blobs_recover_blob_means() {
        let (pts, low, high) = blobs(3);
        let c = kmeans(pts.as_ref(), &KMeansConfig::new(2, 7)).unwrap();
        let (a, b) = (c[(0, 0)].min(c[(1, 0)]), c[(0, 0)].max(c[(1, 0)]));
        assert!((a - low).abs() < 0.02);
        assert!((b - high).abs() < 0.02);
    }

    #[test]
    fn too_few_points_is_a_config_error() {
        let pts = Mat::<f64>::zeros(3, 1);
        assert!(matches!(kmeans(pts.as_ref(), &KMeansConfig::new(4, 0)), Err(PgpError::Config(_))));
    }

    #[test]
    fn deterministic_monotone_and_inside_bounding_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = Mat::from_fn(500, 3, |_, j| rng.random_range(0.0..1.0) * (j + 1) as f64);
        let cfg = KMeansConfig::new(12, 42);
        let a = kmeans_detailed(pts.as_ref(), &cfg).unwrap();
        let b = kmeans_detailed(pts.as_ref(), &cfg).unwrap();
        assert_eq!(a.centroids, b.centroids);
        for w in a.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for j in 0..3 {
            let lo = (0..500).map(|i| pts[(i, j)]).fold(f64::INFINITY, f64::min);
            let hi = (0..500).map(|i| pts[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..12 {
                assert!(a.centroids[(i, j)] >= lo && a.centroids[(i, j)] <= hi);
            }
        }
    }

    #[test]
    fn subsampling_respects_cap() {
        let pts = Mat::from_fn(1000, 1, |i, _| i as f64 / 1000.0);
        let cfg = KMeansConfig {
            sample_cap: 50,
            ..KMeansConfig::new(50, 1)
        };
        let res = kmeans_detailed(pts.as_ref(), &cfg).unwrap();
        assert_eq!(res.wcss, 0.0);
    }

    #[test]
    fn duplicate_heavy_data_reseeds_empty_clusters() {
        let pts = Mat::from_fn(20, 1, |i, _| if i < 18 { 0.5 } else { i as f64 });
        let res = kmeans_detailed(pts.as_ref(), &KMeansConfig::new(3, 5)).unwrap();
        assert!(res.centroids.nrows() == 3);
        assert!(res.wcss.is_finite());
    }
}
