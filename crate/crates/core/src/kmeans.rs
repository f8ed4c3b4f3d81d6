//! Lloyd's k-means with k-means++ seeding.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

#[inline]
pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances of each point to the mean of its group.
pub fn within_cluster_ss(points: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let centroids = means(points, assignments, k);
    points
        .iter()
        .zip(assignments)
        .filter_map(|(p, &a)| centroids[a].as_ref().map(|c| squared_l2(p, c)))
        .sum()
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Option<Vec<f64>>> {
    let d = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
        .collect()
}

fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_l2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_l2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every point coincides with a chosen centroid
            Err(_) => rng.random_range(0..n),
        };
        centroids.push(points[next].clone());
        let c = centroids.last().expect("just pushed");
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_l2(p, c));
        }
    }
    centroids
}

/// Clusters `points` into `k` groups. Requires `k <= points.len()`. Stops at an
/// assignment fixpoint or after `max_iter` Lloyd iterations; an emptied
/// cluster is re-seeded with the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "kmeans needs 1 <= k <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = Vec::with_capacity(points.len());
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let (best, d) = nearest_centroid(p, &centroids);
            if *a != best {
                *a = best;
                changed = true;
            }
            inertia += d;
            dists.push(d);
        }
        trace.push(inertia);
        if !changed {
            converged = true;
            break;
        }

        let new_means = means(points, &assignments, k);
        for (c, m) in new_means.into_iter().enumerate() {
            match m {
                Some(m) => centroids[c] = m,
                None => {
                    let (far, _) = dists
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
                    centroids[c] = points[far].clone();
                    dists[far] = 0.0;
                }
            }
        }
    }

    KMeansResult {
        centroids,
        assignments,
        inertia_trace: trace,
        converged,
    }
}
