use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::MdmError;
use crate::rng::{self, tags};
use crate::tensor::Tensor;

pub const MAX_LLOYD_ITERATIONS: usize = 100;

/// Result of k-means on one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    /// `k × dim` centroids in the clustered space.
    pub centroids: Tensor,
    /// Inertia after each assignment step, starting from the seeding.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }

    pub fn sizes(&self, k: usize) -> Vec<usize> {
        let mut s = vec![0; k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding: the first centre uniformly, each next one with
/// probability proportional to squared distance from the closest chosen.
fn seed_centroids<R: Rng>(points: &Tensor, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut centroids = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until the assignment is
/// a fixed point or [`MAX_LLOYD_ITERATIONS`] is reached. A cluster left
/// empty takes over the point farthest from its current centre.
pub fn kmeanspp(points: &Tensor, k: usize, seed: u64) -> Result<Clustering, MdmError> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(MdmError::BadClusterCount { k, points: n });
    }
    let dim = points.cols();
    let mut rng = rng::stream(seed, tags::KMEANS);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (a, d) = nearest(points.row(i), &centroids);
            if assignments[i] != a {
                assignments[i] = a;
                changed = true;
            }
            dists[i] = d;
        }
        // Re-seed empty clusters from the point farthest from its centre.
        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[assignments[i]] > 1)
                .max_by(|&i, &j| dists[i].total_cmp(&dists[j]))
                .expect("k <= n leaves a donor cluster with two points");
            sizes[assignments[far]] -= 1;
            sizes[c] = 1;
            assignments[far] = c;
            centroids[c] = points.row(far).to_vec();
            dists[far] = 0.0;
            changed = true;
        }
        history.push(dists.iter().sum());
        if !changed || iterations >= MAX_LLOYD_ITERATIONS {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        for i in 0..n {
            for (s, x) in sums[assignments[i]].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            for s in &mut sums[c] {
                *s /= sizes[c] as f64;
            }
        }
        centroids = sums;
    }

    let flat = centroids.into_iter().flatten().collect();
    Ok(Clustering {
        assignments,
        centroids: Tensor::from_vec(k, dim, flat).expect("sized buffer"),
        inertia_history: history,
        iterations,
    })
}
