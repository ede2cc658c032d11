//! k-means clustering and the same-size variant.
//!
//! Both are seeded with k-means++ from an explicit seed and are
//! deterministic for a given `(points, k, seed, max_iters)`, with or
//! without the `parallel` feature.

mod same_size;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distance::{self, l2_sq_f64};
use crate::error::{Error, Result};
use crate::par;
use crate::quantizer::Codebook;
use crate::vecio::Dataset;

pub use same_size::kmeans_same_size;

/// Default iteration cap for Lloyd's algorithm.
pub const DEFAULT_MAX_ITERS: usize = 50;

/// Training stops once an iteration improves distortion by less than
/// this fraction.
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

/// Result of a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub codebook: Codebook,
    /// Cluster id of every input point.
    pub assignment: Vec<u32>,
    /// Sum of squared distances of points to their assigned centroid.
    pub distortion: f64,
    /// Distortion measured after every assignment step.
    pub history: Vec<f64>,
}

impl Clustering {
    /// Point indexes of each cluster, ascending within a cluster.
    pub fn partition(&self) -> Vec<Vec<u32>> {
        let mut groups = vec![Vec::new(); self.codebook.k()];
        for (i, &c) in self.assignment.iter().enumerate() {
            groups[c as usize].push(i as u32);
        }
        groups
    }
}

fn check_input(points: &Dataset, k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::domain("cannot cluster an empty dataset"));
    }
    if k == 0 {
        return Err(Error::domain("k must be positive"));
    }
    if points.count() < k {
        return Err(Error::domain(format!(
            "{} points cannot form {k} clusters",
            points.count()
        )));
    }
    Ok(())
}

/// k-means++ seeding: first center uniform, then proportional to the
/// squared distance to the closest chosen center.
pub(crate) fn kmeans_pp(points: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.count();
    let dim = points.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(points.row(first));
    let mut closest: Vec<f64> = par::map_range(n, |i| l2_sq_f64(points.row(i), points.row(first)));
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Fewer distinct points than clusters.
            rng.random_range(0..n)
        };
        let center = points.row(pick).to_vec();
        closest = par::map_range(n, |i| closest[i].min(l2_sq_f64(points.row(i), &center)));
        centroids.extend_from_slice(&center);
    }
    centroids
}

/// Nearest centroid of every point, with its `f64` squared distance.
pub(crate) fn assign(points: &Dataset, centroids: &[f32]) -> Vec<(u32, f64)> {
    let dim = points.dim();
    par::map_range(points.count(), |i| {
        let x = points.row(i);
        let (c, _) = distance::nearest(centroids, dim, x);
        (c as u32, l2_sq_f64(x, &centroids[c * dim..(c + 1) * dim]))
    })
}

/// Per-cluster means of the assigned points. Clusters without points
/// keep their previous centroid and are reported in the second value.
pub(crate) fn update_means(
    points: &Dataset,
    assignment: impl Iterator<Item = u32>,
    centroids: &mut [f32],
) -> Vec<usize> {
    let dim = points.dim();
    let k = centroids.len() / dim;
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (i, c) in assignment.enumerate() {
        let c = c as usize;
        counts[c] += 1;
        for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += f64::from(v);
        }
    }
    let mut empty = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            empty.push(c);
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (dst, s) in centroids[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&sums[c * dim..(c + 1) * dim])
        {
            *dst = (s * inv) as f32;
        }
    }
    empty
}

/// Lloyd's k-means with k-means++ seeding.
///
/// Empty clusters are re-seeded on the point farthest from its centroid.
pub fn kmeans(points: &Dataset, k: usize, seed: u64, max_iters: usize) -> Result<Clustering> {
    check_input(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = kmeans_pp(points, k, &mut rng);
    lloyd(points, centroids, max_iters)
}

/// Lloyd iterations from given initial centroids.
pub fn kmeans_from(points: &Dataset, init: &Codebook, max_iters: usize) -> Result<Clustering> {
    check_input(points, init.k())?;
    if init.dsub() != points.dim() {
        return Err(Error::domain("initial centroids have the wrong dimension"));
    }
    lloyd(points, init.as_slice().to_vec(), max_iters)
}

fn lloyd(points: &Dataset, mut centroids: Vec<f32>, max_iters: usize) -> Result<Clustering> {
    let dim = points.dim();
    let mut history = Vec::new();
    for _ in 0..max_iters {
        let assigned = assign(points, &centroids);
        let distortion: f64 = assigned.iter().map(|a| a.1).sum();
        let empty = update_means(points, assigned.iter().map(|a| a.0), &mut centroids);
        if !empty.is_empty() {
            reseed_empty(points, &assigned, &mut centroids, &empty);
        }
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| prev - distortion <= RELATIVE_TOLERANCE * prev);
        history.push(distortion);
        if converged && empty.is_empty() {
            break;
        }
    }
    let assigned = assign(points, &centroids);
    let distortion: f64 = assigned.iter().map(|a| a.1).sum();
    history.push(distortion);
    Ok(Clustering {
        codebook: Codebook::new(dim, centroids)?,
        assignment: assigned.into_iter().map(|a| a.0).collect(),
        distortion,
        history,
    })
}

fn reseed_empty(points: &Dataset, assigned: &[(u32, f64)], centroids: &mut [f32], empty: &[usize]) {
    let dim = points.dim();
    let mut far: Vec<(f64, usize)> = assigned
        .iter()
        .enumerate()
        .map(|(i, &(c, _))| {
            let c = c as usize;
            (
                l2_sq_f64(points.row(i), &centroids[c * dim..(c + 1) * dim]),
                i,
            )
        })
        .collect();
    far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (&c, &(_, p)) in empty.iter().zip(&far) {
        centroids[c * dim..(c + 1) * dim].copy_from_slice(points.row(p));
    }
}

/// Total squared distance of points to the given centroids under a fixed
/// assignment.
pub fn distortion_of(points: &Dataset, codebook: &Codebook, assignment: &[u32]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| l2_sq_f64(points.row(i), codebook.centroid(c as usize)))
        .sum()
}
