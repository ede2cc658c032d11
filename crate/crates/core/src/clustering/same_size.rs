//! k-means with a hard equal-size constraint.
//!
//! Seeding is k-means++. Points are then assigned greedily, strongest
//! preference first (nearest minus second-nearest distance), each to its
//! closest cluster that still has room. Refinement alternates between
//! pairwise swaps that lower the distortion under fixed centroids and
//! recomputing the centroids as cluster means.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_input, kmeans_pp, update_means, Clustering};
use crate::distance::{l2_sq, l2_sq_f64};
use crate::error::{Error, Result};
use crate::par;
use crate::quantizer::Codebook;
use crate::vecio::Dataset;

pub fn kmeans_same_size(
    points: &Dataset,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Clustering> {
    check_input(points, k)?;
    let n = points.count();
    if !n.is_multiple_of(k) {
        return Err(Error::domain(format!(
            "{n} points cannot be split into {k} clusters of equal size"
        )));
    }
    let capacity = n / k;
    let dim = points.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);

    let dist = distance_matrix(points, &centroids, k);
    let mut assignment = initial_assignment(&dist, n, k, capacity);
    update_means(points, assignment.iter().copied(), &mut centroids);

    let mut history = vec![total_distortion(points, &centroids, &assignment)];
    for _ in 0..max_iters {
        let dist = distance_matrix(points, &centroids, k);
        let mut swaps = improve_by_swaps(&dist, &mut assignment, k);
        if swaps == 0 {
            swaps = polish_exact(points, &centroids, &mut assignment, k, capacity);
        }
        if swaps == 0 {
            break;
        }
        update_means(points, assignment.iter().copied(), &mut centroids);
        history.push(total_distortion(points, &centroids, &assignment));
    }

    let distortion = *history.last().unwrap();
    Ok(Clustering {
        codebook: Codebook::new(dim, centroids)?,
        assignment,
        distortion,
        history,
    })
}

fn distance_matrix(points: &Dataset, centroids: &[f32], k: usize) -> Vec<Vec<f32>> {
    let dim = points.dim();
    par::map_range(points.count(), |i| {
        let x = points.row(i);
        (0..k)
            .map(|c| l2_sq(x, &centroids[c * dim..(c + 1) * dim]))
            .collect()
    })
}

fn total_distortion(points: &Dataset, centroids: &[f32], assignment: &[u32]) -> f64 {
    let dim = points.dim();
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let c = c as usize;
            l2_sq_f64(points.row(i), &centroids[c * dim..(c + 1) * dim])
        })
        .sum()
}

fn initial_assignment(dist: &[Vec<f32>], n: usize, k: usize, capacity: usize) -> Vec<u32> {
    let preference = |i: usize| -> f32 {
        let (mut a, mut b) = (f32::INFINITY, f32::INFINITY);
        for &d in &dist[i] {
            if d < a {
                b = a;
                a = d;
            } else if d < b {
                b = d;
            }
        }
        if b.is_finite() {
            a - b
        } else {
            0.0
        }
    };
    let mut order: Vec<(f32, usize)> = (0..n).map(|i| (preference(i), i)).collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let mut sizes = vec![0usize; k];
    let mut assignment = vec![0u32; n];
    let mut ranked: Vec<usize> = Vec::with_capacity(k);
    for (_, i) in order {
        ranked.clear();
        ranked.extend(0..k);
        ranked.sort_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)));
        let c = *ranked
            .iter()
            .find(|&&c| sizes[c] < capacity)
            .expect("total capacity equals point count");
        sizes[c] += 1;
        assignment[i] = c as u32;
    }
    assignment
}

/// One pass of pairwise exchanges. Each point moves at most once per
/// pass. Returns the number of swaps performed.
fn improve_by_swaps(dist: &[Vec<f32>], assignment: &mut [u32], k: usize) -> usize {
    let n = assignment.len();
    let mut members = vec![Vec::new(); k];
    let mut pairs = BTreeSet::new();
    for p in 0..n {
        let a = assignment[p] as usize;
        members[a].push(p);
        for b in 0..k {
            if b != a && dist[p][b] < dist[p][a] {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }

    let gain = |p: usize, from: usize, to: usize| dist[p][from] - dist[p][to];
    let mut locked = vec![false; n];
    let mut swaps = 0;
    for (a, b) in pairs {
        let ranked = |from: usize, to: usize, locked: &[bool]| {
            let mut v: Vec<(f32, usize)> = members[from]
                .iter()
                .filter(|&&p| !locked[p])
                .map(|&p| (gain(p, from, to), p))
                .collect();
            v.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            v
        };
        let to_b = ranked(a, b, &locked);
        let to_a = ranked(b, a, &locked);
        for (&(ga, p), &(gb, q)) in to_b.iter().zip(&to_a) {
            let scale = dist[p][a] + dist[q][b];
            if ga + gb <= 1e-7 * scale || ga + gb <= 0.0 {
                break;
            }
            assignment[p] = b as u32;
            assignment[q] = a as u32;
            locked[p] = true;
            locked[q] = true;
            swaps += 1;
        }
    }
    swaps
}

/// Each cluster looks for exact improving swaps with this many of its
/// nearest clusters.
const POLISH_NEIGHBORS: usize = 4;

/// Exact swap pass, run once the cheap pass stalls. Swapping `x` out of
/// cluster A and `z` out of B (both of size `c`) lowers the distortion by
/// `2 (x - z)·(mean_B - mean_A) + 2 |x - z|^2 / c`, which is the
/// fixed-means gain plus a positive term, so it finds swaps the cheap pass
/// misses. Each cluster takes part in at most one swap per pass, keeping
/// every applied improvement exact.
fn polish_exact(
    points: &Dataset,
    centroids: &[f32],
    assignment: &mut [u32],
    k: usize,
    capacity: usize,
) -> usize {
    let dim = points.dim();
    let mean = |c: usize| &centroids[c * dim..(c + 1) * dim];
    let mut members = vec![Vec::new(); k];
    for (p, &a) in assignment.iter().enumerate() {
        members[a as usize].push(p);
    }

    let mut pairs: Vec<(f32, usize, usize)> = Vec::new();
    for a in 0..k {
        let mut near: Vec<(f32, usize)> = (0..k)
            .filter(|&b| b != a)
            .map(|b| (l2_sq(mean(a), mean(b)), b))
            .collect();
        near.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for &(d, b) in near.iter().take(POLISH_NEIGHBORS) {
            pairs.push((d, a.min(b), a.max(b)));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    pairs.dedup_by(|x, y| (x.1, x.2) == (y.1, y.2));

    let c = capacity as f64;
    let mut busy = vec![false; k];
    let mut swaps = 0;
    for (_, a, b) in pairs {
        if busy[a] || busy[b] {
            continue;
        }
        let shift: Vec<f64> = mean(b)
            .iter()
            .zip(mean(a))
            .map(|(mb, ma)| f64::from(*mb) - f64::from(*ma))
            .collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for &p in &members[a] {
            let x = points.row(p);
            for &q in &members[b] {
                let z = points.row(q);
                let (mut along, mut sq) = (0.0f64, 0.0f64);
                for d in 0..dim {
                    let u = f64::from(x[d]) - f64::from(z[d]);
                    along += u * shift[d];
                    sq += u * u;
                }
                let gain = 2.0 * along + 2.0 * sq / c;
                let floor = 1e-9 * (sq + shift.iter().map(|v| v * v).sum::<f64>());
                if gain > floor && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, p, q));
                }
            }
        }
        if let Some((_, p, q)) = best {
            assignment[p] = b as u32;
            assignment[q] = a as u32;
            busy[a] = true;
            busy[b] = true;
            swaps += 1;
        }
    }
    swaps
}
