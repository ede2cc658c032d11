use derivpq::clustering::{kmeans, kmeans_same_size};
use derivpq::distance::l2_sq;
use derivpq::synth::{gaussian, Mixture};
use derivpq::{Dataset, Error};
use proptest::prelude::*;

fn distortion(points: &Dataset, assignment: &[u32], k: usize) -> f64 {
    let dim = points.dim();
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (x, &a) in points.rows().zip(assignment) {
        counts[a as usize] += 1;
        for d in 0..dim {
            sums[a as usize * dim + d] += x[d] as f64;
        }
    }
    points
        .rows()
        .zip(assignment)
        .map(|(x, &a)| {
            (0..dim)
                .map(|d| {
                    let m = sums[a as usize * dim + d] / counts[a as usize] as f64;
                    (x[d] as f64 - m).powi(2)
                })
                .sum::<f64>()
        })
        .sum()
}

/// Optimum over all balanced 2-way splits, by enumeration.
fn best_balanced_split(points: &Dataset) -> f64 {
    let n = points.count();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n / 2 || mask & 1 == 0 {
            continue;
        }
        let a: Vec<u32> = (0..n).map(|i| (mask >> i) & 1).collect();
        best = best.min(distortion(points, &a, 2));
    }
    best
}

#[test]
fn same_size_matches_brute_force_on_small_sets() {
    for seed in 0..200u64 {
        for (n, dim) in [(4usize, 1usize), (4, 2), (4, 3)] {
            let pts = gaussian(n, dim, 3.0, seed * 31 + dim as u64);
            let c = kmeans_same_size(&pts, 2, seed, 50).unwrap();
            let best = best_balanced_split(&pts);
            assert!(c.partition().iter().all(|g| g.len() == n / 2));
            assert!(
                c.distortion <= best + 1e-6 * (1.0 + best),
                "dim={dim} seed={seed}: {} vs optimum {best}",
                c.distortion
            );
        }
    }
}

#[test]
fn plain_kmeans_reports_true_distortion() {
    let pts = Mixture::new(5, 6, 3.0, 1).sample(600, 2);
    let c = kmeans(&pts, 6, 3, 50).unwrap();
    let oracle = distortion(&pts, &c.assignment, 6);
    assert!((c.distortion - oracle).abs() <= 1e-3 * oracle);
    // Every point sits at its nearest centroid.
    for (x, &a) in pts.rows().zip(&c.assignment) {
        let own = l2_sq(x, c.codebook.centroid(a as usize));
        assert!(c.codebook.iter().all(|cent| l2_sq(x, cent) >= own));
    }
}

#[test]
fn invalid_requests() {
    let pts = gaussian(5, 2, 1.0, 0);
    assert!(matches!(kmeans(&pts, 6, 0, 10), Err(Error::Domain(_))));
    assert!(matches!(kmeans(&pts, 0, 0, 10), Err(Error::Domain(_))));
    assert!(matches!(
        kmeans(&Dataset::empty(), 1, 0, 10),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        kmeans_same_size(&pts, 2, 0, 10),
        Err(Error::Domain(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lloyd_history_never_increases(seed in any::<u64>(), k in 1usize..12) {
        let pts = gaussian(200, 3, 2.0, seed);
        let c = kmeans(&pts, k, seed, 30).unwrap();
        for w in c.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-9);
        }
        prop_assert_eq!(c.codebook.k(), k);
    }

    #[test]
    fn clustering_is_deterministic(seed in any::<u64>()) {
        let pts = gaussian(120, 4, 1.0, seed);
        prop_assert_eq!(kmeans(&pts, 5, seed, 20).unwrap(), kmeans(&pts, 5, seed, 20).unwrap());
        prop_assert_eq!(
            kmeans_same_size(&pts, 6, seed, 20).unwrap(),
            kmeans_same_size(&pts, 6, seed, 20).unwrap()
        );
    }

    #[test]
    fn same_size_clusters_are_balanced(seed in any::<u64>(), k in 1usize..9, per in 1usize..12) {
        let pts = gaussian(k * per, 3, 2.0, seed);
        let c = kmeans_same_size(&pts, k, seed, 20).unwrap();
        let part = c.partition();
        prop_assert!(part.iter().all(|g| g.len() == per));
        let mut all: Vec<u32> = part.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..(k * per) as u32).collect::<Vec<_>>());
    }
}
