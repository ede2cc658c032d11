use derivpq::distance::l2_sq;
use derivpq::eval::{calibrate_r2, exact_nn, recall_at_r, run_bench, write_rows_csv, BenchConfig};
use derivpq::synth::{gaussian, Mixture};
use derivpq::{Dataset, Error, FlatIndex, GroundTruth, PqParams, ProductQuantizer, QueryParams};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent quadratic-loop ground truth.
fn oracle(base: &Dataset, queries: &Dataset, depth: usize) -> Vec<Vec<u32>> {
    queries
        .rows()
        .map(|y| {
            let mut all: Vec<(f32, u32)> = base
                .rows()
                .enumerate()
                .map(|(i, x)| {
                    let mut d = 0.0f32;
                    for k in 0..x.len() {
                        d += (y[k] - x[k]) * (y[k] - x[k]);
                    }
                    (d, i as u32)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.into_iter().take(depth).map(|p| p.1).collect()
        })
        .collect()
}

#[test]
fn exact_nn_matches_quadratic_oracle() {
    let base = gaussian(1000, 8, 1.0, 1);
    let queries = gaussian(1000, 8, 1.0, 2);
    let gt = exact_nn(&base, &queries, 5).unwrap();
    let want = oracle(&base, &queries, 5);
    for (q, row) in want.iter().enumerate() {
        assert_eq!(gt.row(q), &row[..]);
    }
}

#[test]
fn exact_nn_small_cases() {
    let base = gaussian(50, 3, 1.0, 3);
    let gt = exact_nn(&base, &base.head(10), 1).unwrap();
    for q in 0..10 {
        assert_eq!(gt.row(q), &[q as u32]);
    }
    let one = gaussian(1, 3, 1.0, 4);
    let gt = exact_nn(&one, &base, 1).unwrap();
    assert!((0..50).all(|q| gt.row(q) == [0]));
    assert!(matches!(
        exact_nn(&base, &gaussian(2, 4, 1.0, 0), 1),
        Err(Error::Domain(_))
    ));
}

#[test]
fn recall_examples() {
    let truth = GroundTruth::new(1, (0..100).collect()).unwrap();
    let exact: Vec<Vec<u32>> = (0..100).map(|q| vec![q]).collect();
    assert_eq!(recall_at_r(&exact, &truth, 1), 1.0);
    let disjoint: Vec<Vec<u32>> = (0..100).map(|q| vec![q + 1000]).collect();
    assert_eq!(recall_at_r(&disjoint, &truth, 1), 0.0);
    // Every query except multiples of 6 hits, at rank q % 3.
    let mixed: Vec<Vec<u32>> = (0..100u32)
        .map(|q| {
            let hit = q % 6 != 0;
            let mut v = vec![5000, 5001, 5002];
            if hit {
                v[(q % 3) as usize] = q;
            }
            v
        })
        .collect();
    let expected = (0..100u32).filter(|q| q % 6 != 0).count();
    assert_eq!(expected, 83);
    assert!((recall_at_r(&mixed, &truth, 3) - 0.83).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recall_non_decreasing_in_r(results in prop::collection::vec(prop::collection::vec(0u32..20, 0..10), 1..30)) {
        let truth = GroundTruth::new(1, (0..results.len() as u32).map(|q| q % 20).collect()).unwrap();
        let mut prev = 0.0;
        for r in 1..12 {
            let v = recall_at_r(&results, &truth, r);
            prop_assert!(v >= prev);
            prop_assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn exact_nn_is_permutation_equivariant(seed in any::<u64>()) {
        let base = gaussian(60, 3, 1.0, seed);
        let queries = gaussian(5, 3, 1.0, seed ^ 1);
        let mut perm: Vec<usize> = (0..60).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = base.select(&perm);
        let a = exact_nn(&base, &queries, 3).unwrap();
        let b = exact_nn(&shuffled, &queries, 3).unwrap();
        for q in 0..5 {
            // Ties could legitimately reorder; compare distances, then ids.
            let da: Vec<f32> = a.row(q).iter().map(|&i| l2_sq(queries.row(q), base.row(i as usize))).collect();
            let db: Vec<f32> = b.row(q).iter().map(|&i| l2_sq(queries.row(q), shuffled.row(i as usize))).collect();
            prop_assert_eq!(&da, &db);
            let mapped: Vec<u32> = b.row(q).iter().map(|&i| perm[i as usize] as u32).collect();
            prop_assert_eq!(a.row(q), &mapped[..]);
        }
    }
}

fn setup() -> (FlatIndex, Dataset, GroundTruth) {
    let mix = Mixture::new(16, 25, 3.0, 9);
    let base = mix.sample(3000, 1);
    let queries = mix.sample(60, 2);
    let truth = exact_nn(&base, &queries, 10).unwrap();
    let pq = ProductQuantizer::train(&base, &PqParams::new(4, 8, 4).with_max_iters(15)).unwrap();
    (FlatIndex::build(pq, &base).unwrap(), queries, truth)
}

#[test]
fn calibration_rules() {
    let (idx, queries, truth) = setup();
    assert!(matches!(
        calibrate_r2(&idx, &queries, &truth, 10, 1, &[]),
        Err(Error::Domain(_))
    ));
    assert!(calibrate_r2(&idx, &queries, &truth, 10, 1, &[100, 50]).is_err());

    let cal = calibrate_r2(&idx, &queries, &truth, 10, 1, &[10, 50, 200, 1000, 3000]).unwrap();
    assert!(cal.qualified);
    assert!(cal.recall >= 0.99 * cal.reference_recall);
    // Re-running at the chosen r2 reproduces the recall.
    let found: Vec<Vec<u32>> = queries
        .rows()
        .map(|y| idx.search_derived(y, 10, cal.r2, true).unwrap().ids())
        .collect();
    assert_eq!(recall_at_r(&found, &truth, 10), cal.recall);

    // Full-size r2 always qualifies.
    let cal = calibrate_r2(&idx, &queries, &truth, 10, 1, &[3000]).unwrap();
    assert!(cal.qualified);
}

#[test]
fn calibration_with_zero_reference_takes_smallest() {
    let (idx, queries, _) = setup();
    // Truth pointing at ids that are never returned.
    let truth = GroundTruth::new(1, vec![999_999; queries.count()]).unwrap();
    let cal = calibrate_r2(&idx, &queries, &truth, 10, 1, &[10, 20]).unwrap();
    assert_eq!((cal.r2, cal.reference_recall), (10, 0.0));
}

#[test]
fn bench_reports_phases_and_csv() {
    let (idx, queries, truth) = setup();
    let config = |method: &str, params| BenchConfig {
        method: method.into(),
        params,
        recall_at: vec![1, 10],
        parallel: false,
        dataset: "synthetic".into(),
        seed: 42,
    };
    let conv = run_bench(
        &idx,
        &queries,
        &truth,
        &config("4x8", QueryParams::conventional(10)),
    )
    .unwrap();
    assert!(conv.rows.iter().all(|r| r.refine_us == 0.0));
    assert!(conv.rows[0].recall <= conv.rows[1].recall);
    for t in &conv.per_query {
        assert!(t.total >= t.phases.sum());
    }

    let full = run_bench(
        &idx,
        &queries,
        &truth,
        &config("4x4,8", QueryParams::derived(10, 3000).unbounded()),
    )
    .unwrap();
    assert_eq!(full.rows[1].recall, conv.rows[1].recall);
    for t in &full.per_query {
        assert!(t.total >= t.phases.sum());
    }

    let mut out = Vec::new();
    write_rows_csv(&[conv.rows.clone(), full.rows.clone()].concat(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,m,b,bbar,K,ma,r,r2,recall,index_us,tables_us,scan_us,refine_us,total_us"
    );
    assert_eq!(lines.count(), 4);

    let bad = run_bench(
        &idx,
        &queries,
        &truth,
        &config("x", QueryParams::derived(10, 5)),
    );
    assert!(matches!(bad, Err(Error::Domain(_))));
}
