//! Ground truth, Recall@R, r2 calibration and phase-timed benchmarks.

use std::io::Write;
use std::time::Duration;

use log::warn;
use serde::Serialize;
use web_time::Instant;

use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::par;
use crate::search::{AnnBackend, Neighbor, PhaseTimes, QueryParams, ResultSet, SearchMode};
use crate::vecio::{Dataset, GroundTruth};

/// Calibration looks at this many leading queries.
pub const CALIBRATION_QUERIES: usize = 1000;
/// Calibrated derived recall must reach this fraction of the full search.
pub const CALIBRATION_RATIO: f64 = 0.99;
/// Queries run untimed before a benchmark.
pub const WARMUP_QUERIES: usize = 10;

/// Exact `depth` nearest database ids of every query, ties by id.
pub fn exact_nn(base: &Dataset, queries: &Dataset, depth: usize) -> Result<GroundTruth> {
    if queries.is_empty() {
        return GroundTruth::new(depth, Vec::new());
    }
    if base.dim() != queries.dim() {
        return Err(Error::domain(format!(
            "queries of dimension {} against a database of dimension {}",
            queries.dim(),
            base.dim()
        )));
    }
    if depth == 0 || depth > base.count() {
        return Err(Error::domain(format!(
            "depth {depth} outside 1..={}",
            base.count()
        )));
    }
    let rows = par::map_range(queries.count(), |q| {
        let y = queries.row(q);
        let mut heap = ResultSet::new(depth);
        for (i, x) in base.rows().enumerate() {
            heap.add(i as u32, l2_sq(y, x));
        }
        heap.into_sorted()
            .into_iter()
            .map(|n| n.id)
            .collect::<Vec<u32>>()
    });
    GroundTruth::new(depth, rows.concat())
}

/// Fraction of queries whose true nearest neighbor is among the first `r`
/// returned ids.
pub fn recall_at_r<I: AsRef<[u32]>>(results: &[I], truth: &GroundTruth, r: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .enumerate()
        .filter(|(q, ids)| {
            let nn = truth.row(*q)[0];
            ids.as_ref().iter().take(r).any(|&id| id == nn)
        })
        .count();
    hits as f64 / results.len() as f64
}

fn run_queries<B: AnnBackend + ?Sized>(
    backend: &B,
    queries: &Dataset,
    params: &QueryParams,
) -> Result<Vec<Vec<u32>>> {
    par::map_range(queries.count(), |q| {
        backend.search(queries.row(q), params).map(|out| out.ids())
    })
    .into_iter()
    .collect()
}

/// Outcome of an r2 calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub r2: usize,
    pub recall: f64,
    pub reference_recall: f64,
    /// False when no grid value reached the target and the largest was kept.
    pub qualified: bool,
}

/// Smallest `r2` of `grid` whose derived-search recall is at least
/// [`CALIBRATION_RATIO`] times the full-quantizer recall, measured on the
/// first [`CALIBRATION_QUERIES`] queries.
pub fn calibrate_r2<B: AnnBackend + ?Sized>(
    backend: &B,
    queries: &Dataset,
    truth: &GroundTruth,
    r: usize,
    ma: usize,
    grid: &[usize],
) -> Result<Calibration> {
    if grid.is_empty() {
        return Err(Error::domain("empty r2 grid"));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("r2 grid must be ascending"));
    }
    if let Some(&bad) = grid.iter().find(|&&g| g < r) {
        return Err(Error::domain(format!("r2 = {bad} is below r = {r}")));
    }
    if truth.queries() < queries.count() {
        return Err(Error::domain(
            "ground truth covers fewer queries than given",
        ));
    }
    let subset = queries.head(CALIBRATION_QUERIES);
    let reference = run_queries(backend, &subset, &QueryParams::conventional(r).with_ma(ma))?;
    let reference_recall = recall_at_r(&reference, truth, r);
    let target = CALIBRATION_RATIO * reference_recall;
    let mut last = None;
    for &r2 in grid {
        let found = run_queries(backend, &subset, &QueryParams::derived(r, r2).with_ma(ma))?;
        let recall = recall_at_r(&found, truth, r);
        if recall >= target {
            return Ok(Calibration {
                r2,
                recall,
                reference_recall,
                qualified: true,
            });
        }
        last = Some((r2, recall));
    }
    let (r2, recall) = last.expect("grid is not empty");
    warn!(
        "no r2 in the grid reaches {:.4} recall (best {recall:.4}); using r2 = {r2}",
        target
    );
    Ok(Calibration {
        r2,
        recall,
        reference_recall,
        qualified: false,
    })
}

/// Benchmark inputs besides the backend and the data.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Label such as `8x8`, `4x16` or `4x8,16`.
    pub method: String,
    pub params: QueryParams,
    /// Recall is reported at each of these depths; the search returns the
    /// largest.
    pub recall_at: Vec<usize>,
    /// Run queries concurrently. Timings then measure throughput only.
    pub parallel: bool,
    pub dataset: String,
    pub seed: u64,
}

/// One CSV row of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub m: usize,
    pub b: u32,
    pub bbar: u32,
    #[serde(rename = "K")]
    pub cells: usize,
    pub ma: usize,
    pub r: usize,
    pub r2: usize,
    pub recall: f64,
    pub index_us: f64,
    pub tables_us: f64,
    pub scan_us: f64,
    pub refine_us: f64,
    pub total_us: f64,
}

/// Wall time of one query, split into phases.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QueryTiming {
    pub phases: PhaseTimes,
    pub total: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimingSummary {
    pub index_us: f64,
    pub tables_us: f64,
    pub scan_us: f64,
    pub refine_us: f64,
    pub total_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub per_query: Vec<QueryTiming>,
    pub mean: TimingSummary,
    pub median: TimingSummary,
    pub mean_lazy_fill: f64,
    pub throughput_only: bool,
}

impl BenchReport {
    /// Write the rows as CSV with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows_csv(&self.rows, out)
    }
}

/// Write rows from any number of reports under one header.
pub fn write_rows_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Invariant(format!("csv: {other:?}")),
    }
}

fn us(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

fn summarize(times: &[QueryTiming], pick: impl Fn(&[f64]) -> f64) -> TimingSummary {
    let col = |f: &dyn Fn(&QueryTiming) -> Duration| {
        let v: Vec<f64> = times.iter().map(|t| us(f(t))).collect();
        pick(&v)
    };
    TimingSummary {
        index_us: col(&|t| t.phases.index),
        tables_us: col(&|t| t.phases.tables),
        scan_us: col(&|t| t.phases.scan),
        refine_us: col(&|t| t.phases.refine),
        total_us: col(&|t| t.total),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Run every query once, timing each phase, and report recall at each
/// requested depth.
pub fn run_bench<B: AnnBackend + ?Sized>(
    backend: &B,
    queries: &Dataset,
    truth: &GroundTruth,
    config: &BenchConfig,
) -> Result<BenchReport> {
    let depth = *config
        .recall_at
        .iter()
        .max()
        .ok_or_else(|| Error::domain("no recall depth requested"))?;
    let mut params = config.params;
    params.r = depth;
    params.validate()?;
    if params.ma > backend.cells() {
        return Err(Error::domain(format!(
            "ma = {} exceeds the {} cells of the index",
            params.ma,
            backend.cells()
        )));
    }
    if !queries.is_empty() && queries.dim() != backend.quantizer().dim() {
        return Err(Error::domain("query dimension differs from the index"));
    }
    if truth.queries() < queries.count() {
        return Err(Error::domain(
            "ground truth covers fewer queries than given",
        ));
    }

    for q in 0..queries.count().min(WARMUP_QUERIES) {
        backend.search(queries.row(q), &params)?;
    }

    let run_one = |q: usize| -> Result<(Vec<Neighbor>, QueryTiming, f64)> {
        let t = Instant::now();
        let out = backend.search(queries.row(q), &params)?;
        let total = t.elapsed();
        let fill = if out.stats.full_table_size > 0 {
            out.stats.lazy_entries as f64 / out.stats.full_table_size as f64
        } else {
            0.0
        };
        Ok((
            out.neighbors,
            QueryTiming {
                phases: out.phases,
                total,
            },
            fill,
        ))
    };
    let outcomes: Vec<_> = if config.parallel {
        par::map_range(queries.count(), run_one)
    } else {
        (0..queries.count()).map(run_one).collect()
    };
    let mut ids = Vec::with_capacity(queries.count());
    let mut per_query = Vec::with_capacity(queries.count());
    let mut fills = Vec::with_capacity(queries.count());
    for o in outcomes {
        let (neighbors, timing, fill) = o?;
        ids.push(neighbors.iter().map(|n| n.id).collect::<Vec<u32>>());
        per_query.push(timing);
        fills.push(fill);
    }

    let mean_t = summarize(&per_query, mean);
    let median_t = summarize(&per_query, median);
    let pq = backend.quantizer();
    let mut depths = config.recall_at.clone();
    depths.sort_unstable();
    depths.dedup();
    let rows = depths
        .into_iter()
        .map(|r| BenchRow {
            method: config.method.clone(),
            m: pq.m(),
            b: pq.bits(),
            bbar: match params.mode {
                SearchMode::Derived => pq.derived_bits(),
                SearchMode::Conventional => pq.bits(),
            },
            cells: backend.cells(),
            ma: params.ma,
            r,
            r2: match params.mode {
                SearchMode::Derived => params.r2,
                SearchMode::Conventional => 0,
            },
            recall: recall_at_r(&ids, truth, r),
            index_us: mean_t.index_us,
            tables_us: mean_t.tables_us,
            scan_us: mean_t.scan_us,
            refine_us: mean_t.refine_us,
            total_us: mean_t.total_us,
        })
        .collect();
    Ok(BenchReport {
        config: config.clone(),
        rows,
        per_query,
        mean: mean_t,
        median: median_t,
        mean_lazy_fill: mean(&fills),
        throughput_only: config.parallel,
    })
}
