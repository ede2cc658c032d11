//! Browser demo: train derived codebooks on 2-d data, sweep r2 against
//! recall, and inspect the capped buckets of one query.
//!
//! Every export returns a JSON string so the page can stay plain
//! JavaScript. The same functions are callable natively for tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use derivpq::eval::{exact_nn, recall_at_r};
use derivpq::search::{compute_tables, quantize_tables, scan_derived_into, CappedBuckets};
use derivpq::synth::Mixture;
use derivpq::{Dataset, FlatIndex, GroundTruth, PqParams, ProductQuantizer};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[derive(Debug, Serialize)]
pub struct Centroid {
    pub index: u32,
    pub group: u32,
    pub x: f32,
    pub y: f32,
}

#[derive(Debug, Serialize)]
pub struct DerivedLayout {
    pub points: Vec<[f32; 2]>,
    pub full: Vec<Centroid>,
    pub derived: Vec<[f32; 2]>,
}

/// Train a 1-subspace quantizer on a 2-d mixture and report every
/// centroid with its index and group (the low `derived_bits` bits).
pub fn derived_layout(
    seed: u64,
    clusters: usize,
    points: usize,
    bits: u32,
    derived_bits: u32,
) -> derivpq::Result<DerivedLayout> {
    let data = Mixture::new(2, clusters.max(1), 4.0, seed).sample(points, seed ^ 1);
    let pq = ProductQuantizer::train(&data, &PqParams::new(1, bits, derived_bits).with_seed(seed))?;
    let full = pq.full()[0]
        .iter()
        .enumerate()
        .map(|(i, c)| Centroid {
            index: i as u32,
            group: pq.groups(0)[i],
            x: c[0],
            y: c[1],
        })
        .collect();
    let derived = pq.derived()[0].iter().map(|c| [c[0], c[1]]).collect();
    Ok(DerivedLayout {
        points: data.rows().map(|r| [r[0], r[1]]).collect(),
        full,
        derived,
    })
}

#[wasm_bindgen]
pub fn derive_codebooks(
    seed: u32,
    clusters: u32,
    points: u32,
    bits: u32,
    derived_bits: u32,
) -> Result<String, JsValue> {
    derived_layout(
        u64::from(seed),
        clusters as usize,
        points as usize,
        bits,
        derived_bits,
    )
    .map(|v| to_json(&v))
    .map_err(js_err)
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub r2: usize,
    pub recall: f64,
    pub refined: f64,
    pub lazy_fill: f64,
}

#[derive(Debug, Serialize)]
pub struct Sweep {
    pub conventional_recall: f64,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub qmin: f32,
    pub qmax: f32,
    pub bound: u8,
    /// Codes per quantized distance before any discarding (256 entries,
    /// the last one counting saturated codes).
    pub all: Vec<usize>,
    /// Codes kept per bucket by the capped buckets (255 entries).
    pub kept: Vec<usize>,
}

/// A trained flat index over synthetic data, with queries and exact
/// neighbors.
#[wasm_bindgen]
pub struct Demo {
    index: FlatIndex,
    queries: Dataset,
    truth: GroundTruth,
}

impl Demo {
    pub fn build(
        seed: u64,
        count: usize,
        dim: usize,
        m: usize,
        bits: u32,
        derived_bits: u32,
    ) -> derivpq::Result<Demo> {
        let mix = Mixture::new(dim, 32, 3.0, seed);
        let base = mix.sample(count, seed ^ 1);
        let queries = mix.sample(50, seed ^ 2);
        let params = PqParams::new(m, bits, derived_bits)
            .with_seed(seed)
            .with_max_iters(15);
        let pq = ProductQuantizer::train(&base, &params)?;
        let truth = exact_nn(&base, &queries, 1)?;
        Ok(Demo {
            index: FlatIndex::build(pq, &base)?,
            queries,
            truth,
        })
    }

    pub fn sweep_points(&self, r: usize, r2s: &[usize]) -> derivpq::Result<Sweep> {
        let conv: Vec<Vec<u32>> = self
            .queries
            .rows()
            .map(|y| self.index.search_conventional(y, r).map(|o| o.ids()))
            .collect::<derivpq::Result<_>>()?;
        let mut points = Vec::with_capacity(r2s.len());
        for &r2 in r2s {
            let mut ids = Vec::new();
            let (mut refined, mut fill) = (0.0, 0.0);
            for y in self.queries.rows() {
                let out = self.index.search_derived(y, r, r2.max(r), true)?;
                refined += out.stats.refined as f64;
                fill += out.stats.lazy_entries as f64 / out.stats.full_table_size as f64;
                ids.push(out.ids());
            }
            let n = self.queries.count() as f64;
            points.push(SweepPoint {
                r2,
                recall: recall_at_r(&ids, &self.truth, r),
                refined: refined / n,
                lazy_fill: fill / n,
            });
        }
        Ok(Sweep {
            conventional_recall: recall_at_r(&conv, &self.truth, r),
            points,
        })
    }

    pub fn histogram_of(&self, query: usize, r2: usize) -> derivpq::Result<Histogram> {
        let pq = &self.index.pq;
        let codes = &self.index.codes;
        let bits = pq.derived_bits();
        let y = self.queries.row(query % self.queries.count());
        let small = compute_tables(&pq.rotate(y), pq.derived())?;
        let qt = quantize_tables(&small, codes, r2, bits);
        let mut all = vec![0usize; 256];
        let mut open = CappedBuckets::unbounded();
        scan_derived_into(codes, None, &qt, bits, &mut open);
        for (d, _) in open.iter() {
            all[d as usize] += 1;
        }
        all[255] = codes.len() - open.len();
        let mut capped = CappedBuckets::new(r2);
        scan_derived_into(codes, None, &qt, bits, &mut capped);
        Ok(Histogram {
            qmin: qt.qmin(),
            qmax: qt.qmax(),
            bound: capped.bound(),
            all,
            kept: (0..255).map(|d| capped.bucket(d).len()).collect(),
        })
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u32,
        count: u32,
        dim: u32,
        m: u32,
        bits: u32,
        derived_bits: u32,
    ) -> Result<Demo, JsValue> {
        Demo::build(
            u64::from(seed),
            count as usize,
            dim as usize,
            m as usize,
            bits,
            derived_bits,
        )
        .map_err(js_err)
    }

    /// Recall@r of derived search at each r2, next to the conventional
    /// recall.
    pub fn r2_sweep(&self, r: u32, r2s: Vec<u32>) -> Result<String, JsValue> {
        let r2s: Vec<usize> = r2s.into_iter().map(|v| v as usize).collect();
        self.sweep_points(r as usize, &r2s)
            .map(|v| to_json(&v))
            .map_err(js_err)
    }

    /// Bucket occupancy for one query.
    pub fn bucket_histogram(&self, query: u32, r2: u32) -> Result<String, JsValue> {
        self.histogram_of(query as usize, r2 as usize)
            .map(|v| to_json(&v))
            .map_err(js_err)
    }
}
