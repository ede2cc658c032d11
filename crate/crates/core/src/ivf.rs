//! Inverted file index with residual encoding.
//!
//! A coarse k-means codebook splits the space into `K` cells. Each
//! database vector is stored in the list of its nearest cell as the code
//! of its residual `x - c`. Queries probe the `ma` nearest cells and run
//! either search mode on the probed lists. In derived mode the probed
//! lists feed one shared set of capped buckets, quantized with bounds
//! shared across the lists, and refinement happens once globally.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use web_time::Instant;

use crate::clustering;
use crate::error::{Error, Result};
use crate::par;
use crate::quantizer::{CodeStore, CodeWords, Codebook, PqParams, ProductQuantizer};
use crate::search::derived::prefix_qmax;
use crate::search::{
    compute_tables, refine_by, scan_derived_into, scan_into, AnnBackend, CappedBuckets, LazyTables,
    LookupTables, Neighbor, PhaseTimes, QuantizedTables, QueryParams, ResultSet, SearchMode,
    SearchOutput, SearchStats,
};
use crate::vecio::Dataset;

/// Coarse training uses at most this many vectors per cell.
pub const COARSE_SAMPLE_PER_CELL: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IvfParams {
    /// Number of cells `K`.
    pub cells: usize,
    pub pq: PqParams,
    /// OPQ outer iterations on residuals; 0 trains plain PQ.
    pub opq_iters: usize,
}

impl IvfParams {
    pub fn new(cells: usize, pq: PqParams) -> Self {
        IvfParams {
            cells,
            pq,
            opq_iters: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedList {
    pub ids: Vec<u32>,
    pub codes: CodeStore,
}

/// A probed cell and the query residual relative to its center.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub cell: usize,
    pub center_dist: f32,
    pub residual: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    coarse: Codebook,
    lists: Vec<InvertedList>,
    pq: ProductQuantizer,
}

fn residual(x: &[f32], c: &[f32]) -> Vec<f32> {
    x.iter().zip(c).map(|(a, b)| a - b).collect()
}

impl InvertedIndex {
    /// Train the coarse quantizer and the residual PQ on `train`, then add
    /// every vector of `base` with ids `0..base.count()`.
    pub fn build(train: &Dataset, base: &Dataset, params: &IvfParams) -> Result<Self> {
        let k = params.cells;
        if k == 0 {
            return Err(Error::domain("K must be at least 1"));
        }
        if base.count() < k || train.count() < k {
            return Err(Error::domain(format!(
                "{} database vectors cannot fill {k} cells",
                base.count().min(train.count())
            )));
        }
        if base.dim() != train.dim() {
            return Err(Error::domain("training and database dimensions differ"));
        }
        let sample_size = train.count().min(COARSE_SAMPLE_PER_CELL * k);
        let sample = if sample_size == train.count() {
            train.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(params.pq.seed ^ 0xC0A25E);
            let mut picked = index::sample(&mut rng, train.count(), sample_size).into_vec();
            picked.sort_unstable();
            train.select(&picked)
        };
        let coarse = clustering::kmeans(&sample, k, params.pq.seed, params.pq.max_iters)?.codebook;

        let residuals = Self::residuals(&coarse, train);
        let pq = ProductQuantizer::train_opq(&residuals, &params.pq, params.opq_iters)?;

        let mut index = InvertedIndex {
            lists: (0..k)
                .map(|_| InvertedList {
                    ids: Vec::new(),
                    codes: CodeStore::new(pq.m(), pq.code_width()),
                })
                .collect(),
            coarse,
            pq,
        };
        index.add(base, 0)?;
        Ok(index)
    }

    fn residuals(coarse: &Codebook, ds: &Dataset) -> Dataset {
        let rows = par::map_range(ds.count(), |i| {
            let x = ds.row(i);
            residual(x, coarse.centroid(coarse.nearest(x).0))
        });
        Dataset::new(ds.dim(), rows.concat()).expect("same dimension")
    }

    pub fn from_parts(
        coarse: Codebook,
        lists: Vec<InvertedList>,
        pq: ProductQuantizer,
    ) -> Result<Self> {
        if coarse.dsub() != pq.dim() {
            return Err(Error::domain(
                "coarse centers and quantizer differ in dimension",
            ));
        }
        if lists.len() != coarse.k() {
            return Err(Error::domain("one list per cell required"));
        }
        for l in &lists {
            if l.ids.len() != l.codes.len()
                || l.codes.m() != pq.m()
                || l.codes.width() != pq.code_width()
            {
                return Err(Error::domain("inverted list does not match the quantizer"));
            }
        }
        Ok(InvertedIndex { coarse, lists, pq })
    }

    /// Append vectors with ids `first_id..`.
    fn add(&mut self, base: &Dataset, first_id: u32) -> Result<()> {
        if base.is_empty() {
            return Ok(());
        }
        if base.dim() != self.pq.dim() {
            return Err(Error::domain("vectors do not match the index dimension"));
        }
        let encoded = par::map_range(base.count(), |i| {
            let x = base.row(i);
            let cell = self.coarse.nearest(x).0;
            let r = residual(x, self.coarse.centroid(cell));
            (cell, self.pq.encode_rotated(&self.pq.rotate(&r)))
        });
        for (i, (cell, code)) in encoded.into_iter().enumerate() {
            let list = &mut self.lists[cell];
            list.ids.push(first_id + i as u32);
            list.codes.push(&code)?;
        }
        Ok(())
    }

    pub fn coarse(&self) -> &Codebook {
        &self.coarse
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    pub fn pq(&self) -> &ProductQuantizer {
        &self.pq
    }

    /// Cell of `x`: its nearest coarse center.
    pub fn assign(&self, x: &[f32]) -> usize {
        self.coarse.nearest(x).0
    }

    /// The `ma` cells nearest to `y`, nearest first (ties by cell id).
    pub fn probe(&self, y: &[f32], ma: usize) -> Result<Vec<Probe>> {
        if y.len() != self.pq.dim() {
            return Err(Error::domain("query dimension differs from the index"));
        }
        if ma == 0 || ma > self.coarse.k() {
            return Err(Error::domain(format!(
                "ma = {ma} outside 1..={}",
                self.coarse.k()
            )));
        }
        let mut dists = vec![0.0f32; self.coarse.k()];
        self.coarse.distances_to(y, &mut dists);
        let mut order: Vec<usize> = (0..dists.len()).collect();
        order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .take(ma)
            .map(|cell| Probe {
                cell,
                center_dist: dists[cell],
                residual: residual(y, self.coarse.centroid(cell)),
            })
            .collect())
    }

    fn search_conventional(&self, y: &[f32], r: usize, ma: usize) -> Result<SearchOutput> {
        let t0 = Instant::now();
        let probes = self.probe(y, ma)?;
        let mut phases = PhaseTimes {
            index: t0.elapsed(),
            ..Default::default()
        };
        let mut stats = SearchStats::default();
        let mut heap = ResultSet::new(r);
        for p in &probes {
            let t = Instant::now();
            let yr = self.pq.rotate(&p.residual);
            let tables = compute_tables(&yr, self.pq.full())?;
            let t_scan = Instant::now();
            let list = &self.lists[p.cell];
            scan_into(&list.codes, Some(&list.ids), &tables, &mut heap);
            phases.tables += t_scan - t;
            phases.scan += t_scan.elapsed();
            stats.scanned += list.ids.len();
            stats.table_entries += tables.m() * tables.k();
            stats.full_table_size += tables.m() * tables.k();
        }
        Ok(SearchOutput {
            neighbors: heap.into_sorted(),
            phases,
            stats,
        })
    }

    fn search_derived(&self, y: &[f32], params: &QueryParams) -> Result<SearchOutput> {
        let pq = &self.pq;
        let bits = pq.derived_bits();
        let t0 = Instant::now();
        let probes = self.probe(y, params.ma)?;
        let t1 = Instant::now();

        let rotated: Vec<Vec<f32>> = probes
            .iter()
            .map(|p| pq.rotate(&p.residual).into_owned())
            .collect();
        let small: Vec<LookupTables> = rotated
            .iter()
            .map(|yr| compute_tables(yr, pq.derived()))
            .collect::<Result<_>>()?;
        // Bounds shared by all probed lists: smallest entry of any table, and
        // the largest approximate distance among the first r2 codes met in
        // probe order.
        let qmin = small
            .iter()
            .map(LookupTables::min_entry)
            .fold(f32::INFINITY, f32::min);
        let mut qmax = f32::NEG_INFINITY;
        let mut remaining = params.r2;
        for (p, s) in probes.iter().zip(&small) {
            if remaining == 0 {
                break;
            }
            let codes = &self.lists[p.cell].codes;
            qmax = qmax.max(prefix_qmax(codes, s, remaining, bits));
            remaining -= remaining.min(codes.len());
        }
        let qtables: Vec<QuantizedTables> = small
            .iter()
            .map(|s| QuantizedTables::with_bounds(s, qmin, qmax))
            .collect();
        let t2 = Instant::now();

        // Candidate slots number the probed lists back to back.
        let mut bases = Vec::with_capacity(probes.len());
        let mut buckets = if params.bounded {
            CappedBuckets::new(params.r2)
        } else {
            CappedBuckets::unbounded()
        };
        let mut scanned = 0usize;
        let mut slots: Vec<u32> = Vec::new();
        for (p, q) in probes.iter().zip(&qtables) {
            bases.push(scanned);
            let list = &self.lists[p.cell];
            slots.clear();
            slots.extend((scanned..scanned + list.ids.len()).map(|s| s as u32));
            scan_derived_into(&list.codes, Some(&slots), q, bits, &mut buckets);
            scanned += list.ids.len();
        }
        let t3 = Instant::now();

        let mut lazy: Vec<Option<LazyTables>> = vec![None; probes.len()];
        let m = pq.m();
        let (heap, refined) = refine_by(&buckets, params.r, params.r2, |slot| {
            let slot = slot as usize;
            let p = bases.partition_point(|&b| b <= slot) - 1;
            let i = slot - bases[p];
            let list = &self.lists[probes[p].cell];
            let tables = lazy[p].get_or_insert_with(|| LazyTables::new(m, pq.k()));
            let dist = match list.codes.words() {
                CodeWords::U8(w) => {
                    tables.adc_refine(&w[i * m..(i + 1) * m], pq.full(), &rotated[p])
                }
                CodeWords::U16(w) => {
                    tables.adc_refine(&w[i * m..(i + 1) * m], pq.full(), &rotated[p])
                }
            };
            Neighbor {
                id: list.ids[i],
                dist,
            }
        });
        let t4 = Instant::now();

        Ok(SearchOutput {
            neighbors: heap.into_sorted(),
            phases: PhaseTimes {
                index: t1 - t0,
                tables: t2 - t1,
                scan: t3 - t2,
                refine: t4 - t3,
            },
            stats: SearchStats {
                scanned,
                refined,
                table_entries: small.iter().map(|s| s.m() * s.k()).sum(),
                lazy_entries: lazy.iter().flatten().map(LazyTables::computed).sum(),
                full_table_size: probes.len() * m * pq.k(),
            },
        })
    }
}

impl AnnBackend for InvertedIndex {
    fn quantizer(&self) -> &ProductQuantizer {
        &self.pq
    }

    fn len(&self) -> usize {
        self.lists.iter().map(|l| l.ids.len()).sum()
    }

    fn cells(&self) -> usize {
        self.coarse.k()
    }

    fn search(&self, query: &[f32], params: &QueryParams) -> Result<SearchOutput> {
        params.validate()?;
        match params.mode {
            SearchMode::Conventional => self.search_conventional(query, params.r, params.ma),
            SearchMode::Derived => self.search_derived(query, params),
        }
    }
}
