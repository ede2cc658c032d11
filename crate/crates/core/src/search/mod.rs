//! Exhaustive (flat) search over a code array, conventional or two-pass.

pub mod conventional;
pub mod derived;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Duration;

use web_time::Instant;

use crate::error::{Error, Result};
use crate::quantizer::{CodeStore, ProductQuantizer};
use crate::vecio::Dataset;

pub use conventional::{adc, compute_tables, scan, scan_into, LookupTables};
pub use derived::{
    adc_low_bits, approx_distance, quantize_distance, quantize_tables, refine, refine_by,
    scan_derived, scan_derived_into, CappedBuckets, LazyTables, QuantizedTables, BUCKETS,
};

/// A result entry: vector id and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub dist: f32,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Bounded max-heap keeping the `capacity` smallest `(dist, id)` pairs.
#[derive(Debug, Clone)]
pub struct ResultSet {
    capacity: usize,
    heap: BinaryHeap<Neighbor>,
}

impl ResultSet {
    pub fn new(capacity: usize) -> Self {
        ResultSet {
            capacity,
            heap: BinaryHeap::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Largest kept entry.
    pub fn worst(&self) -> Option<Neighbor> {
        self.heap.peek().copied()
    }

    #[inline]
    pub fn add(&mut self, id: u32, dist: f32) {
        let n = Neighbor { id, dist };
        if self.heap.len() < self.capacity {
            self.heap.push(n);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if n < *top {
                *top = n;
            }
        }
    }

    /// Entries sorted by ascending `(dist, id)`.
    pub fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec()
    }
}

/// Wall time spent in each search phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub index: Duration,
    pub tables: Duration,
    pub scan: Duration,
    pub refine: Duration,
}

impl PhaseTimes {
    pub fn sum(&self) -> Duration {
        self.index + self.tables + self.scan + self.refine
    }
}

/// Counters describing the work done by one query.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SearchStats {
    /// Codes scanned.
    pub scanned: usize,
    /// Candidates re-ranked by the refine phase.
    pub refined: usize,
    /// Lookup-table entries computed in the tables phase.
    pub table_entries: usize,
    /// Full-table entries computed on demand during refine.
    pub lazy_entries: usize,
    /// Size of the full lookup tables that lazy refinement avoided building,
    /// summed over probed cells.
    pub full_table_size: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutput {
    pub neighbors: Vec<Neighbor>,
    pub phases: PhaseTimes,
    pub stats: SearchStats,
}

impl SearchOutput {
    pub fn ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|n| n.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Full lookup tables and a heap scan.
    Conventional,
    /// Quantized derived tables, capped buckets, lazy refine.
    Derived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryParams {
    /// Result-set size.
    pub r: usize,
    /// Candidate-set size (derived mode).
    pub r2: usize,
    /// Number of probed cells (inverted index only).
    pub ma: usize,
    pub mode: SearchMode,
    /// Whether capped buckets discard candidates above the moving bound.
    pub bounded: bool,
}

impl QueryParams {
    pub fn conventional(r: usize) -> Self {
        QueryParams {
            r,
            r2: r,
            ma: 1,
            mode: SearchMode::Conventional,
            bounded: true,
        }
    }

    pub fn derived(r: usize, r2: usize) -> Self {
        QueryParams {
            r,
            r2,
            ma: 1,
            mode: SearchMode::Derived,
            bounded: true,
        }
    }

    pub fn with_ma(mut self, ma: usize) -> Self {
        self.ma = ma;
        self
    }

    pub fn unbounded(mut self) -> Self {
        self.bounded = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::domain("r must be at least 1"));
        }
        if self.mode == SearchMode::Derived && self.r2 < self.r {
            return Err(Error::domain(format!(
                "derived search needs r2 >= r (r = {}, r2 = {})",
                self.r, self.r2
            )));
        }
        if self.ma == 0 {
            return Err(Error::domain("ma must be at least 1"));
        }
        Ok(())
    }
}

/// Anything that answers ANN queries over encoded vectors.
pub trait AnnBackend: Sync {
    fn quantizer(&self) -> &ProductQuantizer;
    /// Number of indexed vectors.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Number of inverted lists (1 for a flat index).
    fn cells(&self) -> usize;
    fn search(&self, query: &[f32], params: &QueryParams) -> Result<SearchOutput>;
}

/// Database encoded as one contiguous code array, searched exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    pub pq: ProductQuantizer,
    pub codes: CodeStore,
}

impl FlatIndex {
    pub fn build(pq: ProductQuantizer, base: &Dataset) -> Result<Self> {
        let codes = pq.encode_all(base)?;
        Ok(FlatIndex { pq, codes })
    }

    pub fn from_parts(pq: ProductQuantizer, codes: CodeStore) -> Result<Self> {
        if codes.m() != pq.m() || codes.width() != pq.code_width() {
            return Err(Error::domain("codes do not match the quantizer layout"));
        }
        Ok(FlatIndex { pq, codes })
    }

    fn check_query(&self, y: &[f32]) -> Result<()> {
        if y.len() != self.pq.dim() {
            return Err(Error::domain(format!(
                "query of dimension {} for vectors of dimension {}",
                y.len(),
                self.pq.dim()
            )));
        }
        Ok(())
    }

    /// Conventional search: full tables, heap scan.
    pub fn search_conventional(&self, y: &[f32], r: usize) -> Result<SearchOutput> {
        self.check_query(y)?;
        let t0 = Instant::now();
        let yr = self.pq.rotate(y);
        let tables = compute_tables(&yr, self.pq.full())?;
        let t1 = Instant::now();
        let heap = scan(&self.codes, &tables, r);
        let t2 = Instant::now();
        Ok(SearchOutput {
            neighbors: heap.into_sorted(),
            phases: PhaseTimes {
                tables: t1 - t0,
                scan: t2 - t1,
                ..Default::default()
            },
            stats: SearchStats {
                scanned: self.codes.len(),
                refined: 0,
                table_entries: tables.m() * tables.k(),
                lazy_entries: 0,
                full_table_size: tables.m() * tables.k(),
            },
        })
    }

    /// Two-pass search: derived tables and capped buckets, then lazy refine.
    pub fn search_derived(
        &self,
        y: &[f32],
        r: usize,
        r2: usize,
        bounded: bool,
    ) -> Result<SearchOutput> {
        self.check_query(y)?;
        QueryParams::derived(r, r2).validate()?;
        let pq = &self.pq;
        let t0 = Instant::now();
        let yr = pq.rotate(y);
        let small = compute_tables(&yr, pq.derived())?;
        let qtables = quantize_tables(&small, &self.codes, r2, pq.derived_bits());
        let t1 = Instant::now();
        let mut buckets = if bounded {
            CappedBuckets::new(r2)
        } else {
            CappedBuckets::unbounded()
        };
        scan_derived_into(&self.codes, None, &qtables, pq.derived_bits(), &mut buckets);
        let t2 = Instant::now();
        let mut lazy = LazyTables::new(pq.m(), pq.k());
        let (heap, refined) = refine(&self.codes, &buckets, pq.full(), &yr, &mut lazy, r, r2);
        let t3 = Instant::now();
        Ok(SearchOutput {
            neighbors: heap.into_sorted(),
            phases: PhaseTimes {
                index: Duration::ZERO,
                tables: t1 - t0,
                scan: t2 - t1,
                refine: t3 - t2,
            },
            stats: SearchStats {
                scanned: self.codes.len(),
                refined,
                table_entries: small.m() * small.k(),
                lazy_entries: lazy.computed(),
                full_table_size: pq.m() * pq.k(),
            },
        })
    }
}

impl AnnBackend for FlatIndex {
    fn quantizer(&self) -> &ProductQuantizer {
        &self.pq
    }

    fn len(&self) -> usize {
        self.codes.len()
    }

    fn cells(&self) -> usize {
        1
    }

    fn search(&self, query: &[f32], params: &QueryParams) -> Result<SearchOutput> {
        params.validate()?;
        match params.mode {
            SearchMode::Conventional => self.search_conventional(query, params.r),
            SearchMode::Derived => self.search_derived(query, params.r, params.r2, params.bounded),
        }
    }
}
