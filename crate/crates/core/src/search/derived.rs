//! Two-pass search with derived codebooks.
//!
//! The scan pass sums 8-bit quantized distances read from small tables
//! indexed by the low bits of each code, and files every vector id in the
//! bucket matching that sum. The refine pass walks buckets from distance 0
//! upwards, evaluating exact ADC with the full codebooks until `r2`
//! candidates have been seen. Full-table entries are only computed when a
//! candidate touches them.

use super::{LookupTables, Neighbor, ResultSet};
use crate::distance::l2_sq;
use crate::quantizer::{low_bits, CodeStore, CodeWord, CodeWords, Codebook};

/// Number of buckets: one per quantized distance `0..=254`. A distance of
/// 255 means "beyond qmax" and is never stored.
pub const BUCKETS: usize = 255;

const SATURATED: u8 = 255;

/// Map a float distance onto `0..=254`, or 255 when above `qmax`.
pub fn quantize_distance(v: f32, qmin: f32, qmax: f32) -> u8 {
    if v > qmax {
        return SATURATED;
    }
    if qmax <= qmin {
        return 0;
    }
    let scaled =
        ((f64::from(v) - f64::from(qmin)) / (f64::from(qmax) - f64::from(qmin)) * 255.0).floor();
    scaled.clamp(0.0, 254.0) as u8
}

/// Small lookup tables quantized to bytes between shared bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTables {
    m: usize,
    k: usize,
    data: Vec<u8>,
    qmin: f32,
    qmax: f32,
}

impl QuantizedTables {
    pub fn with_bounds(small: &LookupTables, qmin: f32, qmax: f32) -> Self {
        QuantizedTables {
            m: small.m(),
            k: small.k(),
            data: small
                .as_slice()
                .iter()
                .map(|&v| quantize_distance(v, qmin, qmax))
                .collect(),
            qmin,
            qmax,
        }
    }

    pub fn qmin(&self) -> f32 {
        self.qmin
    }

    pub fn qmax(&self) -> f32 {
        self.qmax
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn table(&self, j: usize) -> &[u8] {
        &self.data[j * self.k..(j + 1) * self.k]
    }
}

/// Float ADC over the small tables, addressing them by low bits.
#[inline]
pub fn approx_distance<W: CodeWord>(code: &[W], small: &LookupTables, derived_bits: u32) -> f32 {
    let mut d = 0.0f32;
    for (j, &c) in code.iter().enumerate() {
        d += small.table(j)[low_bits(c.index() as u32, derived_bits) as usize];
    }
    d
}

/// Largest approximate distance among the first `r2` codes.
pub(crate) fn prefix_qmax(
    codes: &CodeStore,
    small: &LookupTables,
    r2: usize,
    derived_bits: u32,
) -> f32 {
    fn go<W: CodeWord>(w: &[W], m: usize, n: usize, small: &LookupTables, bits: u32) -> f32 {
        w.chunks_exact(m)
            .take(n)
            .map(|c| approx_distance(c, small, bits))
            .fold(f32::NEG_INFINITY, f32::max)
    }
    match codes.words() {
        CodeWords::U8(w) => go(w, codes.m(), r2, small, derived_bits),
        CodeWords::U16(w) => go(w, codes.m(), r2, small, derived_bits),
    }
}

/// Quantize small tables for one list: `qmin` is the smallest entry over
/// all tables, `qmax` the largest approximate distance among the first
/// `r2` codes of `list`.
pub fn quantize_tables(
    small: &LookupTables,
    list: &CodeStore,
    r2: usize,
    derived_bits: u32,
) -> QuantizedTables {
    let qmin = small.min_entry();
    let qmax = prefix_qmax(list, small, r2, derived_bits);
    QuantizedTables::with_bounds(small, qmin, qmax)
}

/// Sum of quantized entries, saturated at 255.
#[inline]
pub fn adc_low_bits<W: CodeWord>(code: &[W], q: &QuantizedTables, derived_bits: u32) -> u8 {
    let mask = (1usize << derived_bits) - 1;
    let mut d = 0u32;
    for (table, &c) in q.data.chunks_exact(q.k).zip(code) {
        d += u32::from(table[c.index() & mask]);
    }
    d.min(u32::from(SATURATED)) as u8
}

/// Candidate accumulator: one id list per quantized distance, plus a
/// discard bound that tracks the distance of the `capacity`-th smallest
/// stored candidate.
#[derive(Debug, Clone)]
pub struct CappedBuckets {
    buckets: Vec<Vec<u32>>,
    capacity: usize,
    /// Ids with distance `>= bound` are discarded.
    bound: usize,
    /// Ids stored below `bound`.
    stored: usize,
    capped: bool,
}

impl CappedBuckets {
    pub fn new(capacity: usize) -> Self {
        CappedBuckets {
            buckets: vec![Vec::new(); BUCKETS],
            capacity: capacity.max(1),
            bound: BUCKETS,
            stored: 0,
            capped: true,
        }
    }

    /// Buckets that never tighten their bound (only 255 is discarded).
    pub fn unbounded() -> Self {
        CappedBuckets {
            capped: false,
            ..CappedBuckets::new(usize::MAX)
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Current discard bound (255 until the capacity is reached).
    pub fn bound(&self) -> u8 {
        self.bound as u8
    }

    pub fn len(&self) -> usize {
        self.stored
    }

    pub fn is_empty(&self) -> bool {
        self.stored == 0
    }

    pub fn bucket(&self, d: usize) -> &[u32] {
        &self.buckets[d]
    }

    /// `(distance, id)` of every stored id, ascending by distance.
    pub fn iter(&self) -> impl Iterator<Item = (u8, u32)> + '_ {
        self.buckets
            .iter()
            .enumerate()
            .flat_map(|(d, b)| b.iter().map(move |&id| (d as u8, id)))
    }

    #[inline]
    pub fn put(&mut self, d: u8, id: u32) {
        let d = d as usize;
        if d >= self.bound {
            return;
        }
        self.buckets[d].push(id);
        self.stored += 1;
        if self.capped {
            self.tighten();
        }
    }

    /// Drop whole top buckets while the rest still hold `capacity` ids.
    /// Each step lowers the bound, so the total work is amortized O(1).
    fn tighten(&mut self) {
        while self.bound > 1 {
            let top = self.bound - 1;
            let n_top = self.buckets[top].len();
            if self.stored - n_top < self.capacity {
                break;
            }
            self.stored -= n_top;
            self.buckets[top].clear();
            self.bound = top;
        }
    }
}

fn scan_words<W: CodeWord>(
    words: &[W],
    m: usize,
    ids: Option<&[u32]>,
    q: &QuantizedTables,
    derived_bits: u32,
    out: &mut CappedBuckets,
) {
    for (i, code) in words.chunks_exact(m).enumerate() {
        let id = ids.map_or(i as u32, |ids| ids[i]);
        out.put(adc_low_bits(code, q, derived_bits), id);
    }
}

/// File every code of `codes` into `out` by quantized low-bits distance.
/// Without `ids` the position in the store is the id.
pub fn scan_derived_into(
    codes: &CodeStore,
    ids: Option<&[u32]>,
    q: &QuantizedTables,
    derived_bits: u32,
    out: &mut CappedBuckets,
) {
    match codes.words() {
        CodeWords::U8(w) => scan_words(w, codes.m(), ids, q, derived_bits, out),
        CodeWords::U16(w) => scan_words(w, codes.m(), ids, q, derived_bits, out),
    }
}

pub fn scan_derived(
    codes: &CodeStore,
    q: &QuantizedTables,
    r2: usize,
    derived_bits: u32,
) -> CappedBuckets {
    let mut out = CappedBuckets::new(r2);
    scan_derived_into(codes, None, q, derived_bits, &mut out);
    out
}

/// Marker for a table entry that has not been computed. Squared distances
/// are never negative.
const UNSET: f32 = -1.0;

/// Full lookup tables filled on demand.
#[derive(Debug, Clone)]
pub struct LazyTables {
    k: usize,
    data: Vec<f32>,
    computed: usize,
}

impl LazyTables {
    pub fn new(m: usize, k: usize) -> Self {
        LazyTables {
            k,
            data: vec![UNSET; m * k],
            computed: 0,
        }
    }

    /// Entries computed so far.
    pub fn computed(&self) -> usize {
        self.computed
    }

    /// Fraction of the full tables computed so far.
    pub fn fill_ratio(&self) -> f64 {
        self.computed as f64 / self.data.len() as f64
    }

    /// ADC with the full codebooks, computing each missing entry as
    /// `|y_j - C_j[c_j]|^2` and remembering it. Accumulates in the same order
    /// as [`super::adc`], so results are bit-identical to it.
    #[inline]
    pub fn adc_refine<W: CodeWord>(&mut self, code: &[W], full: &[Codebook], y: &[f32]) -> f32 {
        let mut d = 0.0f32;
        for (j, (&c, cb)) in code.iter().zip(full).enumerate() {
            let slot = j * self.k + c.index();
            let mut v = self.data[slot];
            if v == UNSET {
                let dsub = cb.dsub();
                v = l2_sq(&y[j * dsub..(j + 1) * dsub], cb.centroid(c.index()));
                self.data[slot] = v;
                self.computed += 1;
            }
            d += v;
        }
        d
    }
}

/// Walk buckets in ascending order, evaluating whole buckets until at
/// least `r2` candidates have been processed. `eval` maps a stored id to
/// its result entry. Returns the best `r` and the number processed.
pub fn refine_by(
    buckets: &CappedBuckets,
    r: usize,
    r2: usize,
    mut eval: impl FnMut(u32) -> Neighbor,
) -> (ResultSet, usize) {
    let mut out = ResultSet::new(r);
    let mut count = 0;
    for bucket in &buckets.buckets {
        if count >= r2 {
            break;
        }
        for &slot in bucket {
            let n = eval(slot);
            out.add(n.id, n.dist);
        }
        count += bucket.len();
    }
    (out, count)
}

/// Refine candidates whose ids are positions in `codes`. `y` is the
/// (rotated) query.
pub fn refine(
    codes: &CodeStore,
    buckets: &CappedBuckets,
    full: &[Codebook],
    y: &[f32],
    lazy: &mut LazyTables,
    r: usize,
    r2: usize,
) -> (ResultSet, usize) {
    let m = codes.m();
    match codes.words() {
        CodeWords::U8(w) => refine_by(buckets, r, r2, |id| {
            let i = id as usize;
            Neighbor {
                id,
                dist: lazy.adc_refine(&w[i * m..(i + 1) * m], full, y),
            }
        }),
        CodeWords::U16(w) => refine_by(buckets, r, r2, |id| {
            let i = id as usize;
            Neighbor {
                id,
                dist: lazy.adc_refine(&w[i * m..(i + 1) * m], full, y),
            }
        }),
    }
}
