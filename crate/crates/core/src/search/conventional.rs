//! Full lookup tables, table-based ADC and the heap scan.

use super::ResultSet;
use crate::error::{Error, Result};
use crate::quantizer::{CodeStore, CodeWord, CodeWords, Codebook, CompactCode};

/// Per-subspace distances from a query to every centroid, stored as one
/// contiguous `m x k` array.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTables {
    m: usize,
    k: usize,
    data: Vec<f32>,
}

impl LookupTables {
    /// Build from explicit tables of equal length.
    pub fn from_tables(tables: &[Vec<f32>]) -> Result<Self> {
        let k = tables.first().map_or(0, Vec::len);
        if k == 0 || tables.iter().any(|t| t.len() != k) {
            return Err(Error::domain(
                "lookup tables must be non-empty and of equal length",
            ));
        }
        Ok(LookupTables {
            m: tables.len(),
            k,
            data: tables.concat(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn table(&self, j: usize) -> &[f32] {
        &self.data[j * self.k..(j + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Smallest entry over all tables.
    pub fn min_entry(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

/// `D_j[i] = |y_j - C_j[i]|^2` for every subspace `j` and centroid `i`.
///
/// `y` must already be rotated if the quantizer has a rotation.
pub fn compute_tables(y: &[f32], codebooks: &[Codebook]) -> Result<LookupTables> {
    let Some(first) = codebooks.first() else {
        return Err(Error::domain("no codebooks"));
    };
    let (k, dsub) = (first.k(), first.dsub());
    if codebooks.iter().any(|c| c.k() != k || c.dsub() != dsub) {
        return Err(Error::domain("codebooks differ in shape"));
    }
    if y.len() != dsub * codebooks.len() {
        return Err(Error::domain(format!(
            "query of dimension {} for {} subspaces of dimension {dsub}",
            y.len(),
            codebooks.len()
        )));
    }
    let mut data = vec![0.0f32; k * codebooks.len()];
    for ((cb, sub), out) in codebooks
        .iter()
        .zip(y.chunks_exact(dsub))
        .zip(data.chunks_exact_mut(k))
    {
        cb.distances_to(sub, out);
    }
    Ok(LookupTables {
        m: codebooks.len(),
        k,
        data,
    })
}

/// Table-based asymmetric distance: `sum_j D_j[code[j]]`.
#[inline]
pub fn adc<W: CodeWord>(code: &[W], tables: &LookupTables) -> f32 {
    let mut d = 0.0f32;
    for (table, &c) in tables.data.chunks_exact(tables.k).zip(code) {
        d += table[c.index()];
    }
    d
}

pub fn adc_code(code: &CompactCode, tables: &LookupTables) -> f32 {
    adc(code.indexes(), tables)
}

fn scan_words<W: CodeWord>(
    words: &[W],
    m: usize,
    ids: Option<&[u32]>,
    tables: &LookupTables,
    out: &mut ResultSet,
) {
    for (i, code) in words.chunks_exact(m).enumerate() {
        let id = ids.map_or(i as u32, |ids| ids[i]);
        out.add(id, adc(code, tables));
    }
}

/// Heap scan of `codes`, adding `(id, adc)` pairs to `out`. Without `ids`
/// the position in the store is the id.
pub fn scan_into(
    codes: &CodeStore,
    ids: Option<&[u32]>,
    tables: &LookupTables,
    out: &mut ResultSet,
) {
    match codes.words() {
        CodeWords::U8(w) => scan_words(w, codes.m(), ids, tables, out),
        CodeWords::U16(w) => scan_words(w, codes.m(), ids, tables, out),
    }
}

/// The `r` codes nearest to the query under table ADC, ties by id.
pub fn scan(codes: &CodeStore, tables: &LookupTables, r: usize) -> ResultSet {
    let mut out = ResultSet::new(r);
    scan_into(codes, None, tables, &mut out);
    out
}
