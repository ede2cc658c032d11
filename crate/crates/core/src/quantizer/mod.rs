//! Product quantizers with jointly trained derived codebooks.
//!
//! Each subspace is trained in three steps: k-means gives a temporary
//! codebook of `2^b` centroids; same-size k-means splits those centroids
//! into `2^b̄` equal groups whose means form the derived codebook; the
//! temporary codebook is then reordered so that the low `b̄` bits of every
//! full index name the group of its centroid. The last property is what
//! lets a scan index derived tables with `code & (2^b̄ - 1)`.

mod codebook;
mod codes;
mod derived;
mod opq;

use std::borrow::Cow;

use crate::clustering::{self, kmeans_same_size};
use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::par;
use crate::vecio::Dataset;

pub use codebook::Codebook;
pub use codes::{CodeStore, CodeWidth, CodeWord, CodeWords, CompactCode};
pub use derived::{build_final_codebook, final_order, low_bits};
pub use opq::{train_opq_traced, OpqIteration, Rotation, ORTHONORMAL_TOLERANCE};

/// Largest supported full-quantizer width.
pub const MAX_BITS: u32 = 16;

/// Training below this many points per centroid only logs a warning.
pub const MIN_POINTS_PER_CENTROID: usize = 32;

/// Default number of OPQ outer iterations.
pub const DEFAULT_OPQ_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PqParams {
    /// Number of subspaces.
    pub m: usize,
    /// Bits per full sub-quantizer.
    pub bits: u32,
    /// Bits per derived codebook.
    pub derived_bits: u32,
    pub seed: u64,
    pub max_iters: usize,
}

impl PqParams {
    pub fn new(m: usize, bits: u32, derived_bits: u32) -> Self {
        PqParams {
            m,
            bits,
            derived_bits,
            seed: 42,
            max_iters: clustering::DEFAULT_MAX_ITERS,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn k(&self) -> usize {
        1 << self.bits
    }

    pub fn derived_k(&self) -> usize {
        1 << self.derived_bits
    }

    fn dsub(&self, dim: usize) -> usize {
        dim / self.m
    }

    fn subspace_seed(&self, j: usize) -> u64 {
        self.seed
            .wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Check the parameters alone, for a vector dimension `dim`.
    pub fn check(&self, dim: usize) -> Result<()> {
        if self.m == 0 {
            return Err(Error::domain("m must be positive"));
        }
        if self.bits == 0 || self.bits > MAX_BITS {
            return Err(Error::domain(format!(
                "b = {} outside 1..={MAX_BITS}",
                self.bits
            )));
        }
        if self.derived_bits == 0 || self.derived_bits > self.bits {
            return Err(Error::domain(format!(
                "b̄ = {} must satisfy 1 <= b̄ <= b = {}",
                self.derived_bits, self.bits
            )));
        }
        if dim == 0 || !dim.is_multiple_of(self.m) {
            return Err(Error::domain(format!(
                "dimension {dim} is not divisible by m = {}",
                self.m
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::domain("max_iters must be positive"));
        }
        Ok(())
    }

    fn validate(&self, train: &Dataset) -> Result<()> {
        self.check(train.dim())?;
        if train.count() < self.k() {
            return Err(Error::domain(format!(
                "{} training vectors for {} centroids",
                train.count(),
                self.k()
            )));
        }
        if train.count() < MIN_POINTS_PER_CENTROID * self.k() {
            log::warn!(
                "only {} training vectors for 2^{} centroids per subspace",
                train.count(),
                self.bits
            );
        }
        Ok(())
    }
}

/// Trained codebooks of one subspace.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Subspace {
    full: Codebook,
    derived: Codebook,
    groups: Vec<u32>,
}

/// Steps 2 and 3 for one subspace, from its temporary codebook.
pub(crate) fn train_subspace_codebooks(
    temp: Codebook,
    params: &PqParams,
    j: usize,
) -> Result<Subspace> {
    let points = Dataset::new(temp.dsub(), temp.as_slice().to_vec())?;
    let split = kmeans_same_size(
        &points,
        params.derived_k(),
        params.subspace_seed(j) ^ 0x5eed,
        params.max_iters,
    )?;
    let order = final_order(&split.partition(), params.derived_bits)?;
    let groups = order
        .iter()
        .map(|&t| split.assignment[t as usize])
        .collect();
    Ok(Subspace {
        full: temp.permuted(&order),
        derived: split.codebook,
        groups,
    })
}

/// Product quantizer (optionally rotated) with a derived codebook per
/// subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductQuantizer {
    dim: usize,
    bits: u32,
    derived_bits: u32,
    full: Vec<Codebook>,
    derived: Vec<Codebook>,
    /// Same-size k-means group of each full centroid, recorded at training.
    groups: Vec<Vec<u32>>,
    rotation: Option<Rotation>,
}

impl ProductQuantizer {
    /// Train a plain product quantizer and its derived codebooks.
    pub fn train(train: &Dataset, params: &PqParams) -> Result<Self> {
        params.validate(train)?;
        let dsub = params.dsub(train.dim());
        let subs = par::map_range(params.m, |j| {
            let part = train.columns(j * dsub, dsub);
            let temp =
                clustering::kmeans(&part, params.k(), params.subspace_seed(j), params.max_iters)?;
            train_subspace_codebooks(temp.codebook, params, j)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Self::assemble(train.dim(), params, subs, None)
    }

    /// Train an optimized product quantizer with `outer_iters` alternating
    /// rotation/codebook updates. `outer_iters == 0` is plain PQ.
    pub fn train_opq(train: &Dataset, params: &PqParams, outer_iters: usize) -> Result<Self> {
        train_opq_traced(train, params, outer_iters).map(|(pq, _)| pq)
    }

    pub(crate) fn assemble(
        dim: usize,
        params: &PqParams,
        subs: Vec<Subspace>,
        rotation: Option<Rotation>,
    ) -> Result<Self> {
        let mut full = Vec::with_capacity(subs.len());
        let mut derived = Vec::with_capacity(subs.len());
        let mut groups = Vec::with_capacity(subs.len());
        for s in subs {
            full.push(s.full);
            derived.push(s.derived);
            groups.push(s.groups);
        }
        Self::from_parts(
            dim,
            params.bits,
            params.derived_bits,
            full,
            derived,
            groups,
            rotation,
        )
    }

    /// Assemble a quantizer from stored parts, checking shapes and P1.
    pub fn from_parts(
        dim: usize,
        bits: u32,
        derived_bits: u32,
        full: Vec<Codebook>,
        derived: Vec<Codebook>,
        groups: Vec<Vec<u32>>,
        rotation: Option<Rotation>,
    ) -> Result<Self> {
        let m = full.len();
        PqParams::new(m, bits, derived_bits).check(dim)?;
        let dsub = dim / m;
        if derived.len() != m || groups.len() != m {
            return Err(Error::domain("codebook counts disagree"));
        }
        for j in 0..m {
            if full[j].dsub() != dsub || derived[j].dsub() != dsub {
                return Err(Error::domain(format!(
                    "subspace {j} has the wrong dimension"
                )));
            }
            if full[j].k() != 1 << bits || derived[j].k() != 1 << derived_bits {
                return Err(Error::domain(format!(
                    "subspace {j} has the wrong codebook size"
                )));
            }
            if groups[j].len() != full[j].k() {
                return Err(Error::domain(format!("subspace {j} lacks group records")));
            }
        }
        if let Some(r) = &rotation {
            if r.dim() != dim {
                return Err(Error::domain("rotation dimension differs from vectors"));
            }
        }
        let pq = ProductQuantizer {
            dim,
            bits,
            derived_bits,
            full,
            derived,
            groups,
            rotation,
        };
        pq.verify_p1()?;
        Ok(pq)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.full.len()
    }

    pub fn dsub(&self) -> usize {
        self.dim / self.m()
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn derived_bits(&self) -> u32 {
        self.derived_bits
    }

    pub fn k(&self) -> usize {
        1 << self.bits
    }

    pub fn derived_k(&self) -> usize {
        1 << self.derived_bits
    }

    pub fn full(&self) -> &[Codebook] {
        &self.full
    }

    pub fn derived(&self) -> &[Codebook] {
        &self.derived
    }

    /// Recorded group of every full centroid of subspace `j`.
    pub fn groups(&self, j: usize) -> &[u32] {
        &self.groups[j]
    }

    pub fn rotation(&self) -> Option<&Rotation> {
        self.rotation.as_ref()
    }

    pub fn code_width(&self) -> CodeWidth {
        CodeWidth::for_bits(self.bits)
    }

    /// Check that every full index's low bits equal its recorded group and
    /// that each derived centroid is the mean of its group.
    pub fn verify_p1(&self) -> Result<()> {
        let dsub = self.dsub();
        for (j, (full, derived)) in self.full.iter().zip(&self.derived).enumerate() {
            let mut sums = vec![0.0f64; derived.k() * dsub];
            for i in 0..full.k() {
                let l = low_bits(i as u32, self.derived_bits);
                if self.groups[j][i] != l {
                    return Err(Error::Invariant(format!(
                        "subspace {j}: centroid {i} recorded in group {} but low bits give {l}",
                        self.groups[j][i]
                    )));
                }
                for (s, &v) in sums[l as usize * dsub..][..dsub]
                    .iter_mut()
                    .zip(full.centroid(i))
                {
                    *s += f64::from(v);
                }
            }
            let per_group = (full.k() / derived.k()) as f64;
            for l in 0..derived.k() {
                for (d, &c) in derived.centroid(l).iter().enumerate() {
                    let mean = sums[l * dsub + d] / per_group;
                    if (mean - f64::from(c)).abs() > 1e-3 * (1.0 + mean.abs()) {
                        return Err(Error::Invariant(format!(
                            "subspace {j}: derived centroid {l} is not the mean of its group"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `R x` when a rotation is present, `x` otherwise.
    pub fn rotate<'a>(&self, x: &'a [f32]) -> Cow<'a, [f32]> {
        match &self.rotation {
            Some(r) => Cow::Owned(r.apply(x)),
            None => Cow::Borrowed(x),
        }
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::domain(format!(
                "vector of dimension {} for a quantizer of dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Encode an already rotated vector.
    pub(crate) fn encode_rotated(&self, x: &[f32]) -> CompactCode {
        let dsub = self.dsub();
        CompactCode::new(
            self.full
                .iter()
                .zip(x.chunks_exact(dsub))
                .map(|(cb, sub)| cb.nearest(sub).0 as u16)
                .collect(),
        )
    }

    pub fn encode(&self, x: &[f32]) -> Result<CompactCode> {
        self.check_dim(x)?;
        Ok(self.encode_rotated(&self.rotate(x)))
    }

    pub fn encode_all(&self, ds: &Dataset) -> Result<CodeStore> {
        if !ds.is_empty() {
            self.check_dim(ds.row(0))?;
        }
        let codes = par::map_range(ds.count(), |i| self.encode_rotated(&self.rotate(ds.row(i))));
        let mut store = CodeStore::new(self.m(), self.code_width());
        for c in &codes {
            store.push(c)?;
        }
        Ok(store)
    }

    /// Concatenated centroids in the rotated space.
    pub(crate) fn reconstruct_rotated(&self, code: &CompactCode) -> Result<Vec<f32>> {
        if code.len() != self.m() {
            return Err(Error::domain(format!(
                "code of length {} for {} subspaces",
                code.len(),
                self.m()
            )));
        }
        let mut out = Vec::with_capacity(self.dim);
        for (cb, &i) in self.full.iter().zip(code.indexes()) {
            let i = i as usize;
            if i >= cb.k() {
                return Err(Error::domain(format!(
                    "index {i} outside codebook of {}",
                    cb.k()
                )));
            }
            out.extend_from_slice(cb.centroid(i));
        }
        Ok(out)
    }

    pub fn decode(&self, code: &CompactCode) -> Result<Vec<f32>> {
        let y = self.reconstruct_rotated(code)?;
        Ok(match &self.rotation {
            Some(r) => r.apply_transpose(&y),
            None => y,
        })
    }

    /// Sum over subspaces of the distance from `x` to its chosen centroid,
    /// measured in the rotated space.
    pub fn quantization_error(&self, x: &[f32]) -> Result<f32> {
        self.check_dim(x)?;
        let xr = self.rotate(x);
        let code = self.encode_rotated(&xr);
        let rec = self.reconstruct_rotated(&code)?;
        Ok(l2_sq(&xr, &rec))
    }

    /// Mean squared reconstruction error over a dataset.
    pub fn mean_distortion(&self, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Ok(0.0);
        }
        let errs = par::map_range(ds.count(), |i| self.quantization_error(ds.row(i)));
        let mut total = 0.0f64;
        for e in errs {
            total += f64::from(e?);
        }
        Ok(total / ds.count() as f64)
    }

    /// Per-subspace mean distortion over a dataset.
    pub fn subspace_distortion(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let dsub = self.dsub();
        let mut out = vec![0.0f64; self.m()];
        for x in ds.rows() {
            self.check_dim(x)?;
            let xr = self.rotate(x);
            for (j, (cb, sub)) in self.full.iter().zip(xr.chunks_exact(dsub)).enumerate() {
                out[j] += f64::from(cb.nearest(sub).1);
            }
        }
        let n = ds.count().max(1) as f64;
        Ok(out.into_iter().map(|v| v / n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn two_centroid_encode() {
        let cb = Codebook::new(1, vec![0.0, 10.0]).unwrap();
        let pq = ProductQuantizer::from_parts(
            1,
            1,
            1,
            vec![cb.clone()],
            vec![cb],
            vec![vec![0, 1]],
            None,
        )
        .unwrap();
        assert_eq!(pq.encode(&[2.0]).unwrap().indexes(), &[0]);
        assert_eq!(pq.encode(&[5.0]).unwrap().indexes(), &[0]);
        assert_eq!(pq.encode(&[6.0]).unwrap().indexes(), &[1]);
        assert!(pq.encode(&[1.0, 2.0]).is_err());
        assert!(pq.decode(&CompactCode::new(vec![2])).is_err());
        assert_eq!(pq.decode(&CompactCode::new(vec![0])).unwrap(), vec![0.0]);
    }

    #[test]
    fn param_checks() {
        let ds = synth::gaussian(64, 8, 1.0, 0);
        assert!(ProductQuantizer::train(&ds, &PqParams::new(3, 2, 1)).is_err());
        assert!(ProductQuantizer::train(&ds, &PqParams::new(2, 2, 3)).is_err());
        assert!(ProductQuantizer::train(&ds, &PqParams::new(2, 7, 3)).is_err());
        assert!(ProductQuantizer::train(&ds, &PqParams::new(2, 17, 3)).is_err());
    }

    #[test]
    fn equal_bits_gives_singleton_groups() {
        let ds = synth::gaussian(512, 4, 1.0, 3);
        let pq = ProductQuantizer::train(&ds, &PqParams::new(2, 3, 3)).unwrap();
        for j in 0..2 {
            let mut a: Vec<_> = pq.full()[j].iter().map(|c| c.to_vec()).collect();
            let mut b: Vec<_> = pq.derived()[j].iter().map(|c| c.to_vec()).collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            assert_eq!(a, b);
            assert_eq!(pq.groups(j), &(0..8).collect::<Vec<u32>>()[..]);
        }
    }

    #[test]
    fn broken_group_record_fails_p1() {
        let ds = synth::gaussian(256, 2, 1.0, 4);
        let pq = ProductQuantizer::train(&ds, &PqParams::new(1, 4, 2)).unwrap();
        let mut groups = vec![pq.groups(0).to_vec()];
        groups[0].swap(0, 1);
        let r = ProductQuantizer::from_parts(
            2,
            4,
            2,
            pq.full().to_vec(),
            pq.derived().to_vec(),
            groups,
            None,
        );
        assert!(matches!(r, Err(Error::Invariant(_))));
    }
}
