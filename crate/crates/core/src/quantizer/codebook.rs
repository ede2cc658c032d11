use crate::distance;
use crate::error::{Error, Result};

/// Ordered centroids of one vector quantizer. The position of a centroid
/// is its code, so reordering a codebook changes its meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dsub: usize,
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new(dsub: usize, centroids: Vec<f32>) -> Result<Self> {
        if dsub == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dsub) {
            return Err(Error::domain(format!(
                "{} scalars do not form a codebook of dimension {dsub}",
                centroids.len()
            )));
        }
        if let Some(v) = centroids.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite centroid value {v}")));
        }
        Ok(Codebook {
            k: centroids.len() / dsub,
            dsub,
            centroids,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dsub(&self) -> usize {
        self.dsub
    }

    /// `log2(k)` when `k` is a power of two.
    pub fn bits(&self) -> Option<u32> {
        self.k.is_power_of_two().then(|| self.k.trailing_zeros())
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dsub..(i + 1) * self.dsub]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.centroids
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.centroids.chunks_exact(self.dsub)
    }

    /// Nearest centroid to `x`, lowest index on ties.
    pub fn nearest(&self, x: &[f32]) -> (usize, f32) {
        distance::nearest(&self.centroids, self.dsub, x)
    }

    /// Squared distances from `x` to every centroid, in index order.
    pub fn distances_to(&self, x: &[f32], out: &mut [f32]) {
        for (o, c) in out.iter_mut().zip(self.iter()) {
            *o = distance::l2_sq(x, c);
        }
    }

    /// A codebook holding `order[i]`-th centroid of `self` at position `i`.
    pub fn permuted(&self, order: &[u32]) -> Codebook {
        let mut centroids = Vec::with_capacity(self.centroids.len());
        for &src in order {
            centroids.extend_from_slice(self.centroid(src as usize));
        }
        Codebook {
            k: order.len(),
            dsub: self.dsub,
            centroids,
        }
    }
}
