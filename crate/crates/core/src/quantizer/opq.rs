//! Orthonormal rotation learned by alternating codebook and Procrustes
//! updates.

use nalgebra::DMatrix;

use super::{train_subspace_codebooks, PqParams, ProductQuantizer};
use crate::clustering::kmeans_from;
use crate::error::{Error, Result};
use crate::par;
use crate::quantizer::Codebook;
use crate::vecio::Dataset;

/// Row-major `d x d` orthonormal matrix `R`; vectors are quantized as `R x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    dim: usize,
    matrix: Vec<f32>,
}

/// Maximum per-entry deviation of `R^T R` from the identity accepted for a
/// rotation.
pub const ORTHONORMAL_TOLERANCE: f32 = 1e-5;

impl Rotation {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Rotation { dim, matrix }
    }

    pub fn from_matrix(dim: usize, matrix: Vec<f32>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::domain("rotation matrix is not square"));
        }
        let r = Rotation { dim, matrix };
        let err = r.orthonormality_error();
        if err.is_nan() || err > ORTHONORMAL_TOLERANCE {
            return Err(Error::domain(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err})"
            )));
        }
        Ok(r)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut matrix = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                matrix.push(m[(i, j)] as f32);
            }
        }
        Rotation { dim, matrix }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// `R x`.
    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        self.matrix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `R^T y`.
    pub fn apply_transpose(&self, y: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; self.dim];
        for (row, &yi) in self.matrix.chunks_exact(self.dim).zip(y) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += r * yi;
            }
        }
        out
    }

    /// Largest entry of `|R^T R - I|`, computed in `f64`.
    pub fn orthonormality_error(&self) -> f32 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let mut dot = 0.0f64;
                for k in 0..d {
                    dot += f64::from(self.matrix[k * d + i]) * f64::from(self.matrix[k * d + j]);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst as f32
    }

    pub fn apply_all(&self, ds: &Dataset) -> Dataset {
        let data: Vec<Vec<f32>> = par::map_range(ds.count(), |i| self.apply(ds.row(i)));
        Dataset::new(ds.dim(), data.concat()).expect("rotation preserves dimension")
    }
}

/// Per-outer-iteration record of OPQ training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpqIteration {
    /// Training-set reconstruction error after the iteration.
    pub distortion: f64,
    pub orthonormality_error: f32,
}

fn reconstruct_all(codebooks: &[Codebook], rotated: &Dataset) -> Dataset {
    let rows: Vec<Vec<f32>> = par::map_range(rotated.count(), |i| {
        let x = rotated.row(i);
        let mut out = Vec::with_capacity(x.len());
        let mut start = 0;
        for cb in codebooks {
            let sub = &x[start..start + cb.dsub()];
            out.extend_from_slice(cb.centroid(cb.nearest(sub).0));
            start += cb.dsub();
        }
        out
    });
    Dataset::new(rotated.dim(), rows.concat()).expect("same dimension")
}

fn sq_error(a: &Dataset, b: &Dataset) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum()
}

/// Orthogonal `R` minimizing `sum |R x_i - y_i|^2`: with
/// `M = sum y_i x_i^T = U S V^T`, `R = U V^T`.
fn procrustes(x: &Dataset, y: &Dataset) -> Rotation {
    let d = x.dim();
    let to_mat = |ds: &Dataset| {
        DMatrix::from_row_iterator(ds.count(), d, ds.data().iter().map(|&v| f64::from(v)))
    };
    let m = to_mat(y).transpose() * to_mat(x);
    let svd = m.svd(true, true);
    let r = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
    Rotation::from_nalgebra(&r)
}

/// OPQ training with a per-iteration trace.
///
/// Starts from `R = I` with the same codebooks plain PQ training would
/// produce, then alternates a Procrustes rotation update with warm-started
/// k-means on the rotated data. Derived codebooks are built from the final
/// rotated-space codebooks.
pub fn train_opq_traced(
    train: &Dataset,
    params: &PqParams,
    outer_iters: usize,
) -> Result<(ProductQuantizer, Vec<OpqIteration>)> {
    params.validate(train)?;
    if outer_iters == 0 {
        return Ok((ProductQuantizer::train(train, params)?, Vec::new()));
    }
    let dim = train.dim();
    let dsub = params.dsub(dim);
    let subspaces = |ds: &Dataset| -> Vec<Dataset> {
        (0..params.m).map(|j| ds.columns(j * dsub, dsub)).collect()
    };

    let mut codebooks: Vec<Codebook> = {
        let parts = subspaces(train);
        let results = par::map_range(params.m, |j| {
            crate::clustering::kmeans(
                &parts[j],
                params.k(),
                params.subspace_seed(j),
                params.max_iters,
            )
        });
        results
            .into_iter()
            .map(|r| r.map(|c| c.codebook))
            .collect::<Result<_>>()?
    };

    let mut rotation = Rotation::identity(dim);
    let mut trace = Vec::with_capacity(outer_iters);
    for it in 0..outer_iters {
        let rotated = rotation.apply_all(train);
        let recon = reconstruct_all(&codebooks, &rotated);
        rotation = procrustes(train, &recon);

        let rotated = rotation.apply_all(train);
        let parts = subspaces(&rotated);
        let results = par::map_range(params.m, |j| {
            kmeans_from(&parts[j], &codebooks[j], params.max_iters)
        });
        codebooks = results
            .into_iter()
            .map(|r| r.map(|c| c.codebook))
            .collect::<Result<_>>()?;

        let distortion = sq_error(&rotated, &reconstruct_all(&codebooks, &rotated));
        let orthonormality_error = rotation.orthonormality_error();
        log::debug!("opq iteration {it}: distortion {distortion:.6e}");
        trace.push(OpqIteration {
            distortion,
            orthonormality_error,
        });
    }

    let subs = par::map_range(params.m, |j| {
        train_subspace_codebooks(codebooks[j].clone(), params, j)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let pq = ProductQuantizer::assemble(dim, params, subs, Some(rotation))?;
    Ok((pq, trace))
}
