//! Seeded synthetic datasets for tests, demos and desk-scale benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::quantizer::Rotation;
use crate::vecio::Dataset;

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

/// `n` i.i.d. `N(0, sigma^2)` vectors.
pub fn gaussian(n: usize, dim: usize, sigma: f32, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| sigma * normal(&mut rng)).collect();
    Dataset::new(dim, data).expect("n * dim scalars")
}

/// Gaussian mixture generator. Centers are `N(0, 1)` draws scaled by
/// `separation`; points are a uniformly chosen center plus `N(0, 1)` noise.
#[derive(Debug, Clone)]
pub struct Mixture {
    dim: usize,
    centers: Vec<f32>,
}

impl Mixture {
    pub fn new(dim: usize, clusters: usize, separation: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..clusters * dim)
            .map(|_| separation * normal(&mut rng))
            .collect();
        Mixture { dim, centers }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clusters = self.centers.len() / self.dim;
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let c = rng.random_range(0..clusters);
            for d in 0..self.dim {
                data.push(self.centers[c * self.dim + d] + normal(&mut rng));
            }
        }
        Dataset::new(self.dim, data).expect("n * dim scalars")
    }
}

/// Haar-distributed random orthonormal matrix (QR of a Gaussian matrix
/// with sign correction).
pub fn random_rotation(dim: usize, seed: u64) -> Rotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut m = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            m.push(q[(i, j)] as f32);
        }
    }
    Rotation::from_matrix(dim, m).expect("QR factor is orthonormal")
}

/// Zero-mean data whose per-dimension standard deviation decays
/// geometrically from 1 to `min_sigma`, sorted so that all the energy sits
/// in the leading dimensions, then rotated by a random orthonormal matrix.
pub fn anisotropic(n: usize, dim: usize, min_sigma: f32, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratio = if dim > 1 {
        min_sigma.powf(1.0 / (dim - 1) as f32)
    } else {
        1.0
    };
    let sigmas: Vec<f32> = (0..dim).map(|d| ratio.powi(d as i32)).collect();
    let data: Vec<f32> = (0..n)
        .flat_map(|_| {
            sigmas
                .iter()
                .map(|s| s * normal(&mut rng))
                .collect::<Vec<_>>()
        })
        .collect();
    let raw = Dataset::new(dim, data).expect("n * dim scalars");
    random_rotation(dim, seed ^ 0xA5A5).apply_all(&raw)
}
