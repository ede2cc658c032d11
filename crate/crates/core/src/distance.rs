//! Distance kernels shared by every search path.
//!
//! All distances are squared Euclidean. Table construction, lazy refine
//! tables and exact ground truth all go through [`l2_sq`], so values
//! computed on different paths are bit-identical.

/// Squared Euclidean distance, accumulated left to right in `f32`.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Squared Euclidean distance with `f64` accumulation, for distortion sums.
#[inline]
pub fn l2_sq_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum()
}

/// Index and distance of the nearest row of `rows` (row-major, `dim` wide)
/// to `x`. Ties resolve to the lowest index.
pub fn nearest(rows: &[f32], dim: usize, x: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, row) in rows.chunks_exact(dim).enumerate() {
        let d = l2_sq(row, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}
