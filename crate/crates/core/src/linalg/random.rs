//! Seeded sampling.
//!
//! All randomness comes from ChaCha8 streams addressed by `(seed, stream)`:
//! the seed selects the key and the stream id selects one of 2⁶⁴ independent
//! keystreams under that key. Experiments derive a stream id per grid cell or
//! realization so that parallel evaluation reproduces the serial result.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;

pub type LabRng = ChaCha8Rng;

/// Independent, reproducible generator for `(seed, stream)`.
pub fn rng_stream(seed: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Combines a base stream id with a cell index into a new stream id.
pub fn stream_id(tag: u64, index: u64) -> u64 {
    tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index
}

pub fn standard_normal(rng: &mut LabRng) -> f64 {
    rng.sample(StandardNormal)
}

/// i.i.d. N(0, 1) matrix on stream 0 of `seed`.
pub fn random_gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    gaussian(&mut rng_stream(seed, 0), rows, cols, 1.0)
}

/// i.i.d. N(0, std²) matrix drawn from `rng`.
pub fn gaussian(rng: &mut LabRng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| std * standard_normal(rng)).collect();
    Matrix::from_raw(rows, cols, data)
}

pub fn gaussian_vec(rng: &mut LabRng, len: usize, std: f64) -> Vec<f64> {
    (0..len).map(|_| std * standard_normal(rng)).collect()
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
pub fn random_orthogonal(rng: &mut LabRng, d: usize) -> Matrix {
    let g = gaussian(rng, d, d, 1.0);
    let qr = g.to_nalgebra().qr();
    let q: DMatrix<f64> = qr.q();
    let r = qr.r();
    Matrix::from_fn(d, d, |i, j| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * s
    })
}

/// A `rows × cols` matrix of exact rank `rank` with roughly unit-variance
/// entries: `G₁ G₂ / √rank`.
pub fn planted_rank(rng: &mut LabRng, rows: usize, cols: usize, rank: usize) -> Matrix {
    if rank == 0 {
        return Matrix::zeros(rows, cols);
    }
    let left = gaussian(rng, rows, rank, 1.0);
    let right = gaussian(rng, rank, cols, 1.0 / (rank as f64).sqrt());
    left.matmul_unchecked(&right)
}

/// An invertible matrix with its exact factored inverse.
#[derive(Debug, Clone)]
pub struct ConditionedMatrix {
    pub matrix: Matrix,
    /// `Q₂ᵀ diag(1/s) Q₁ᵀ`, formed from the factors rather than by elimination.
    pub inverse: Matrix,
    /// The spectrum used, `1 … e^{log_cond}`, geometric.
    pub spectrum: Vec<f64>,
}

/// `Q₁ · diag(s) · Q₂` with `s` geometric from 1 to `e^{log_cond}`.
pub fn conditioned_from_rng(rng: &mut LabRng, d: usize, log_cond: f64) -> ConditionedMatrix {
    let q1 = random_orthogonal(rng, d);
    let q2 = random_orthogonal(rng, d);
    let spectrum: Vec<f64> = (0..d)
        .map(|i| {
            let t = if d > 1 { i as f64 / (d - 1) as f64 } else { 0.0 };
            (log_cond * t).exp()
        })
        .collect();
    let inv_spec: Vec<f64> = spectrum.iter().map(|s| 1.0 / s).collect();
    let matrix = q1
        .scale_cols(&spectrum)
        .expect("square factors")
        .matmul_unchecked(&q2);
    let inverse = q2
        .transpose()
        .scale_cols(&inv_spec)
        .expect("square factors")
        .matmul_t(&q1)
        .expect("square factors");
    ConditionedMatrix {
        matrix,
        inverse,
        spectrum,
    }
}

/// Square invertible matrix with condition number `e^{log_cond}`.
pub fn random_invertible_with_condition(d: usize, log_cond: f64, seed: u64) -> Matrix {
    conditioned_from_rng(&mut rng_stream(seed, 0), d, log_cond.max(0.0)).matrix
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;

    #[test]
    fn gaussian_is_deterministic_per_seed() {
        assert_eq!(random_gaussian(4, 3, 9), random_gaussian(4, 3, 9));
        assert_ne!(random_gaussian(4, 3, 9), random_gaussian(4, 3, 10));
    }

    #[test]
    fn streams_are_distinct() {
        let a = gaussian(&mut rng_stream(1, 0), 2, 2, 1.0);
        let b = gaussian(&mut rng_stream(1, 1), 2, 2, 1.0);
        assert_ne!(a, b);
    }

    #[test]
    fn large_sample_mean_near_zero() {
        let m = random_gaussian(1000, 1000, 42);
        let mean = m.as_slice().iter().sum::<f64>() / 1e6;
        assert!(mean.abs() < 0.01, "mean {mean}");
        let var = m.as_slice().iter().map(|v| v * v).sum::<f64>() / 1e6;
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let q = random_orthogonal(&mut rng_stream(3, 0), 10);
        assert!(q.t_matmul(&q).unwrap().rel_error(&Matrix::identity(10)) < 1e-14);
    }

    #[test]
    fn conditioned_examples() {
        let m = random_invertible_with_condition(6, 0.0, 5);
        let s = singular_values(&m).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let m = random_invertible_with_condition(8, 2.0, 5);
        let s = singular_values(&m).unwrap();
        let cond = s[0] / s[s.len() - 1];
        let e2 = 2f64.exp();
        assert!(cond >= e2 / 2.0 && cond <= 2.0 * e2, "cond {cond}");
        assert!(*s.last().unwrap() > 0.0);

        let c = conditioned_from_rng(&mut rng_stream(5, 1), 8, 3.0);
        let prod = c.matrix.matmul(&c.inverse).unwrap();
        assert!(prod.rel_error(&Matrix::identity(8)) < 1e-12);
    }

    #[test]
    fn planted_rank_has_that_rank() {
        let mut rng = rng_stream(11, 0);
        for r in [1, 3, 7] {
            let m = planted_rank(&mut rng, 12, 9, r);
            assert_eq!(crate::linalg::numerical_rank(&m, 1e-6).unwrap(), r);
        }
    }
}
