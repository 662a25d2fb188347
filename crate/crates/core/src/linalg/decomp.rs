//! SVD and the rank / subspace notions built on it.
//!
//! Every rank decision in the crate goes through [`numerical_rank`]'s
//! relative rule `σ_i > rel_tol · σ_1`, including the orthonormal bases used
//! for principal angles and least-squares residuals.

use std::f64::consts::FRAC_PI_2;

use crate::error::{LabError, Result};
use crate::linalg::Matrix;

/// Default relative rank threshold (ε = 10⁻³ σ₁).
pub const DEFAULT_REL_TOL: f64 = 1e-3;

/// Thin SVD `M = U · diag(S) · Vᵀ` with `k = min(rows, cols)` triplets.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// `rows × k`, orthonormal columns.
    pub left_basis: Matrix,
    /// `cols × k`, orthonormal columns.
    pub right_basis: Matrix,
}

impl SvdResult {
    /// Number of singular values above `rel_tol · σ_1`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let s1 = self.singular_values.first().copied().unwrap_or(0.0);
        if s1 <= 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * s1)
            .count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let us = self
            .left_basis
            .scale_cols(&self.singular_values)
            .expect("svd factor shapes");
        us.matmul_t(&self.right_basis).expect("svd factor shapes")
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.is_empty() {
        return Err(LabError::Empty("svd"));
    }
    let (rows, cols) = m.shape();
    let a = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m.get(i, j));
    let decomposed = a
        .thin_svd()
        .map_err(|_| LabError::SvdNoConvergence { rows, cols })?;
    let (u, v) = (decomposed.U(), decomposed.V());
    let s = decomposed.S().column_vector();

    let k = rows.min(cols);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

    let singular_values = order.iter().map(|&i| s[i].max(0.0)).collect();
    let left_basis = Matrix::from_fn(rows, k, |i, j| u[(i, order[j])]);
    let right_basis = Matrix::from_fn(cols, k, |i, j| v[(i, order[j])]);
    Ok(SvdResult {
        singular_values,
        left_basis,
        right_basis,
    })
}

pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(m)?.singular_values)
}

/// Count of singular values `σ_i > rel_tol · σ_1`; zero for the zero matrix.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "rel_tol must be positive, got {rel_tol}"
        )));
    }
    if m.is_empty() || m.max_abs() == 0.0 {
        return Ok(0);
    }
    Ok(svd(m)?.rank(rel_tol))
}

/// Rank of the rows after subtracting the first row from all of them: the
/// dimension of the affine span of the row set.
pub fn affine_rank(m: &Matrix, rel_tol: f64) -> Result<usize> {
    if m.rows() == 0 {
        return Err(LabError::Empty("affine_rank"));
    }
    let first = m.row(0).to_vec();
    let neg: Vec<f64> = first.iter().map(|v| -v).collect();
    numerical_rank(&m.add_row_broadcast(&neg)?, rel_tol)
}

/// `(M − Mᵀ) / 2`.
pub fn antisymmetric_part(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(LabError::shape(
            "antisymmetric_part",
            format!("{}x{} is not square", m.rows(), m.cols()),
        ));
    }
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m.get(i, j) - m.get(j, i));
            out.set(i, j, a);
            out.set(j, i, -a);
        }
    }
    Ok(out)
}

/// `(M + Mᵀ) / 2`.
pub fn symmetric_part(m: &Matrix) -> Result<Matrix> {
    let a = antisymmetric_part(m)?;
    m.try_sub(&a)
}

/// Orthonormal basis (as columns) of the column space of `m`, truncated at
/// the relative rank threshold. Zero columns for a zero-dimensional span.
pub fn column_space_basis(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    if m.is_empty() || m.max_abs() == 0.0 {
        return Ok(Matrix::zeros(m.rows(), 0));
    }
    let s = svd(m)?;
    let r = s.rank(rel_tol);
    Ok(s.left_basis.col_block(0, r))
}

/// Orthonormal basis (as columns) of the row space of `m`.
pub fn row_space_basis(m: &Matrix, rel_tol: f64) -> Result<Matrix> {
    if m.is_empty() || m.max_abs() == 0.0 {
        return Ok(Matrix::zeros(m.cols(), 0));
    }
    let s = svd(m)?;
    let r = s.rank(rel_tol);
    Ok(s.right_basis.col_block(0, r))
}

/// Relative least-squares residual `‖v − Q Qᵀ v‖ / ‖v‖` of fitting `v` by the
/// orthonormal columns of `basis`. Returns 0 for a zero vector.
pub fn projection_residual(basis: &Matrix, v: &[f64]) -> Result<f64> {
    if basis.rows() != v.len() {
        return Err(LabError::shape(
            "projection_residual",
            format!("basis has {} rows, vector has {}", basis.rows(), v.len()),
        ));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let vm = Matrix::col_vector(v);
    let coeffs = basis.t_matmul(&vm)?;
    let proj = basis.matmul(&coeffs)?;
    let resid = vm.try_sub(&proj)?.frobenius_norm();
    Ok(resid / norm)
}

/// Principal angles (radians, non-decreasing) between the column spans of
/// `b1` and `b2`. Bases need not be orthonormal; each is orthonormalized
/// through its SVD left basis truncated at `tol`.
pub fn principal_angles(b1: &Matrix, b2: &Matrix, tol: f64) -> Result<Vec<f64>> {
    if b1.rows() != b2.rows() {
        return Err(LabError::shape(
            "principal_angles",
            format!("ambient dims {} vs {}", b1.rows(), b2.rows()),
        ));
    }
    let q1 = column_space_basis(b1, tol)?;
    let q2 = column_space_basis(b2, tol)?;
    if q1.cols() == 0 || q2.cols() == 0 {
        return Ok(Vec::new());
    }
    let k = q1.cols().min(q2.cols());
    let cross = q1.t_matmul(&q2)?;
    let sv = svd(&cross)?.singular_values;
    // Largest cosine ↔ smallest angle, so the order is already non-decreasing.
    Ok(sv
        .iter()
        .take(k)
        .map(|&c| c.clamp(0.0, 1.0).acos().clamp(0.0, FRAC_PI_2))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn diag3() -> Matrix {
        Matrix::from_diag(&[3.0, 2.0, 1.0])
    }

    #[test]
    fn svd_trivial_cases() {
        let s = svd(&Matrix::identity(3)).unwrap();
        for v in &s.singular_values {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let s = svd(&Matrix::from_diag(&[1.0, 3.0, 2.0])).unwrap();
        let expected = [3.0, 2.0, 1.0];
        for (a, b) in s.singular_values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(s.reconstruct().rel_error(&Matrix::from_diag(&[1.0, 3.0, 2.0])) < 1e-14);
        assert_eq!(svd(&diag3()).unwrap().singular_values.len(), 3);
        assert!(matches!(svd(&Matrix::zeros(0, 3)), Err(LabError::Empty(_))));
    }

    #[test]
    fn svd_wide_and_tall_shapes() {
        let m = Matrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64).sin());
        let s = svd(&m).unwrap();
        assert_eq!(s.left_basis.shape(), (3, 3));
        assert_eq!(s.right_basis.shape(), (7, 3));
        assert!(s.reconstruct().rel_error(&m) < 1e-13);
        let t = m.transpose();
        let st = svd(&t).unwrap();
        assert!(st.reconstruct().rel_error(&t) < 1e-13);
    }

    #[test]
    fn svd_of_rank_deficient_matrices_reconstructs() {
        // Rank-one and low-rank inputs, including transposes, where a
        // bidiagonal solver can return a wrong factorization.
        let m = crate::linalg::random::planted_rank(&mut crate::linalg::random::rng_stream(655129434770184987, 0), 5, 5, 1);
        for mm in [m.clone(), m.transpose()] {
            let s = svd(&mm).unwrap();
            assert!(s.reconstruct().rel_error(&mm) < 1e-13);
            assert!((s.singular_values[0] - m.frobenius_norm()).abs() < 1e-12 * m.frobenius_norm());
        }
        for seed in 0..500u64 {
            let mut rng = crate::linalg::random::rng_stream(seed, 3);
            let (r, c) = (2 + seed as usize % 9, 2 + (seed / 9) as usize % 9);
            let k = 1 + (seed as usize % r.min(c));
            let mm = crate::linalg::random::planted_rank(&mut rng, r, c, k).transpose();
            assert!(svd(&mm).unwrap().reconstruct().rel_error(&mm) < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&Matrix::identity(4), 1e-3).unwrap(), 4);
        let e1f1 = Matrix::from_fn(8, 8, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        assert_eq!(numerical_rank(&e1f1, 1e-3).unwrap(), 1);
        assert_eq!(numerical_rank(&Matrix::zeros(5, 5), 1e-3).unwrap(), 0);
        assert!(numerical_rank(&Matrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn affine_rank_examples() {
        let same = Matrix::filled(5, 3, 2.5);
        assert_eq!(affine_rank(&same, 1e-3).unwrap(), 0);
        let plane = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]])
            .unwrap();
        assert_eq!(affine_rank(&plane, 1e-3).unwrap(), 2);
        let c = [0.3, -7.0, 11.0];
        let line = Matrix::from_rows(&[
            c.to_vec(),
            vec![c[0] + 1.0, c[1], c[2]],
            vec![c[0] + 2.0, c[1], c[2]],
        ])
        .unwrap();
        assert_eq!(affine_rank(&line, 1e-3).unwrap(), 1);
    }

    #[test]
    fn antisymmetric_examples() {
        let sym = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 5.0]]).unwrap();
        assert_eq!(antisymmetric_part(&sym).unwrap(), Matrix::zeros(2, 2));
        let anti = Matrix::from_rows(&[vec![0.0, 3.0], vec![-3.0, 0.0]]).unwrap();
        assert_eq!(antisymmetric_part(&anti).unwrap(), anti);
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let expected = Matrix::from_rows(&[vec![0.0, 0.5], vec![-0.5, 0.0]]).unwrap();
        assert_eq!(antisymmetric_part(&m).unwrap(), expected);
        assert!(antisymmetric_part(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn principal_angle_examples() {
        let e12 = Matrix::from_fn(3, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let a = principal_angles(&e12, &e12, 1e-10).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|&t| t.abs() < 1e-7));

        let e1 = Matrix::col_vector(&[1.0, 0.0, 0.0]);
        let e2 = Matrix::col_vector(&[0.0, 1.0, 0.0]);
        let a = principal_angles(&e1, &e2, 1e-10).unwrap();
        assert!((a[0] - FRAC_PI_2).abs() < 1e-12);

        let diag = Matrix::col_vector(&[1.0 / SQRT_2, 1.0 / SQRT_2, 0.0]);
        let a = principal_angles(&e1, &diag, 1e-10).unwrap();
        assert!((a[0] - FRAC_PI_4).abs() < 1e-12);

        assert!(principal_angles(&e1, &Matrix::zeros(3, 1), 1e-10).unwrap().is_empty());
        assert!(principal_angles(&e1, &Matrix::zeros(2, 1), 1e-10).is_err());
    }

    #[test]
    fn projection_residual_basics() {
        let basis = Matrix::col_vector(&[1.0, 0.0]);
        assert_eq!(projection_residual(&basis, &[3.0, 0.0]).unwrap(), 0.0);
        assert!((projection_residual(&basis, &[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(projection_residual(&basis, &[0.0, 0.0]).unwrap(), 0.0);
    }
}
