use crate::error::{LabError, Result};
use crate::linalg::Matrix;

/// Central finite-difference Jacobian of `f` at `x0`.
///
/// Inputs and outputs are flattened row-major; entry `(o, i)` of the result
/// is `∂ vec(f)_o / ∂ vec(x)_i`.
pub fn jacobian_finite_diff<F>(f: F, x0: &Matrix, step: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<Matrix>,
{
    if !(step > 0.0) {
        return Err(LabError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let (rows, cols) = x0.shape();
    let in_len = rows * cols;
    let base = f(x0)?;
    let out_len = base.rows() * base.cols();
    let mut jac = Matrix::zeros(out_len, in_len);
    let mut probe = x0.clone();
    for i in 0..in_len {
        let orig = probe.as_slice()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        for (o, (p, m)) in plus.as_slice().iter().zip(minus.as_slice()).enumerate() {
            jac.set(o, i, (p - m) / (2.0 * step));
        }
    }
    Ok(jac)
}

/// Applies a flattened Jacobian to a perturbation shaped like the input,
/// returning a matrix with `out_rows` rows.
pub fn apply_jacobian(jac: &Matrix, delta: &Matrix, out_rows: usize) -> Result<Matrix> {
    let flat = Matrix::col_vector(delta.as_slice());
    let out = jac.matmul(&flat)?;
    let len = out.rows();
    if out_rows == 0 || len % out_rows != 0 {
        return Err(LabError::shape("apply_jacobian", format!("{len} outputs into {out_rows} rows")));
    }
    Matrix::new(out_rows, len / out_rows, out.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map() {
        let x0 = Matrix::from_fn(2, 3, |i, j| (i as f64) - 0.3 * j as f64);
        let j = jacobian_finite_diff(|x| Ok(x.clone()), &x0, 1e-4).unwrap();
        assert!(j.rel_error(&Matrix::identity(6)) < 1e-8);
    }

    #[test]
    fn linear_map() {
        // f(X) = X Φ, so vec(f) = (I ⊗ Φᵀ) vec(X) in row-major flattening.
        let phi = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let x0 = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let jac = jacobian_finite_diff(|x| x.matmul(&phi), &x0, 1e-3).unwrap();
        let mut expected = Matrix::zeros(6, 6);
        for r in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    expected.set(r * 2 + b, r * 2 + a, phi.get(a, b));
                }
            }
        }
        assert!(jac.rel_error(&expected) < 1e-6);
        let delta = Matrix::from_fn(3, 2, |i, j| 0.1 * (i as f64 - j as f64));
        let pred = apply_jacobian(&jac, &delta, 3).unwrap();
        assert!(pred.rel_error(&delta.matmul(&phi).unwrap()) < 1e-6);
    }

    #[test]
    fn rejects_bad_step() {
        assert!(jacobian_finite_diff(|x| Ok(x.clone()), &Matrix::identity(1), 0.0).is_err());
    }
}
