//! Least-squares and linear solves built on the SVD, plus a small complex
//! LU used by the eigensolver and spectral prediction.

use num_complex::Complex;

use crate::numerics::svd::svd;
use crate::numerics::{Matrix, NumericsError};
use crate::scalar::Scalar;

/// Relative singular-value cutoff for the pseudo-inverse.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Minimum-norm solution of `min ||A X - B||_F` via the SVD pseudo-inverse.
///
/// Singular values below `1e-12 * max(S)` are truncated, which keeps the
/// solve stable on rank-deficient snapshot matrices.
pub fn pinv_solve<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, NumericsError> {
    if a.rows() != b.rows() {
        return Err(NumericsError::ShapeMismatch {
            op: "pinv_solve",
            detail: format!(
                "A has {} rows but B has {} rows",
                a.rows(),
                b.rows()
            ),
        });
    }
    b.ensure_finite("pinv_solve rhs")?;
    let d = svd(a)?;
    let cutoff = d.s.first().copied().unwrap_or(T::zero()) * T::from_f64(PINV_RELATIVE_CUTOFF);

    // X = V * S^+ * U^T * B
    let mut utb = d.u.matmul_tn(b)?;
    for (j, &s) in d.s.iter().enumerate() {
        let inv = if s > cutoff { T::one() / s } else { T::zero() };
        for val in utb.row_mut(j) {
            *val *= inv;
        }
    }
    d.v.matmul(&utb)
}

/// Condition number estimate `max(S) / min(S)` from the SVD of `a`;
/// `None` when the smallest singular value is exactly zero.
pub fn condition_number<T: Scalar>(a: &Matrix<T>) -> Result<Option<T>, NumericsError> {
    let d = svd(a)?;
    let smax = d.s.first().copied().unwrap_or(T::zero());
    let smin = d.s.last().copied().unwrap_or(T::zero());
    if smin == T::zero() {
        Ok(None)
    } else {
        Ok(Some(smax / smin))
    }
}

/// Solve `M z = rhs` for a dense complex `n x n` matrix in row-major layout,
/// with partial pivoting.
pub fn lu_solve_complex<T: Scalar>(
    m: &[Complex<T>],
    n: usize,
    rhs: &[Complex<T>],
) -> Result<Vec<Complex<T>>, NumericsError> {
    debug_assert_eq!(m.len(), n * n);
    debug_assert_eq!(rhs.len(), n);
    let mut lu = m.to_vec();
    let mut x = rhs.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();

    for k in 0..n {
        // Partial pivot on modulus.
        let mut pivot_row = k;
        let mut pivot_mag = lu[perm[k] * n + k].norm_sqr();
        for i in (k + 1)..n {
            let mag = lu[perm[i] * n + k].norm_sqr();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = i;
            }
        }
        if pivot_mag == T::zero() {
            return Err(NumericsError::SingularSystem { dim: n });
        }
        perm.swap(k, pivot_row);
        let pk = perm[k];
        let pivot = lu[pk * n + k];
        for i in (k + 1)..n {
            let pi = perm[i];
            let factor = lu[pi * n + k] / pivot;
            lu[pi * n + k] = factor;
            for j in (k + 1)..n {
                let sub = factor * lu[pk * n + j];
                lu[pi * n + j] -= sub;
            }
        }
    }

    // Forward substitution on the permuted rhs.
    let mut y = vec![Complex::new(T::zero(), T::zero()); n];
    for i in 0..n {
        let mut acc = x[perm[i]];
        for j in 0..i {
            acc -= lu[perm[i] * n + j] * y[j];
        }
        y[i] = acc;
    }
    // Back substitution.
    for i in (0..n).rev() {
        let mut acc = y[i];
        for j in (i + 1)..n {
            acc -= lu[perm[i] * n + j] * x[j];
        }
        x[i] = acc / lu[perm[i] * n + i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let a = Matrix::<f64>::identity(3);
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let x = pinv_solve(&a, &b).unwrap();
        assert!(x.sub(&b).unwrap().frobenius_norm() < 1e-12);
    }

    // Normal equations for A = [1; 1], B = [1; 3]: A^T A x = A^T B
    // -> 2x = 4 -> x = 2.
    #[test]
    fn least_squares_mean() {
        let a = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let x = pinv_solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_gives_minimum_norm_zero() {
        let a = Matrix::<f64>::zeros(3, 2);
        let b = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let x = pinv_solve(&a, &b).unwrap();
        assert_eq!(x.shape(), (2, 1));
        assert!(x.frobenius_norm() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Matrix::<f64>::zeros(3, 2);
        let b = Matrix::<f64>::zeros(2, 1);
        assert!(pinv_solve(&a, &b).is_err());
    }

    #[test]
    fn complex_lu_solves() {
        let i = Complex::new(0.0, 1.0);
        let one = Complex::new(1.0, 0.0);
        // [[1, i], [-i, 2]] z = [1+i, 0]
        let m = vec![one, i, -i, Complex::new(2.0, 0.0)];
        let rhs = vec![Complex::new(1.0, 1.0), Complex::new(0.0, 0.0)];
        let z = lu_solve_complex(&m, 2, &rhs).unwrap();
        // Verify by substitution.
        let r0 = m[0] * z[0] + m[1] * z[1] - rhs[0];
        let r1 = m[2] * z[0] + m[3] * z[1] - rhs[1];
        assert!(r0.norm() < 1e-12 && r1.norm() < 1e-12);
    }
}
