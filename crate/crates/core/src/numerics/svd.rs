//! Singular value decomposition via one-sided Jacobi rotations.
//!
//! Tall inputs are first reduced with a Householder QR so the Jacobi sweeps
//! only ever run on a square `cols x cols` factor. One-sided Jacobi is slow
//! asymptotically but has excellent relative accuracy, which is what the
//! reconstruction contract (`1e-10` relative Frobenius error) needs.

use crate::numerics::{Matrix, NumericsError};
use crate::scalar::Scalar;

/// Thin SVD `A = U * diag(S) * V^T` with `U: m x k`, `S: k`, `V: n x k`
/// where `k = min(m, n)`. Singular values are non-negative and descending;
/// `U` and `V` have orthonormal columns (null directions are completed to an
/// orthonormal basis).
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<Svd<T>, NumericsError> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "svd",
            detail: "empty matrix".into(),
        });
    }
    a.ensure_finite("svd input")?;

    if a.rows() < a.cols() {
        // Decompose the transpose and swap the factors.
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }

    // Tall case: QR first when it pays off, then Jacobi on the square factor.
    if a.rows() > a.cols() * 2 {
        let (q, r) = householder_qr_thin(a);
        let inner = jacobi_svd(&r);
        let u = q.matmul(&inner.u)?;
        return Ok(Svd {
            u,
            s: inner.s,
            v: inner.v,
        });
    }

    Ok(jacobi_svd(a))
}

/// One-sided Jacobi on `A` (m >= n): rotate column pairs until mutually
/// orthogonal, then read off `S` as column norms and `U` as normalised
/// columns.
fn jacobi_svd<T: Scalar>(a: &Matrix<T>) -> Svd<T> {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);

    let mut b = a.clone();
    let mut v = Matrix::<T>::identity(n);
    let eps = T::epsilon();
    let max_sweeps = 60;

    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = T::zero();
                let mut aqq = T::zero();
                let mut apq = T::zero();
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                if apq.abs() <= eps * (app * aqq).sqrt() || apq == T::zero() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (T::from_f64(2.0) * apq);
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    b[(i, p)] = c * bp - s * bq;
                    b[(i, q)] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms -> singular values; normalised columns -> U.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = (0..n)
        .map(|j| {
            (0..m)
                .map(|i| b[(i, j)] * b[(i, j)])
                .fold(T::zero(), |acc, x| acc + x)
                .sqrt()
        })
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let mut s = Vec::with_capacity(n);
    let mut u = Matrix::<T>::zeros(m, n);
    let mut v_sorted = Matrix::<T>::zeros(n, n);
    let smax = order.first().map_or(T::zero(), |&j| norms[j]);
    // Below eps * smax the column direction is round-off noise; replace it
    // with a completed basis vector so U stays orthonormal.
    let null_cut = smax * T::epsilon();
    let mut null_cols = Vec::new();
    for (out_j, &j) in order.iter().enumerate() {
        let sj = norms[j];
        s.push(sj);
        for i in 0..n {
            v_sorted[(i, out_j)] = v[(i, j)];
        }
        if sj > null_cut && sj > T::zero() {
            for i in 0..m {
                u[(i, out_j)] = b[(i, j)] / sj;
            }
        } else {
            null_cols.push(out_j);
        }
    }

    // Complete U with orthonormal vectors for exactly-zero singular values.
    if !null_cols.is_empty() {
        complete_orthonormal(&mut u, &null_cols);
    }

    Svd { u, s, v: v_sorted }
}

/// Fill the given zero columns of `u` with unit vectors orthogonal to every
/// other column (modified Gram-Schmidt against the canonical basis).
fn complete_orthonormal<T: Scalar>(u: &mut Matrix<T>, null_cols: &[usize]) {
    let m = u.rows();
    let n = u.cols();
    let mut next_axis = 0usize;
    for &jc in null_cols {
        let mut placed = false;
        while next_axis < m && !placed {
            let mut cand = vec![T::zero(); m];
            cand[next_axis] = T::one();
            next_axis += 1;
            for j in 0..n {
                if j == jc {
                    continue;
                }
                let dot = (0..m)
                    .map(|i| u[(i, j)] * cand[i])
                    .fold(T::zero(), |acc, x| acc + x);
                for (i, c) in cand.iter_mut().enumerate() {
                    *c = *c - dot * u[(i, j)];
                }
            }
            let norm = cand
                .iter()
                .map(|&x| x * x)
                .fold(T::zero(), |acc, x| acc + x)
                .sqrt();
            if norm > T::from_f64(1e-6) {
                for (i, c) in cand.iter().enumerate() {
                    u[(i, jc)] = *c / norm;
                }
                placed = true;
            }
        }
    }
}

/// Thin Householder QR: `A = Q * R` with `Q: m x n` (orthonormal columns)
/// and `R: n x n` upper triangular.
pub fn householder_qr_thin<T: Scalar>(a: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);
    let mut r = a.clone();
    // Householder vectors stored per reflection.
    let mut vs: Vec<Vec<T>> = Vec::with_capacity(n);

    for k in 0..n {
        let mut norm = T::zero();
        for i in k..m {
            norm += r[(i, k)] * r[(i, k)];
        }
        let norm = norm.sqrt();
        let mut v = vec![T::zero(); m - k];
        if norm == T::zero() {
            vs.push(v);
            continue;
        }
        let alpha = if r[(k, k)] >= T::zero() { -norm } else { norm };
        v[0] = r[(k, k)] - alpha;
        for i in (k + 1)..m {
            v[i - k] = r[(i, k)];
        }
        let vnorm2 = v
            .iter()
            .map(|&x| x * x)
            .fold(T::zero(), |acc, x| acc + x);
        if vnorm2 == T::zero() {
            vs.push(v);
            continue;
        }
        // Apply H = I - 2 v v^T / (v^T v) to the trailing block of R.
        for j in k..n {
            let mut dot = T::zero();
            for i in k..m {
                dot += v[i - k] * r[(i, j)];
            }
            let f = T::from_f64(2.0) * dot / vnorm2;
            for i in k..m {
                r[(i, j)] = r[(i, j)] - f * v[i - k];
            }
        }
        vs.push(v);
    }

    // Accumulate Q by applying the reflections to the identity's first n
    // columns, in reverse order.
    let mut q = Matrix::<T>::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = T::one();
    }
    for k in (0..n).rev() {
        let v = &vs[k];
        let vnorm2 = v
            .iter()
            .map(|&x| x * x)
            .fold(T::zero(), |acc, x| acc + x);
        if vnorm2 == T::zero() {
            continue;
        }
        for j in 0..n {
            let mut dot = T::zero();
            for i in k..m {
                dot += v[i - k] * q[(i, j)];
            }
            let f = T::from_f64(2.0) * dot / vnorm2;
            for i in k..m {
                q[(i, j)] = q[(i, j)] - f * v[i - k];
            }
        }
    }

    // Zero the strictly-lower part of the square R we return.
    let mut r_sq = Matrix::<T>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            r_sq[(i, j)] = r[(i, j)];
        }
    }
    (q, r_sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(d: &Svd<f64>) -> Matrix<f64> {
        let k = d.s.len();
        let mut us = d.u.clone();
        for j in 0..k {
            for i in 0..us.rows() {
                us[(i, j)] *= d.s[j];
            }
        }
        us.matmul_nt(&d.v).unwrap()
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let d = svd(&a).unwrap();
        assert!((d.s[0] - 3.0).abs() < 1e-12);
        assert!((d.s[1] - 1.0).abs() < 1e-12);
    }

    // Singular values of [[0,2],[0,0]] are the square roots of the
    // eigenvalues of A^T A = [[0,0],[0,4]]: 2 and 0.
    #[test]
    fn nilpotent_matrix() {
        let a = Matrix::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let d = svd(&a).unwrap();
        assert!((d.s[0] - 2.0).abs() < 1e-12);
        assert!(d.s[1].abs() < 1e-12);
        let rec = reconstruct(&d);
        assert!(rec.sub(&a).unwrap().frobenius_norm() < 1e-12);
        // U must stay orthonormal even with a zero singular value.
        let utu = d.u.matmul_tn(&d.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let a = Matrix::from_vec(1, 2, vec![1.0, f64::INFINITY]).unwrap();
        assert!(svd(&a).is_err());
    }

    #[test]
    fn qr_reconstructs() {
        let a = Matrix::<f64>::from_fn(9, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let (q, r) = householder_qr_thin(&a);
        let qr = q.matmul(&r).unwrap();
        assert!(qr.sub(&a).unwrap().frobenius_norm() < 1e-12 * (1.0 + a.frobenius_norm()));
        let qtq = q.matmul_tn(&q).unwrap();
        assert!(qtq.sub(&Matrix::identity(3)).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn wide_matrix_roundtrip() {
        let a = Matrix::<f64>::from_fn(3, 7, |i, j| (i as f64 - 1.2) * (j as f64 + 0.4));
        let d = svd(&a).unwrap();
        let rec = reconstruct(&d);
        assert!(rec.sub(&a).unwrap().frobenius_norm() <= 1e-10 * a.frobenius_norm());
    }
}
