//! Dense nonsymmetric eigensolver for small matrices.
//!
//! Householder reduction to Hessenberg form followed by Francis double-shift
//! QR iteration; eigenvectors are recovered by shifted inverse iteration in
//! complex arithmetic on the original matrix. Intended for the reduced
//! operators in this crate (n <= 512), not as a general-purpose LAPACK
//! replacement.

use num_complex::Complex;

use crate::numerics::solve::lu_solve_complex;
use crate::numerics::{Matrix, NumericsError};
use crate::scalar::Scalar;

/// Maximum dimension accepted by [`eig_small`].
pub const EIG_MAX_DIM: usize = 512;

/// Eigenvalues (and optionally eigenvectors) of a real square matrix.
///
/// Conjugate pairs appear adjacently (positive imaginary part first) and the
/// whole spectrum is sorted by descending modulus. `eigenvectors[j]` is the
/// unit-norm eigenvector for `eigenvalues[j]`.
#[derive(Debug, Clone)]
pub struct ComplexSpectrum<T> {
    pub eigenvalues: Vec<Complex<T>>,
    pub eigenvectors: Option<Vec<Vec<Complex<T>>>>,
}

impl<T: Scalar> ComplexSpectrum<T> {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Largest eigenvalue modulus.
    pub fn spectral_radius(&self) -> T {
        self.eigenvalues
            .first()
            .map_or(T::zero(), |l| l.norm())
    }
}

/// Eigendecomposition of a square matrix with `n <= 512`.
pub fn eig_small<T: Scalar>(a: &Matrix<T>) -> Result<ComplexSpectrum<T>, NumericsError> {
    eig_impl(a, true)
}

/// Eigenvalues only; skips the inverse-iteration pass.
pub fn eigvals_small<T: Scalar>(a: &Matrix<T>) -> Result<ComplexSpectrum<T>, NumericsError> {
    eig_impl(a, false)
}

fn eig_impl<T: Scalar>(
    a: &Matrix<T>,
    want_vectors: bool,
) -> Result<ComplexSpectrum<T>, NumericsError> {
    if a.rows() != a.cols() {
        return Err(NumericsError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if a.rows() > EIG_MAX_DIM {
        return Err(NumericsError::ShapeMismatch {
            op: "eig_small",
            detail: format!("dimension {} exceeds the {EIG_MAX_DIM} limit", a.rows()),
        });
    }
    a.ensure_finite("eig input")?;
    let n = a.rows();
    if n == 0 {
        return Ok(ComplexSpectrum {
            eigenvalues: vec![],
            eigenvectors: want_vectors.then(Vec::new),
        });
    }

    let mut h = hessenberg(a);
    let mut eigenvalues = francis_qr(&mut h)?;

    // Sort by descending modulus; conjugates share (modulus, re), so the
    // final tie-break on the sign of im keeps each pair adjacent with the
    // positive-imaginary member first.
    eigenvalues.sort_by(|x, y| {
        y.norm()
            .partial_cmp(&x.norm())
            .unwrap()
            .then(y.re.partial_cmp(&x.re).unwrap())
            .then(y.im.partial_cmp(&x.im).unwrap())
    });

    let eigenvectors = if want_vectors {
        Some(
            eigenvalues
                .iter()
                .enumerate()
                .map(|(idx, &l)| inverse_iteration(a, l, idx))
                .collect(),
        )
    } else {
        None
    };

    Ok(ComplexSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Householder reduction to upper Hessenberg form (similarity transform).
fn hessenberg<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let n = a.rows();
    let mut h = a.clone();
    for k in 0..n.saturating_sub(2) {
        let mut norm2 = T::zero();
        for i in (k + 1)..n {
            norm2 += h[(i, k)] * h[(i, k)];
        }
        let norm = norm2.sqrt();
        if norm == T::zero() {
            continue;
        }
        let alpha = if h[(k + 1, k)] >= T::zero() { -norm } else { norm };
        let mut v = vec![T::zero(); n - k - 1];
        v[0] = h[(k + 1, k)] - alpha;
        for i in (k + 2)..n {
            v[i - k - 1] = h[(i, k)];
        }
        let vnorm2 = v
            .iter()
            .map(|&x| x * x)
            .fold(T::zero(), |acc, x| acc + x);
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::from_f64(2.0);
        // H <- P H with P = I - 2 v v^T / v^T v acting on rows k+1..
        for j in 0..n {
            let mut dot = T::zero();
            for i in (k + 1)..n {
                dot += v[i - k - 1] * h[(i, j)];
            }
            let f = two * dot / vnorm2;
            for i in (k + 1)..n {
                h[(i, j)] = h[(i, j)] - f * v[i - k - 1];
            }
        }
        // H <- H P acting on columns k+1..
        for i in 0..n {
            let mut dot = T::zero();
            for j in (k + 1)..n {
                dot += h[(i, j)] * v[j - k - 1];
            }
            let f = two * dot / vnorm2;
            for j in (k + 1)..n {
                h[(i, j)] = h[(i, j)] - f * v[j - k - 1];
            }
        }
    }
    h
}

/// Francis double-shift QR on a Hessenberg matrix; returns all eigenvalues.
fn francis_qr<T: Scalar>(h: &mut Matrix<T>) -> Result<Vec<Complex<T>>, NumericsError> {
    let n = h.rows();
    let mut eigen: Vec<Complex<T>> = Vec::with_capacity(n);
    let mut hi = n - 1; // active block is rows/cols lo..=hi
    let mut iterations_since_deflate = 0usize;
    let mut total_iterations = 0usize;
    let max_total = 60 * n.max(1);
    let eps = T::epsilon();

    'outer: loop {
        // Deflate small subdiagonals.
        loop {
            let mut lo = hi;
            while lo > 0 {
                let s = h[(lo - 1, lo - 1)].abs() + h[(lo, lo)].abs();
                let s = if s == T::zero() { T::one() } else { s };
                if h[(lo, lo - 1)].abs() <= eps * s {
                    h[(lo, lo - 1)] = T::zero();
                    break;
                }
                lo -= 1;
            }

            if lo == hi {
                // 1x1 block.
                eigen.push(Complex::new(h[(hi, hi)], T::zero()));
                if hi == 0 {
                    break 'outer;
                }
                hi -= 1;
                iterations_since_deflate = 0;
                continue;
            }
            if lo + 1 == hi {
                // 2x2 block: solve its characteristic polynomial.
                let (l1, l2) = eig2x2(h[(lo, lo)], h[(lo, lo + 1)], h[(lo + 1, lo)], h[(lo + 1, lo + 1)]);
                eigen.push(l1);
                eigen.push(l2);
                if lo == 0 {
                    break 'outer;
                }
                hi = lo - 1;
                iterations_since_deflate = 0;
                continue;
            }

            // No deflation available: run one double-shift sweep on lo..=hi.
            total_iterations += 1;
            iterations_since_deflate += 1;
            if total_iterations > max_total {
                return Err(NumericsError::EigNoConvergence { dim: n });
            }

            let (mut trace, mut det);
            {
                let a = h[(hi - 1, hi - 1)];
                let b = h[(hi - 1, hi)];
                let c = h[(hi, hi - 1)];
                let d = h[(hi, hi)];
                trace = a + d;
                det = a * d - b * c;
            }
            // Ad-hoc exceptional shift to break rare cycling.
            if iterations_since_deflate % 11 == 10 {
                let s = h[(hi, hi - 1)].abs() + h[(hi - 1, hi - 2)].abs();
                trace = T::from_f64(1.5) * s;
                det = s * s;
            }
            double_shift_sweep(h, lo, hi, trace, det);
        }
    }

    Ok(eigen)
}

/// Eigenvalues of a real 2x2 block.
fn eig2x2<T: Scalar>(a: T, b: T, c: T, d: T) -> (Complex<T>, Complex<T>) {
    let half = T::from_f64(0.5);
    let mean = (a + d) * half;
    let disc = (a - d) * (a - d) * half * half + b * c;
    if disc >= T::zero() {
        let root = disc.sqrt();
        (
            Complex::new(mean + root, T::zero()),
            Complex::new(mean - root, T::zero()),
        )
    } else {
        let root = (-disc).sqrt();
        (Complex::new(mean, root), Complex::new(mean, -root))
    }
}

/// One implicit double-shift bulge chase on the active block `lo..=hi`.
fn double_shift_sweep<T: Scalar>(h: &mut Matrix<T>, lo: usize, hi: usize, trace: T, det: T) {
    let n = h.rows();
    // First column of (H - l1)(H - l2) restricted to the leading 3x1 block.
    let mut x = h[(lo, lo)] * h[(lo, lo)] + h[(lo, lo + 1)] * h[(lo + 1, lo)]
        - trace * h[(lo, lo)]
        + det;
    let mut y = h[(lo + 1, lo)] * (h[(lo, lo)] + h[(lo + 1, lo + 1)] - trace);
    let mut z = if lo + 2 <= hi {
        h[(lo + 2, lo + 1)] * h[(lo + 1, lo)]
    } else {
        T::zero()
    };

    for k in lo..hi.saturating_sub(1) {
        // Householder reflector annihilating (y, z) against x.
        let norm = (x * x + y * y + z * z).sqrt();
        if norm == T::zero() {
            // Nothing to chase at this column; advance the bulge.
            let kk = k + 1;
            x = h[(kk, k)];
            y = h[(kk + 1, k)];
            z = if kk + 2 <= hi { h[(kk + 2, k)] } else { T::zero() };
            continue;
        }
        let alpha = if x >= T::zero() { -norm } else { norm };
        let v0 = x - alpha;
        let v1 = y;
        let v2 = z;
        let vnorm2 = v0 * v0 + v1 * v1 + v2 * v2;
        if vnorm2 > T::zero() {
            let two = T::from_f64(2.0);
            let r_end = (k + 3).min(hi + 1);
            // Apply from the left to rows k..r_end.
            let col_start = k.saturating_sub(1).max(lo);
            for j in col_start..n {
                let mut dot = v0 * h[(k, j)] + v1 * h[(k + 1, j)];
                if k + 2 < r_end {
                    dot += v2 * h[(k + 2, j)];
                }
                let f = two * dot / vnorm2;
                h[(k, j)] = h[(k, j)] - f * v0;
                h[(k + 1, j)] = h[(k + 1, j)] - f * v1;
                if k + 2 < r_end {
                    h[(k + 2, j)] = h[(k + 2, j)] - f * v2;
                }
            }
            // Apply from the right to columns k..r_end.
            let row_end = (k + 4).min(hi + 1);
            for i in 0..row_end {
                let mut dot = v0 * h[(i, k)] + v1 * h[(i, k + 1)];
                if k + 2 < r_end {
                    dot += v2 * h[(i, k + 2)];
                }
                let f = two * dot / vnorm2;
                h[(i, k)] = h[(i, k)] - f * v0;
                h[(i, k + 1)] = h[(i, k + 1)] - f * v1;
                if k + 2 < r_end {
                    h[(i, k + 2)] = h[(i, k + 2)] - f * v2;
                }
            }
        }
        // Next bulge column.
        x = h[(k + 1, k)];
        y = h[(k + 2, k)];
        z = if k + 3 <= hi { h[(k + 3, k)] } else { T::zero() };
    }

    // Final 2x1 Givens-like reflector at the bottom of the block.
    let k = hi - 1;
    let norm = (x * x + y * y).sqrt();
    if norm != T::zero() {
        let alpha = if x >= T::zero() { -norm } else { norm };
        let v0 = x - alpha;
        let v1 = y;
        let vnorm2 = v0 * v0 + v1 * v1;
        if vnorm2 > T::zero() {
            let two = T::from_f64(2.0);
            let col_start = k.saturating_sub(1).max(lo);
            for j in col_start..n {
                let dot = v0 * h[(k, j)] + v1 * h[(k + 1, j)];
                let f = two * dot / vnorm2;
                h[(k, j)] = h[(k, j)] - f * v0;
                h[(k + 1, j)] = h[(k + 1, j)] - f * v1;
            }
            for i in 0..(hi + 1) {
                let dot = v0 * h[(i, k)] + v1 * h[(i, k + 1)];
                let f = two * dot / vnorm2;
                h[(i, k)] = h[(i, k)] - f * v0;
                h[(i, k + 1)] = h[(i, k + 1)] - f * v1;
            }
        }
    }

    // Clean below-subdiagonal fill-in introduced by the 3-wide reflectors.
    for i in (lo + 2)..=hi {
        for j in lo..(i - 1) {
            h[(i, j)] = T::zero();
        }
    }
}

/// Shifted inverse iteration for one eigenvector in complex arithmetic.
///
/// The start vector depends on the eigenvalue index so repeated eigenvalues
/// still yield linearly independent vectors.
fn inverse_iteration<T: Scalar>(a: &Matrix<T>, lambda: Complex<T>, idx: usize) -> Vec<Complex<T>> {
    let n = a.rows();
    let anorm = a.frobenius_norm();
    let shift_eps = T::from_f64(1e-10) * (anorm + T::one());

    // Deterministic, direction-rich start vector.
    let mut v: Vec<Complex<T>> = (0..n)
        .map(|i| {
            let mix = (i + idx * 7 + 1) * 2654435761 % 1024;
            Complex::new(
                T::from_f64(1.0 + (mix as f64) / 1024.0),
                T::from_f64(0.1 * (((i * 61 + idx * 13) % 97) as f64) / 97.0),
            )
        })
        .collect();
    normalize(&mut v);

    // (A - (lambda + eps) I) as a complex matrix.
    let shifted = Complex::new(lambda.re + shift_eps, lambda.im + shift_eps);
    let mut m = vec![Complex::new(T::zero(), T::zero()); n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = Complex::new(a[(i, j)], T::zero());
        }
        m[i * n + i] -= shifted;
    }

    for _ in 0..3 {
        match lu_solve_complex(&m, n, &v) {
            Ok(mut w) => {
                normalize(&mut w);
                v = w;
            }
            Err(_) => break,
        }
    }
    // Fix phase: make the largest component real positive (keeps conjugate
    // pairs recognisably conjugate).
    let mut max_idx = 0;
    let mut max_norm = T::zero();
    for (i, x) in v.iter().enumerate() {
        if x.norm() > max_norm {
            max_norm = x.norm();
            max_idx = i;
        }
    }
    if max_norm > T::zero() {
        let phase = v[max_idx] / Complex::new(max_norm, T::zero());
        let inv_phase = phase.conj();
        for x in v.iter_mut() {
            *x *= inv_phase;
        }
    }
    v
}

fn normalize<T: Scalar>(v: &mut [Complex<T>]) {
    let norm = v
        .iter()
        .map(|x| x.norm_sqr())
        .fold(T::zero(), |acc, x| acc + x)
        .sqrt();
    if norm > T::zero() {
        for x in v.iter_mut() {
            *x = Complex::new(x.re / norm, x.im / norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &Matrix<f64>, l: Complex<f64>, v: &[Complex<f64>]) -> f64 {
        let n = a.rows();
        let mut r = 0.0f64;
        for i in 0..n {
            let mut av = Complex::new(0.0, 0.0);
            for j in 0..n {
                av += Complex::new(a[(i, j)], 0.0) * v[j];
            }
            r += (av - l * v[i]).norm_sqr();
        }
        r.sqrt()
    }

    #[test]
    fn diagonal_spectrum() {
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let s = eig_small(&a).unwrap();
        assert!((s.eigenvalues[0] - Complex::new(3.0, 0.0)).norm() < 1e-12);
        assert!((s.eigenvalues[1] - Complex::new(2.0, 0.0)).norm() < 1e-12);
    }

    // Characteristic polynomial of the rotation generator is l^2 + 1 = 0.
    #[test]
    fn rotation_has_imaginary_pair() {
        let a = Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let s = eig_small(&a).unwrap();
        assert!((s.eigenvalues[0] - Complex::new(0.0, 1.0)).norm() < 1e-12);
        assert!((s.eigenvalues[1] - Complex::new(0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn contraction_diagonal() {
        let a = Matrix::from_rows(&[vec![0.9, 0.0], vec![0.0, 0.5]]).unwrap();
        let s = eig_small(&a).unwrap();
        assert!((s.eigenvalues[0].re - 0.9).abs() < 1e-12);
        assert!((s.eigenvalues[1].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eigenvector_residuals_small() {
        let a = Matrix::<f64>::from_fn(6, 6, |i, j| {
            (((i * 13 + j * 7) % 10) as f64 - 4.5) / 5.0
        });
        let s = eig_small(&a).unwrap();
        let vs = s.eigenvectors.as_ref().unwrap();
        let anorm = a.frobenius_norm();
        for (l, v) in s.eigenvalues.iter().zip(vs) {
            assert!(
                residual(&a, *l, v) <= 1e-8 * anorm,
                "residual too large for eigenvalue {l}"
            );
        }
    }

    #[test]
    fn rejects_non_square() {
        let a = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(
            eig_small(&a),
            Err(NumericsError::NotSquare { .. })
        ));
    }
}
