//! Hermitian eigendecomposition and functions of PSD matrices.
//!
//! The decomposition itself is delegated to nalgebra's Householder
//! tridiagonalization + implicit QR; this module owns the conventions
//! (descending order, Hermiticity pre-check, PSD clamping).

use nalgebra::DMatrix;

use super::matrix::{ComplexMatrix, C64, ZERO};
use crate::{Error, Result};

/// Relative Hermiticity tolerance accepted by [`eig_hermitian`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Eigenvalues below this are clamped to zero by [`sqrt_psd`]; below
/// [`PSD_ERROR_FLOOR`] they are an error.
pub const PSD_CLAMP_FLOOR: f64 = -1e-9;
pub const PSD_ERROR_FLOOR: f64 = -1e-6;

#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Sorted in descending order.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        (0..self.vectors.rows()).map(|i| self.vectors[(i, k)]).collect()
    }

    /// `V f(Λ) V†`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let n = self.values.len();
        let mut out = ComplexMatrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * w;
                if vik == ZERO {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)].conj();
                }
            }
        }
        out
    }
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted descending.
pub fn eig_hermitian(m: &ComplexMatrix) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let dev = m.hermitian_deviation();
    if dev > HERMITIAN_TOL * m.max_abs().max(1.0) {
        return Err(Error::NotHermitian(dev));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(HermitianEigen {
            values: vec![],
            vectors: ComplexMatrix::zeros(0, 0),
        });
    }
    let h = m.hermitian_part();
    let nm = DMatrix::<C64>::from_row_slice(n, n, h.as_slice());
    let eig = nm.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, col)] = eig.eigenvectors[(i, k)];
        }
    }
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues only, descending.
pub fn eigvals_hermitian(m: &ComplexMatrix) -> Result<Vec<f64>> {
    eig_hermitian(m).map(|e| e.values)
}

/// Principal square root of a positive semidefinite matrix.
pub fn sqrt_psd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = eig_hermitian(m)?;
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min < PSD_ERROR_FLOOR {
        return Err(Error::NotPsd(min));
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Inverse square root of a positive definite matrix.
pub fn inv_sqrt_pd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = eig_hermitian(m)?;
    let max = eig.values.first().copied().unwrap_or(0.0);
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min <= max * 1e-13 || min <= 0.0 {
        return Err(Error::Numerical(format!(
            "matrix is singular (eigenvalue range {min:e}..{max:e})"
        )));
    }
    Ok(eig.reconstruct_with(|l| 1.0 / l.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::testutil::{random_hermitian, random_psd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_eigenvalues() {
        let e = eig_hermitian(&ComplexMatrix::identity(4)).unwrap();
        for v in e.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_sorted_descending() {
        let e = eig_hermitian(&ComplexMatrix::from_real_diagonal(&[3.0, 1.0, 2.0])).unwrap();
        let expected = [3.0, 2.0, 1.0];
        for (v, x) in e.values.iter().zip(expected) {
            assert!((v - x).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = ComplexMatrix::identity(2);
        m[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(eig_hermitian(&m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn reconstruction_residual_on_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 12, 36] {
            let m = random_hermitian(&mut rng, n);
            let e = eig_hermitian(&m).unwrap();
            let back = e.reconstruct_with(|l| l);
            let rel = (&back - &m).frobenius_norm() / m.frobenius_norm();
            assert!(rel <= 1e-9, "n={n} residual {rel}");
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn sqrt_of_diagonal() {
        let s = sqrt_psd(&ComplexMatrix::from_real_diagonal(&[4.0, 9.0])).unwrap();
        assert!((s[(0, 0)].re - 2.0).abs() < 1e-14);
        assert!((s[(1, 1)].re - 3.0).abs() < 1e-14);
        assert!(s[(0, 1)].norm() < 1e-14);
        let id = sqrt_psd(&ComplexMatrix::identity(3)).unwrap();
        assert!((&id - &ComplexMatrix::identity(3)).max_abs() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 4, 9, 16] {
            let m = random_psd(&mut rng, n);
            let s = sqrt_psd(&m).unwrap();
            let sq = &s * &s;
            assert!((&sq - &m).max_abs() < 1e-8, "n={n}");
        }
    }

    #[test]
    fn sqrt_clamps_tiny_negative_and_rejects_material_negative() {
        let tiny = ComplexMatrix::from_real_diagonal(&[1.0, -1e-10]);
        let s = sqrt_psd(&tiny).unwrap();
        assert_eq!(s[(1, 1)].re, 0.0);
        let bad = ComplexMatrix::from_real_diagonal(&[1.0, -1e-3]);
        assert!(matches!(sqrt_psd(&bad), Err(Error::NotPsd(_))));
    }
}
