//! Seeded generators for random kets and density operators (Haar/Ginibre).

use rand::Rng;
use rand_distr::StandardNormal;

use super::layout::SubsystemLayout;
use super::matrix::{ComplexMatrix, C64};
use super::state::{DensityOperator, StateVector};

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-random normalized ket.
pub fn random_ket<R: Rng + ?Sized>(rng: &mut R, layout: SubsystemLayout) -> StateVector {
    let amps: Vec<C64> = (0..layout.total_dim()).map(|_| gaussian(rng)).collect();
    StateVector::new(amps, layout)
        .and_then(|s| s.normalized())
        .expect("gaussian vector is nonzero")
}

/// Ginibre-ensemble density operator of the given rank.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, layout: SubsystemLayout, rank: usize) -> DensityOperator {
    let d = layout.total_dim();
    let g =
        ComplexMatrix::from_vec(d, rank, (0..d * rank).map(|_| gaussian(rng)).collect()).expect("shape is consistent");
    let m = &g * &g.adjoint();
    let tr = m.trace().re;
    DensityOperator::from_parts_unchecked(m.hermitian_part().scale_real(1.0 / tr), layout)
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    let g = ComplexMatrix::from_vec(n, n, (0..n * n).map(|_| gaussian(rng)).collect()).expect("shape is consistent");
    g.hermitian_part()
}

pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> ComplexMatrix {
    let g = ComplexMatrix::from_vec(n, n, (0..n * n).map(|_| gaussian(rng)).collect()).expect("shape is consistent");
    (&g * &g.adjoint()).hermitian_part()
}
