#![allow(dead_code)]

use hyperent::qcore::{ComplexMatrix, DensityOperator, SubsystemLayout, C64};
use proptest::test_runner::{Config, RngSeed};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Proptest config with a fixed seed so every run draws the same cases.
pub fn seeded(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn qubits() -> SubsystemLayout {
    SubsystemLayout::from_dims(&[2, 2], &[hyperent::qcore::Party::A, hyperent::qcore::Party::B]).unwrap()
}

/// Hermitian within 1e-10, unit trace within 1e-10, min eigenvalue ≥ −1e-9.
pub fn assert_density(rho: &DensityOperator) {
    let m = rho.matrix();
    assert!(
        m.hermitian_deviation() <= 1e-10,
        "hermitian deviation {}",
        m.hermitian_deviation()
    );
    assert!((m.trace().re - 1.0).abs() <= 1e-10, "trace {}", m.trace());
    assert!(m.trace().im.abs() <= 1e-10);
    let min = rho.eigenvalues().unwrap().into_iter().fold(f64::INFINITY, f64::min);
    assert!(min >= -1e-9, "min eigenvalue {min}");
}

pub fn max_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    (a - b).max_abs()
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
