//! Dense complex linear algebra over multipartite Hilbert spaces.
//!
//! Basis ordering is global: polarization `(H, V)`, spatial `(l, g, r)` (or
//! `(l, r)` when truncated to two modes), energy-time `(s, f)`. Joint indices
//! list photon A before photon B and, within a photon, polarization, spatial
//! mode, then energy-time.

mod eigen;
pub mod json;
mod layout;
mod matrix;
pub mod random;
mod state;

pub use eigen::{
    eig_hermitian, eigvals_hermitian, inv_sqrt_pd, sqrt_psd, HermitianEigen, PSD_CLAMP_FLOOR, PSD_ERROR_FLOOR,
};
pub use layout::{Dof, Party, Subsystem, SubsystemLayout};
pub use matrix::{inner, kron_vec, norm, normalize, ComplexMatrix, C64, I, ONE, ZERO};
pub use state::{embed_local, DensityOperator, StateVector, Tolerances};
