//! Simulation and reconstruction toolkit for photon pairs hyperentangled in
//! polarization, orbital-angular-momentum spatial mode and energy-time.
//!
//! * [`qcore`]: dense complex linear algebra over multipartite layouts.
//! * [`analyzers`]: per-photon analysis chains and joint projectors.
//! * [`source`]: hyperentangled states, noise channels and count simulation.
//! * [`metrics`]: tangle, linear entropy, fidelity, negativity, visibility.
//! * [`bell`]: CHSH parameters from states or counts.
//! * [`tomography`]: linear-inversion and maximum-likelihood reconstruction.

pub mod analyzers;
pub mod bell;
mod error;
pub mod metrics;
pub mod qcore;
pub mod source;
pub mod tomography;

pub use error::{Error, ErrorKind, Result};
