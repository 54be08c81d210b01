//! Entanglement and mixedness measures.
//!
//! Linear entropy is normalized as `d/(d − 1)·(1 − Tr ρ²)` so that it is 1 for
//! the maximally mixed state in any dimension; at `d = 4` this is the familiar
//! `4/3` factor. Negativity is `‖ρ^{T_B}‖₁ − 1`, which runs from 0 to `d − 1`
//! for a `d ⊗ d` system.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::qcore::{
    eig_hermitian, eigvals_hermitian, ComplexMatrix, DensityOperator, Party, C64, PSD_CLAMP_FLOOR, PSD_ERROR_FLOOR,
};
use crate::{Error, Result};

/// Eigenvalues of a PSD matrix with round-off negatives in `[−1e-9, 0)`
/// clamped to zero.
fn psd_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let ev = eigvals_hermitian(m)?;
    let scale = ev.first().copied().unwrap_or(0.0).abs().max(1.0);
    if let Some(&min) = ev.last() {
        if min < PSD_CLAMP_FLOOR * scale {
            return Err(Error::NotPsd(min));
        }
    }
    Ok(ev.into_iter().map(|l| l.max(0.0)).collect())
}

/// Eigenvalues below this fraction of the largest (per unit dimension) are
/// round-off from rank-deficient inputs. They are zeroed before taking square
/// roots, where `√ε ≈ 1e-8` would otherwise leak into the result.
const RANK_CUTOFF: f64 = 10.0 * f64::EPSILON;

fn cutoff(values: &[f64]) -> f64 {
    RANK_CUTOFF * values.len() as f64 * values.first().copied().unwrap_or(0.0).max(0.0)
}

/// Square roots of the PSD eigenvalues, with sub-cutoff values set to zero.
fn root_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let ev = psd_eigenvalues(m)?;
    let cut = cutoff(&ev);
    Ok(ev.into_iter().map(|l| if l <= cut { 0.0 } else { l.sqrt() }).collect())
}

/// `√m` with the same rank truncation as [`root_eigenvalues`].
fn rank_truncated_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = eig_hermitian(m)?;
    if let Some(&min) = eig.values.last() {
        if min < PSD_ERROR_FLOOR {
            return Err(Error::NotPsd(min));
        }
    }
    let cut = cutoff(&eig.values);
    Ok(eig.reconstruct_with(|l| if l <= cut { 0.0 } else { l.sqrt() }))
}

fn require_two_qubits(rho: &DensityOperator) -> Result<()> {
    let layout = rho.layout();
    if layout.dims() != [2, 2] || layout.parties() != [Party::A, Party::B] {
        return Err(Error::LayoutMismatch(format!(
            "tangle needs a two-qubit A|B layout, got {layout}"
        )));
    }
    Ok(())
}

/// Wootters concurrence of a two-qubit state.
pub fn concurrence(rho: &DensityOperator) -> Result<f64> {
    require_two_qubits(rho)?;
    // σy⊗σy is real with entries ±1 on the anti-diagonal: (σy⊗σy)_{i,3−i} = [−1, 1, 1, −1]
    let sign = [-1.0, 1.0, 1.0, -1.0];
    let conj = rho.matrix().conj();
    let mut tilde = ComplexMatrix::zeros(4, 4);
    for i in 0..4 {
        for j in 0..4 {
            tilde[(i, j)] = conj[(3 - i, 3 - j)] * (sign[i] * sign[j]);
        }
    }
    let s = rank_truncated_sqrt(rho.matrix())?;
    let m = &(&s * &tilde) * &s;
    let lam = root_eigenvalues(&m.hermitian_part())?;
    Ok((lam[0] - lam[1] - lam[2] - lam[3]).max(0.0))
}

/// Squared concurrence.
pub fn tangle(rho: &DensityOperator) -> Result<f64> {
    concurrence(rho).map(|c| c * c)
}

pub fn purity(rho: &DensityOperator) -> f64 {
    rho.purity()
}

pub fn linear_entropy(rho: &DensityOperator) -> f64 {
    let d = rho.dim() as f64;
    if d <= 1.0 {
        return 0.0;
    }
    (d / (d - 1.0) * (1.0 - rho.purity())).clamp(0.0, 1.0)
}

/// Uhlmann fidelity `(Tr √(√σ ρ √σ))²`.
pub fn fidelity(rho: &DensityOperator, target: &DensityOperator) -> Result<f64> {
    if rho.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fidelity between dimensions {} and {}",
            rho.dim(),
            target.dim()
        )));
    }
    let s = rank_truncated_sqrt(target.matrix())?;
    let m = (&(&s * rho.matrix()) * &s).hermitian_part();
    let root_sum: f64 = root_eigenvalues(&m)?.into_iter().sum();
    Ok((root_sum * root_sum).clamp(0.0, 1.0))
}

/// `⟨ψ|ρ|ψ⟩` for a normalized target ket.
pub fn fidelity_pure(rho: &DensityOperator, target: &[C64]) -> Result<f64> {
    if target.len() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "target ket of length {} for dimension {}",
            target.len(),
            rho.dim()
        )));
    }
    Ok(rho.ket_expectation(target).clamp(0.0, 1.0))
}

/// `‖ρ^{T_B}‖₁ − 1` across the photon A | photon B split.
pub fn negativity(rho: &DensityOperator) -> Result<f64> {
    let layout = rho.layout();
    if layout.party_indices(Party::A).is_empty() || layout.party_indices(Party::B).is_empty() {
        return Err(Error::LayoutMismatch(format!(
            "negativity needs both photons, got {layout}"
        )));
    }
    let pt = rho.partial_transpose(Party::B);
    let trace_norm: f64 = eigvals_hermitian(&pt)?.iter().map(|l| l.abs()).sum();
    Ok((trace_norm - 1.0).max(0.0))
}

/// Fits `rate = a + p·cos φ + q·sin φ` by least squares and returns
/// `√(p² + q²)/a`, clamped to `[0, 1]`.
///
/// Needs at least four distinct phases (mod 2π) that pin down all three
/// coefficients.
pub fn visibility(fringe: &[(f64, f64)]) -> Result<f64> {
    let mut phases: Vec<f64> = fringe
        .iter()
        .map(|&(p, _)| p.rem_euclid(std::f64::consts::TAU))
        .collect();
    phases.sort_by(f64::total_cmp);
    phases.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if phases.len() < 4 {
        return Err(Error::DegenerateFit(format!(
            "need at least 4 distinct phases, got {}",
            phases.len()
        )));
    }
    if fringe.iter().any(|&(p, r)| !p.is_finite() || !r.is_finite()) {
        return Err(Error::DegenerateFit("non-finite fringe sample".into()));
    }
    let n = fringe.len();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => fringe[i].0.cos(),
        _ => fringe[i].0.sin(),
    });
    let y = DVector::from_iterator(n, fringe.iter().map(|&(_, r)| r));
    let svd = design.svd(true, true);
    let (smax, smin) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    if smin <= 1e-8 * smax {
        return Err(Error::DegenerateFit("phases do not determine a sinusoid".into()));
    }
    let coef = svd.solve(&y, 0.0).map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let (a, p, q) = (coef[0], coef[1], coef[2]);
    if a <= 0.0 {
        return Err(Error::DegenerateFit(format!("fitted mean rate {a} is not positive")));
    }
    Ok((p.hypot(q) / a).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangle: Option<f64>,
    pub linear_entropy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    pub negativity: f64,
    pub purity: f64,
}

impl MetricReport {
    /// Tangle only for two-qubit inputs, fidelity only when a target is given.
    pub fn compute(rho: &DensityOperator, target: Option<&DensityOperator>) -> Result<Self> {
        let tangle = if require_two_qubits(rho).is_ok() {
            Some(tangle(rho)?)
        } else {
            None
        };
        let fidelity = target.map(|t| fidelity(rho, t)).transpose()?;
        Ok(Self {
            tangle,
            linear_entropy: linear_entropy(rho),
            fidelity,
            negativity: negativity(rho)?,
            purity: rho.purity(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FringeRow {
    phase: f64,
    rate: f64,
}

pub fn read_fringe_csv<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize()
        .map(|row| row.map(|r: FringeRow| (r.phase, r.rate)).map_err(Error::from))
        .collect()
}

pub fn write_fringe_csv<W: Write>(fringe: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for &(phase, rate) in fringe {
        w.serialize(FringeRow { phase, rate })?;
    }
    w.flush()?;
    Ok(())
}
