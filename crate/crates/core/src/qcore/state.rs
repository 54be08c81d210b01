use serde::{Deserialize, Serialize};

use super::eigen::{eig_hermitian, eigvals_hermitian, HermitianEigen};
use super::layout::{Dof, Party, SubsystemLayout};
use super::matrix::{kron_vec, norm, ComplexMatrix, C64, ONE, ZERO};
use crate::{Error, Result};

/// Validation thresholds for density operators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Max elementwise `|ρ_ij − conj(ρ_ji)|`.
    pub hermitian: f64,
    /// Max `|Tr ρ − 1|`.
    pub trace: f64,
    /// Lowest admissible eigenvalue.
    pub psd_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermitian: 1e-10,
            trace: 1e-10,
            psd_floor: -1e-9,
        }
    }
}

/// A ket over a multipartite layout.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
    layout: SubsystemLayout,
}

impl StateVector {
    pub fn new(amplitudes: Vec<C64>, layout: SubsystemLayout) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for layout {layout} of dimension {}",
                amplitudes.len(),
                layout.total_dim()
            )));
        }
        Ok(Self { amplitudes, layout })
    }

    /// Computational basis ket `|index⟩`.
    pub fn basis(index: usize, layout: SubsystemLayout) -> Result<Self> {
        let mut amps = vec![ZERO; layout.total_dim()];
        let slot = amps
            .get_mut(index)
            .ok_or_else(|| Error::InvalidArgument(format!("basis index {index} out of range")))?;
        *slot = ONE;
        Self::new(amps, layout)
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            amplitudes: self.amplitudes.iter().map(|a| a / n).collect(),
            layout: self.layout.clone(),
        })
    }

    /// Kronecker product; the layouts are concatenated.
    pub fn tensor(&self, other: &Self) -> Self {
        Self {
            amplitudes: kron_vec(&self.amplitudes, &other.amplitudes),
            layout: self.layout.concat(&other.layout),
        }
    }

    /// Reorders subsystems so that new subsystem `k` is old subsystem `order[k]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let map = permutation_map(&self.layout, order)?;
        Ok(Self {
            amplitudes: map.iter().map(|&old| self.amplitudes[old]).collect(),
            layout: self.layout.select(order)?,
        })
    }

    pub fn to_canonical_order(&self) -> Self {
        self.permute(&self.layout.canonical_order())
            .expect("canonical order is a valid permutation")
    }

    pub fn to_density(&self) -> Result<DensityOperator> {
        let psi = self.normalized()?;
        Ok(DensityOperator {
            matrix: ComplexMatrix::outer(&psi.amplitudes),
            layout: psi.layout,
        })
    }
}

/// Hermitian, positive-semidefinite, unit-trace operator over a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: ComplexMatrix,
    layout: SubsystemLayout,
}

impl DensityOperator {
    pub fn new(matrix: ComplexMatrix, layout: SubsystemLayout) -> Result<Self> {
        Self::with_tolerances(matrix, layout, &Tolerances::default())
    }

    pub fn with_tolerances(matrix: ComplexMatrix, layout: SubsystemLayout, tol: &Tolerances) -> Result<Self> {
        check_shape(&matrix, &layout)?;
        let dev = matrix.hermitian_deviation();
        if dev > tol.hermitian {
            return Err(Error::NotHermitian(dev));
        }
        let tr = matrix.trace();
        if (tr - ONE).norm() > tol.trace {
            return Err(Error::InvalidTrace(tr.re));
        }
        let min = eigvals_hermitian(&matrix)?.last().copied().unwrap_or(0.0);
        if min < tol.psd_floor {
            return Err(Error::NotPsd(min));
        }
        Ok(Self { matrix, layout })
    }

    /// Hermitizes and divides by the trace, then validates.
    pub fn normalized_from(matrix: ComplexMatrix, layout: SubsystemLayout) -> Result<Self> {
        check_shape(&matrix, &layout)?;
        let tr = matrix.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::InvalidTrace(tr));
        }
        Self::new(matrix.hermitian_part().scale_real(1.0 / tr), layout)
    }

    /// Skips the eigenvalue check; callers guarantee the invariants by construction.
    pub(crate) fn from_parts_unchecked(matrix: ComplexMatrix, layout: SubsystemLayout) -> Self {
        debug_assert_eq!(matrix.rows(), layout.total_dim());
        Self { matrix, layout }
    }

    pub fn maximally_mixed(layout: SubsystemLayout) -> Self {
        let d = layout.total_dim();
        Self {
            matrix: ComplexMatrix::identity(d).scale_real(1.0 / d as f64),
            layout,
        }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn into_parts(self) -> (ComplexMatrix, SubsystemLayout) {
        (self.matrix, self.layout)
    }

    /// `Tr ρ²`
    pub fn purity(&self) -> f64 {
        self.matrix.trace_product(&self.matrix).re
    }

    pub fn eigen(&self) -> Result<HermitianEigen> {
        eig_hermitian(&self.matrix)
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        eigvals_hermitian(&self.matrix)
    }

    /// `Tr(ρ·op)`, real part.
    pub fn expectation(&self, op: &ComplexMatrix) -> f64 {
        self.matrix.trace_product(op).re
    }

    /// `⟨ψ|ρ|ψ⟩`
    pub fn ket_expectation(&self, ket: &[C64]) -> f64 {
        self.matrix.expectation(ket).re
    }

    /// Kronecker product; the layouts are concatenated.
    pub fn tensor(&self, other: &Self) -> Self {
        Self {
            matrix: self.matrix.kron(&other.matrix),
            layout: self.layout.concat(&other.layout),
        }
    }

    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        let map = permutation_map(&self.layout, order)?;
        let d = self.dim();
        let mut m = ComplexMatrix::zeros(d, d);
        for (i, &oi) in map.iter().enumerate() {
            for (j, &oj) in map.iter().enumerate() {
                m[(i, j)] = self.matrix[(oi, oj)];
            }
        }
        Ok(Self {
            matrix: m,
            layout: self.layout.select(order)?,
        })
    }

    pub fn to_canonical_order(&self) -> Self {
        self.permute(&self.layout.canonical_order())
            .expect("canonical order is a valid permutation")
    }

    /// Reduced operator on `keep` (kept in ascending subsystem order).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        let (matrix, layout) = partial_trace_matrix(&self.matrix, &self.layout, keep)?;
        Ok(Self { matrix, layout })
    }

    /// Reduced operator on all subsystems of one party.
    pub fn reduce_to_party(&self, party: Party) -> Result<Self> {
        self.partial_trace(&self.layout.party_indices(party))
    }

    /// Reduced operator on the listed DOFs of both photons.
    pub fn reduce_to_dofs(&self, dofs: &[Dof]) -> Result<Self> {
        let keep: Vec<usize> = (0..self.layout.len())
            .filter(|&i| dofs.contains(&self.layout.subsystems()[i].dof))
            .collect();
        self.partial_trace(&keep)
    }

    /// Transpose on the joint index of every subsystem owned by `party`.
    pub fn partial_transpose(&self, party: Party) -> ComplexMatrix {
        partial_transpose_matrix(&self.matrix, &self.layout, party)
    }

    /// Applies `op` to subsystem `index`, i.e. `(I⊗op⊗I) ρ (I⊗op⊗I)†`.
    pub fn conjugate_local(&self, index: usize, op: &ComplexMatrix) -> Result<ComplexMatrix> {
        let full = embed_local(&self.layout, index, op)?;
        Ok(&(&full * &self.matrix) * &full.adjoint())
    }
}

fn check_shape(matrix: &ComplexMatrix, layout: &SubsystemLayout) -> Result<()> {
    if !matrix.is_square() || matrix.rows() != layout.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix for layout {layout} of dimension {}",
            matrix.rows(),
            matrix.cols(),
            layout.total_dim()
        )));
    }
    Ok(())
}

/// `map[new_index] = old_index` for a subsystem reordering.
fn permutation_map(layout: &SubsystemLayout, order: &[usize]) -> Result<Vec<usize>> {
    let n = layout.len();
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation of length {} for {n} subsystems",
            order.len()
        )));
    }
    for &o in order {
        layout.check_index(o)?;
        if std::mem::replace(&mut seen[o], true) {
            return Err(Error::InvalidArgument(format!("subsystem {o} repeated in permutation")));
        }
    }
    let new_layout = layout.select(order)?;
    let mut old_digits = vec![0; n];
    Ok((0..layout.total_dim())
        .map(|new_idx| {
            let d = new_layout.digits(new_idx);
            for (k, &o) in order.iter().enumerate() {
                old_digits[o] = d[k];
            }
            layout.join(&old_digits)
        })
        .collect())
}

pub(crate) fn partial_trace_matrix(
    m: &ComplexMatrix,
    layout: &SubsystemLayout,
    keep: &[usize],
) -> Result<(ComplexMatrix, SubsystemLayout)> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument(
            "partial trace must keep at least one subsystem".into(),
        ));
    }
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    for &k in &keep {
        layout.check_index(k)?;
    }
    let traced: Vec<usize> = (0..layout.len()).filter(|i| !keep.contains(i)).collect();
    let kept_layout = layout.select(&keep)?;
    let traced_layout = layout.select(&traced)?;
    let dk = kept_layout.total_dim();
    let dt = traced_layout.total_dim();

    // groups[t] lists (kept index, full index) sharing traced index t
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(dk); dt];
    for full in 0..layout.total_dim() {
        let d = layout.digits(full);
        let kd: Vec<usize> = keep.iter().map(|&i| d[i]).collect();
        let td: Vec<usize> = traced.iter().map(|&i| d[i]).collect();
        groups[traced_layout.join(&td)].push((kept_layout.join(&kd), full));
    }
    let mut out = ComplexMatrix::zeros(dk, dk);
    for group in &groups {
        for &(ki, fi) in group {
            for &(kj, fj) in group {
                out[(ki, kj)] += m[(fi, fj)];
            }
        }
    }
    Ok((out, kept_layout))
}

pub(crate) fn partial_transpose_matrix(m: &ComplexMatrix, layout: &SubsystemLayout, party: Party) -> ComplexMatrix {
    let d = layout.total_dim();
    let idx = layout.party_indices(party);
    let digits: Vec<Vec<usize>> = (0..d).map(|i| layout.digits(i)).collect();
    let mut out = ComplexMatrix::zeros(d, d);
    let mut dr = vec![0; layout.len()];
    let mut dc = vec![0; layout.len()];
    for r in 0..d {
        for c in 0..d {
            dr.copy_from_slice(&digits[r]);
            dc.copy_from_slice(&digits[c]);
            for &k in &idx {
                std::mem::swap(&mut dr[k], &mut dc[k]);
            }
            out[(layout.join(&dr), layout.join(&dc))] = m[(r, c)];
        }
    }
    out
}

/// `I ⊗ op ⊗ I` with `op` acting on subsystem `index`; `op` may change that
/// subsystem's dimension (rows = new dimension, cols = old dimension).
pub fn embed_local(layout: &SubsystemLayout, index: usize, op: &ComplexMatrix) -> Result<ComplexMatrix> {
    layout.check_index(index)?;
    let dims = layout.dims();
    if op.cols() != dims[index] {
        return Err(Error::DimensionMismatch(format!(
            "operator with {} columns on subsystem of dimension {}",
            op.cols(),
            dims[index]
        )));
    }
    let before: usize = dims[..index].iter().product();
    let after: usize = dims[index + 1..].iter().product();
    Ok(ComplexMatrix::identity(before)
        .kron(op)
        .kron(&ComplexMatrix::identity(after)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::layout::Subsystem;
    use crate::qcore::random::{random_density, random_ket};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qubit(party: Party) -> SubsystemLayout {
        SubsystemLayout::single(2, party, Dof::Polarization)
    }

    fn phi_plus() -> DensityOperator {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amps = vec![C64::new(s, 0.0), ZERO, ZERO, C64::new(s, 0.0)];
        StateVector::new(amps, SubsystemLayout::bipartite(Dof::Polarization, 2, 2))
            .unwrap()
            .to_density()
            .unwrap()
    }

    #[test]
    fn h_tensor_v_is_basis_one() {
        let h = StateVector::basis(0, qubit(Party::A)).unwrap();
        let v = StateVector::basis(1, qubit(Party::B)).unwrap();
        let hv = h.tensor(&v);
        assert_eq!(hv.amplitudes(), &[ZERO, ONE, ZERO, ZERO]);
        assert_eq!(hv.layout().dims(), vec![2, 2]);
    }

    #[test]
    fn tensor_of_unit_trace_has_unit_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_density(&mut rng, qubit(Party::A), 2);
        let b = random_density(&mut rng, SubsystemLayout::single(3, Party::B, Dof::Spatial), 3);
        let t = a.tensor(&b);
        assert!((t.matrix().trace().re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn marginal_of_phi_plus_is_maximally_mixed() {
        let r = phi_plus().partial_trace(&[0]).unwrap();
        assert!((r.matrix() - &ComplexMatrix::identity(2).scale_real(0.5)).max_abs() < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_empty_and_out_of_range() {
        let rho = phi_plus();
        assert!(rho.partial_trace(&[]).is_err());
        assert!(matches!(rho.partial_trace(&[2]), Err(Error::InvalidSubsystem { .. })));
    }

    #[test]
    fn partial_transpose_of_phi_plus() {
        let pt = phi_plus().partial_transpose(Party::B);
        let ev = eigvals_hermitian(&pt).unwrap();
        let expected = [0.5, 0.5, 0.5, -0.5];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permute_moves_subsystems() {
        let h = StateVector::basis(0, qubit(Party::A)).unwrap();
        let v = StateVector::basis(1, SubsystemLayout::single(2, Party::B, Dof::Spatial)).unwrap();
        let hv = h.tensor(&v);
        let vh = hv.permute(&[1, 0]).unwrap();
        assert_eq!(vh.amplitudes(), &[ZERO, ZERO, ONE, ZERO]);
        assert!(hv.permute(&[0, 0]).is_err());
    }

    #[test]
    fn density_validation_rejects_bad_inputs() {
        let l = qubit(Party::A);
        let not_unit = ComplexMatrix::identity(2);
        assert!(matches!(
            DensityOperator::new(not_unit, l.clone()),
            Err(Error::InvalidTrace(_))
        ));
        let neg = ComplexMatrix::from_real_diagonal(&[1.5, -0.5]);
        assert!(matches!(DensityOperator::new(neg, l.clone()), Err(Error::NotPsd(_))));
        let mut nh = ComplexMatrix::identity(2).scale_real(0.5);
        nh[(0, 1)] = C64::new(0.1, 0.0);
        assert!(matches!(
            DensityOperator::new(nh, l.clone()),
            Err(Error::NotHermitian(_))
        ));
        let edge = ComplexMatrix::from_real_diagonal(&[1.0 + 5e-10, -5e-10]);
        assert!(DensityOperator::new(edge, l).is_ok());
    }

    #[test]
    fn reduce_to_dofs_keeps_matching_subsystems() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = SubsystemLayout::new(vec![
            Subsystem::new(2, Party::A, Dof::Polarization),
            Subsystem::new(3, Party::A, Dof::Spatial),
            Subsystem::new(2, Party::B, Dof::Polarization),
            Subsystem::new(3, Party::B, Dof::Spatial),
        ])
        .unwrap();
        let psi = random_ket(&mut rng, l);
        let r = psi.to_density().unwrap().reduce_to_dofs(&[Dof::Spatial]).unwrap();
        assert_eq!(r.layout().dims(), vec![3, 3]);
        assert!((r.matrix().trace().re - 1.0).abs() < 1e-12);
    }
}
