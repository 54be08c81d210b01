//! CHSH analysis on two-qubit (sub)spaces.
//!
//! Local analyzers are qubit kets `|n⟩ = (cos θ/2, e^{iφ} sin θ/2)` with Bloch
//! vector `n`; the `+` outcome is the ket and the `−` outcome its orthogonal
//! complement. With `T_ij = Tr(ρ σ_i⊗σ_j)` the correlation is `E(a, b) = aᵀTb`.
//!
//! Count records for CHSH use the setting ids `a±`, `a'±` (photon A) and
//! `b±`, `b'±` (photon B).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzers::{AnalyzerSetting, EnergyTimeSetting, PolarizationSetting, SettingsEntry, SpatialSetting};
use crate::qcore::{inner, kron_vec, ComplexMatrix, DensityOperator, Dof, Party, SubsystemLayout, C64, ONE, ZERO};
use crate::source::CountRecord;
use crate::{Error, Result};

const RESTARTS: usize = 16;
const SEARCH_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;

/// A two-outcome qubit analyzer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct LocalAnalyzer {
    ket: [C64; 2],
}

impl TryFrom<Vec<[f64; 2]>> for LocalAnalyzer {
    type Error = Error;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        if v.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "qubit analyzer ket has {} entries",
                v.len()
            )));
        }
        Self::new([C64::new(v[0][0], v[0][1]), C64::new(v[1][0], v[1][1])])
    }
}

impl From<LocalAnalyzer> for Vec<[f64; 2]> {
    fn from(a: LocalAnalyzer) -> Self {
        a.ket.iter().map(|z| [z.re, z.im]).collect()
    }
}

impl LocalAnalyzer {
    /// Requires a unit ket (within 1e-10).
    pub fn new(ket: [C64; 2]) -> Result<Self> {
        let n = (ket[0].norm_sqr() + ket[1].norm_sqr()).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("analyzer ket has norm {n}")));
        }
        Ok(Self { ket })
    }

    pub fn from_bloch(theta: f64, phi: f64) -> Self {
        Self {
            ket: [
                C64::new((theta / 2.0).cos(), 0.0),
                C64::from_polar((theta / 2.0).sin(), phi),
            ],
        }
    }

    /// Bloch vector in the equatorial plane at azimuth `phi`.
    pub fn equatorial(phi: f64) -> Self {
        Self::from_bloch(std::f64::consts::FRAC_PI_2, phi)
    }

    fn from_vector(n: [f64; 3]) -> Self {
        let theta = n[2].clamp(-1.0, 1.0).acos();
        Self::from_bloch(theta, n[1].atan2(n[0]))
    }

    pub fn ket(&self) -> [C64; 2] {
        self.ket
    }

    pub fn perp(&self) -> [C64; 2] {
        [-self.ket[1].conj(), self.ket[0].conj()]
    }

    pub fn bloch(&self) -> [f64; 3] {
        let [u, v] = self.ket;
        let c = u.conj() * v;
        [2.0 * c.re, 2.0 * c.im, u.norm_sqr() - v.norm_sqr()]
    }

    /// Physical analyzer realizing this qubit measurement on one DOF of
    /// dimension `dim` for photon `party`. Spatial qubits live in the `(l, r)`
    /// modes, with photon B's logical levels in the order `(r, l)`; energy-time
    /// analyzers must be equatorial.
    pub fn to_setting(&self, party: Party, dof: Dof, dim: usize) -> Result<AnalyzerSetting> {
        self.outcome_setting(self.ket, party, dof, dim)
    }

    fn outcome_setting(&self, ket: [C64; 2], party: Party, dof: Dof, dim: usize) -> Result<AnalyzerSetting> {
        match dof {
            Dof::Polarization => Ok(AnalyzerSetting::poln(PolarizationSetting::for_ket(&ket)?)),
            Dof::Spatial => {
                if dim != 2 && dim != 3 {
                    return Err(Error::InvalidArgument(format!("spatial dimension {dim}")));
                }
                let (l, r) = match party {
                    Party::A => (ket[0], ket[1]),
                    Party::B => (ket[1], ket[0]),
                };
                let mut k = vec![ZERO; dim];
                k[0] = l;
                k[dim - 1] = r;
                Ok(AnalyzerSetting::spatial(SpatialSetting::new(k)?))
            }
            Dof::EnergyTime => {
                if (ket[0].norm() - ket[1].norm()).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(
                        "energy-time analyzers only reach the equatorial family".into(),
                    ));
                }
                let delta = (ket[1] / ket[0]).arg();
                Ok(AnalyzerSetting::etime(EnergyTimeSetting::new(delta)?))
            }
            Dof::Generic => AnalyzerSetting::local(ket.to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a: LocalAnalyzer,
    pub a_prime: LocalAnalyzer,
    pub b: LocalAnalyzer,
    pub b_prime: LocalAnalyzer,
}

impl ChshSettings {
    /// The four analyzer pairs in the order `(a,b), (a,b'), (a',b), (a',b')`.
    pub fn pairs(&self) -> [(&LocalAnalyzer, &LocalAnalyzer); 4] {
        [
            (&self.a, &self.b),
            (&self.a, &self.b_prime),
            (&self.a_prime, &self.b),
            (&self.a_prime, &self.b_prime),
        ]
    }

    /// Standard real-plane settings optimal for Φ+: a = 0, a' = π/2, b = π/4,
    /// b' = −π/4 (Bloch polar angles in the x–z plane).
    pub fn canonical() -> Self {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        Self {
            a: LocalAnalyzer::from_bloch(0.0, 0.0),
            a_prime: LocalAnalyzer::from_bloch(FRAC_PI_2, 0.0),
            b: LocalAnalyzer::from_bloch(FRAC_PI_4, 0.0),
            b_prime: LocalAnalyzer::from_bloch(FRAC_PI_4, std::f64::consts::PI),
        }
    }

    /// The 16 settings entries (4 analyzer pairs × 4 outcome pairs) that a
    /// counts-based CHSH run needs, realized on `dof` of the given dimension
    /// for each photon.
    pub fn entries(&self, dof: Dof, dim: usize) -> Result<Vec<SettingsEntry>> {
        let side = |name: &str, an: &LocalAnalyzer, party| -> Result<Vec<(String, AnalyzerSetting)>> {
            Ok(vec![
                (format!("{name}+"), an.outcome_setting(an.ket(), party, dof, dim)?),
                (format!("{name}-"), an.outcome_setting(an.perp(), party, dof, dim)?),
            ])
        };
        let mut out = Vec::with_capacity(16);
        for (na, an) in [("a", &self.a), ("a'", &self.a_prime)] {
            for (nb, bn) in [("b", &self.b), ("b'", &self.b_prime)] {
                for (ida, sa) in side(na, an, Party::A)? {
                    for (idb, sb) in side(nb, bn, Party::B)? {
                        out.push(SettingsEntry {
                            setting_a: ida.clone(),
                            setting_b: idb,
                            a: sa.clone(),
                            b: sb,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellResult {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
    /// `E(a,b), E(a,b'), E(a',b), E(a',b')`
    #[serde(rename = "E")]
    pub e: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub settings: Option<ChshSettings>,
}

fn require_qubit_pair(rho: &DensityOperator) -> Result<()> {
    let l = rho.layout();
    if l.dims() != [2, 2] || l.parties() != [Party::A, Party::B] {
        return Err(Error::LayoutMismatch(format!(
            "CHSH needs a 2⊗2 state with photon A first, got {l}; project or restrict first"
        )));
    }
    Ok(())
}

/// `E = P(a,b) + P(a⊥,b⊥) − P(a,b⊥) − P(a⊥,b)`, renormalized over the four
/// outcomes.
pub fn correlation_from_state(rho: &DensityOperator, a: &LocalAnalyzer, b: &LocalAnalyzer) -> Result<f64> {
    require_qubit_pair(rho)?;
    let mut num = 0.0;
    let mut total = 0.0;
    for (ka, sa) in [(a.ket(), 1.0), (a.perp(), -1.0)] {
        for (kb, sb) in [(b.ket(), 1.0), (b.perp(), -1.0)] {
            let p = rho.ket_expectation(&kron_vec(&ka, &kb)).max(0.0);
            num += sa * sb * p;
            total += p;
        }
    }
    if total <= 1e-12 {
        return Err(Error::VanishingProbability(total));
    }
    Ok(num / total)
}

/// `S = E(a,b) + E(a,b') + E(a',b) − E(a',b')`
pub fn chsh_from_state(rho: &DensityOperator, settings: &ChshSettings) -> Result<BellResult> {
    let mut e = [0.0; 4];
    for (k, (a, b)) in settings.pairs().into_iter().enumerate() {
        e[k] = correlation_from_state(rho, a, b)?;
    }
    Ok(BellResult {
        s: e[0] + e[1] + e[2] - e[3],
        sigma: None,
        e,
        settings: Some(settings.clone()),
    })
}

/// Correlation matrix `T_ij = Tr(ρ σ_i⊗σ_j)`.
pub fn correlation_matrix(rho: &DensityOperator) -> Result<[[f64; 3]; 3]> {
    require_qubit_pair(rho)?;
    let paulis = pauli_matrices();
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = rho.matrix().trace_product(&paulis[i].kron(&paulis[j])).re;
        }
    }
    Ok(t)
}

fn pauli_matrices() -> [ComplexMatrix; 3] {
    let i = C64::new(0.0, 1.0);
    [
        ComplexMatrix::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]).expect("2x2"),
        ComplexMatrix::from_rows(&[vec![ZERO, -i], vec![i, ZERO]]).expect("2x2"),
        ComplexMatrix::from_rows(&[vec![ONE, ZERO], vec![ZERO, -ONE]]).expect("2x2"),
    ]
}

/// Which Bloch vectors the local analyzers can reach.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlochDomain {
    Sphere,
    /// Phase-only analyzers (energy-time).
    Equator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimalChsh {
    /// Closed-form maximum `2√(m1 + m2)`.
    pub analytic: f64,
    /// Settings found by local search, evaluated on the state.
    pub result: BellResult,
}

/// Maximal CHSH value over analyzers on the whole Bloch sphere.
pub fn optimal_chsh(rho: &DensityOperator) -> Result<OptimalChsh> {
    optimal_chsh_in(rho, BlochDomain::Sphere)
}

/// Maximal CHSH value with analyzers restricted to `domain` on both photons.
///
/// For [`BlochDomain::Equator`] the closed form uses the x–y block of `T`.
pub fn optimal_chsh_in(rho: &DensityOperator, domain: BlochDomain) -> Result<OptimalChsh> {
    let t = correlation_matrix(rho)?;
    let k = match domain {
        BlochDomain::Sphere => 3,
        BlochDomain::Equator => 2,
    };
    let tm = DMatrix::from_fn(k, k, |i, j| t[i][j]);
    let eig = (tm.transpose() * &tm).symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let m1 = eig.eigenvalues[order[0]].max(0.0);
    let m2 = eig.eigenvalues[order[1]].max(0.0);
    let analytic = 2.0 * (m1 + m2).sqrt();

    let e1: DVector<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let e2: DVector<f64> = eig.eigenvectors.column(order[1]).into_owned();
    let theta = m2.sqrt().atan2(m1.sqrt());
    let b = &e1 * theta.cos() + &e2 * theta.sin();
    let bp = &e1 * theta.cos() - &e2 * theta.sin();
    let unit_or = |v: DVector<f64>, fallback: &DVector<f64>| {
        let n = v.norm();
        if n > 1e-12 {
            v / n
        } else {
            fallback.clone()
        }
    };
    let a = unit_or(&tm * &e1, &e1);
    let ap = unit_or(&tm * &e2, &e2);
    let lift = |v: &DVector<f64>| -> [f64; 3] {
        if k == 3 {
            [v[0], v[1], v[2]]
        } else {
            [v[0], v[1], 0.0]
        }
    };
    let seed = [lift(&a), lift(&ap), lift(&b), lift(&bp)].map(to_angles);

    let restarts: Vec<([Angles; 4], f64)> = (0..RESTARTS)
        .into_par_iter()
        .map(|r| {
            let mut angles = seed;
            if r > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
                for ang in &mut angles {
                    ang.theta += rng.random_range(-0.5..0.5);
                    ang.phi += rng.random_range(-0.5..0.5);
                }
            }
            if domain == BlochDomain::Equator {
                for ang in &mut angles {
                    ang.theta = std::f64::consts::FRAC_PI_2;
                }
            }
            coordinate_ascent(&t, angles, domain)
        })
        .collect();
    let mut best = 0;
    for (i, r) in restarts.iter().enumerate() {
        if r.1 > restarts[best].1 {
            best = i;
        }
    }
    let [a, ap, b, bp] = restarts[best].0;
    let settings = ChshSettings {
        a: LocalAnalyzer::from_bloch(a.theta, a.phi),
        a_prime: LocalAnalyzer::from_bloch(ap.theta, ap.phi),
        b: LocalAnalyzer::from_bloch(b.theta, b.phi),
        b_prime: LocalAnalyzer::from_bloch(bp.theta, bp.phi),
    };
    Ok(OptimalChsh {
        analytic,
        result: chsh_from_state(rho, &settings)?,
    })
}

#[derive(Clone, Copy, Debug)]
struct Angles {
    theta: f64,
    phi: f64,
}

impl Angles {
    fn vector(&self) -> [f64; 3] {
        let s = self.theta.sin();
        [s * self.phi.cos(), s * self.phi.sin(), self.theta.cos()]
    }
}

fn to_angles(n: [f64; 3]) -> Angles {
    let a = LocalAnalyzer::from_vector(n);
    let [x, y, z] = a.bloch();
    Angles {
        theta: z.clamp(-1.0, 1.0).acos(),
        phi: y.atan2(x),
    }
}

fn dot(u: [f64; 3], v: [f64; 3]) -> f64 {
    u[0] * v[0] + u[1] * v[1] + u[2] * v[2]
}

fn t_apply(t: &[[f64; 3]; 3], v: [f64; 3], transpose: bool) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i] += if transpose { t[j][i] } else { t[i][j] } * v[j];
        }
    }
    out
}

fn chsh_value(t: &[[f64; 3]; 3], ang: &[Angles; 4]) -> f64 {
    let [a, ap, b, bp] = ang.map(|x| x.vector());
    let sum = [b[0] + bp[0], b[1] + bp[1], b[2] + bp[2]];
    let diff = [b[0] - bp[0], b[1] - bp[1], b[2] - bp[2]];
    dot(a, t_apply(t, sum, false)) + dot(ap, t_apply(t, diff, false))
}

/// Maximizes `n(θ, φ)·u` over one angle with the other fixed.
fn best_angle(ang: &mut Angles, u: [f64; 3], domain: BlochDomain) {
    if domain == BlochDomain::Sphere {
        let radial = ang.phi.cos() * u[0] + ang.phi.sin() * u[1];
        ang.theta = radial.atan2(u[2]);
    }
    let planar = if ang.theta.sin() >= 0.0 { 1.0 } else { -1.0 };
    if u[0] != 0.0 || u[1] != 0.0 {
        ang.phi = (planar * u[1]).atan2(planar * u[0]);
    }
}

fn coordinate_ascent(t: &[[f64; 3]; 3], mut ang: [Angles; 4], domain: BlochDomain) -> ([Angles; 4], f64) {
    let mut s = chsh_value(t, &ang);
    for _ in 0..MAX_SWEEPS {
        for k in 0..4 {
            let v = ang.map(|x| x.vector());
            // S as a linear function of the k-th Bloch vector
            let u = match k {
                0 => t_apply(t, [v[2][0] + v[3][0], v[2][1] + v[3][1], v[2][2] + v[3][2]], false),
                1 => t_apply(t, [v[2][0] - v[3][0], v[2][1] - v[3][1], v[2][2] - v[3][2]], false),
                2 => t_apply(t, [v[0][0] + v[1][0], v[0][1] + v[1][1], v[0][2] + v[1][2]], true),
                _ => t_apply(t, [v[0][0] - v[1][0], v[0][1] - v[1][1], v[0][2] - v[1][2]], true),
            };
            best_angle(&mut ang[k], u, domain);
        }
        let next = chsh_value(t, &ang);
        let gain = next - s;
        s = next;
        if gain < SEARCH_TOL {
            break;
        }
    }
    (ang, s)
}

fn count_key(a: &str, b: &str) -> (String, String) {
    (a.to_string(), b.to_string())
}

/// CHSH from 16 coincidence counts with first-order Poisson errors.
///
/// Records with the same id pair are summed. Each `E` uses
/// `(n++ + n−− − n+− − n−+)/N`; its variance is `Σ_k ((s_k − E)/N)²·max(n_k, 1)`
/// and the four settings are treated as independent.
pub fn chsh_from_counts(records: &[CountRecord]) -> Result<BellResult> {
    let mut counts: HashMap<(String, String), u64> = HashMap::new();
    for r in records {
        *counts.entry(count_key(&r.setting_a, &r.setting_b)).or_insert(0) += r.counts;
    }
    let mut e = [0.0; 4];
    let mut var_s = 0.0;
    let mut k = 0;
    for na in ["a", "a'"] {
        for nb in ["b", "b'"] {
            let mut n = [(0.0, 0.0); 4];
            let mut idx = 0;
            for (oa, sa) in [("+", 1.0), ("-", -1.0)] {
                for (ob, sb) in [("+", 1.0), ("-", -1.0)] {
                    let (ida, idb) = (format!("{na}{oa}"), format!("{nb}{ob}"));
                    let c = counts
                        .get(&count_key(&ida, &idb))
                        .ok_or_else(|| Error::MissingRecord(ida.clone(), idb.clone()))?;
                    n[idx] = (*c as f64, sa * sb);
                    idx += 1;
                }
            }
            let total: f64 = n.iter().map(|x| x.0).sum();
            if total <= 0.0 {
                return Err(Error::ZeroCounts(format!("setting ({na}, {nb})")));
            }
            let ek = n.iter().map(|&(c, s)| s * c).sum::<f64>() / total;
            var_s += n
                .iter()
                .map(|&(c, s)| ((s - ek) / total).powi(2) * c.max(1.0))
                .sum::<f64>();
            e[k] = ek;
            k += 1;
        }
    }
    Ok(BellResult {
        s: e[0] + e[1] + e[2] - e[3],
        sigma: Some(var_s.sqrt()),
        e,
        settings: None,
    })
}

/// What to do with one subsystem in [`subspace_project`].
#[derive(Clone, Debug, PartialEq)]
pub enum SubspaceAction {
    Keep,
    /// Trace the subsystem out.
    Trace,
    /// Project onto a ket and drop the subsystem.
    Project(Vec<C64>),
    /// Restrict to the span of orthonormal kets; the subsystem's new basis is
    /// that list.
    Restrict(Vec<Vec<C64>>),
}

/// `ΠρΠ†/Tr(ΠρΠ†)` with `Π` the tensor product of per-subsystem actions,
/// reduced to the kept and restricted subsystems.
pub fn subspace_project(rho: &DensityOperator, actions: &[SubspaceAction]) -> Result<DensityOperator> {
    let layout = rho.layout();
    if actions.len() != layout.len() {
        return Err(Error::LayoutMismatch(format!(
            "{} subspace actions for layout {layout}",
            actions.len()
        )));
    }
    let mut op = ComplexMatrix::identity(1);
    let mut out_layout = layout.clone();
    let mut keep = Vec::new();
    for (i, (action, sub)) in actions.iter().zip(layout.subsystems()).enumerate() {
        let rows: Vec<Vec<C64>> = match action {
            SubspaceAction::Keep | SubspaceAction::Trace => (0..sub.dim)
                .map(|j| {
                    let mut e = vec![ZERO; sub.dim];
                    e[j] = ONE;
                    e
                })
                .collect(),
            SubspaceAction::Project(k) => vec![k.clone()],
            SubspaceAction::Restrict(ks) => {
                check_orthonormal(ks)?;
                ks.clone()
            }
        };
        if rows.iter().any(|r| r.len() != sub.dim) {
            return Err(Error::LayoutMismatch(format!(
                "ket length does not match {}:{} dimension {}",
                sub.party, sub.dof, sub.dim
            )));
        }
        if let SubspaceAction::Project(k) = action {
            let n = crate::qcore::norm(k);
            if (n - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("projection ket has norm {n}")));
            }
        }
        // rows of the local map are bras
        let mut local = ComplexMatrix::zeros(rows.len(), sub.dim);
        for (r, ket) in rows.iter().enumerate() {
            for (c, z) in ket.iter().enumerate() {
                local[(r, c)] = z.conj();
            }
        }
        op = op.kron(&local);
        out_layout = out_layout.with_dim(i, rows.len())?;
        if matches!(action, SubspaceAction::Keep | SubspaceAction::Restrict(_)) {
            keep.push(i);
        }
    }
    let projected = &(&op * rho.matrix()) * &op.adjoint();
    let p = projected.trace().re;
    if !(p > 1e-12) {
        return Err(Error::VanishingProbability(p));
    }
    let reduced = crate::qcore::DensityOperator::normalized_from(projected, out_layout)?;
    reduced.partial_trace(&keep)
}

fn check_orthonormal(kets: &[Vec<C64>]) -> Result<()> {
    for (i, u) in kets.iter().enumerate() {
        for (j, v) in kets.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            if (inner(u, v) - C64::new(expected, 0.0)).norm() > 1e-10 {
                return Err(Error::InvalidArgument("restriction kets are not orthonormal".into()));
            }
        }
    }
    Ok(())
}

/// Two-mode subspace `{l, r}` of a spatial subsystem of dimension `dim`.
pub fn spatial_lr(dim: usize) -> Vec<Vec<C64>> {
    let mut l = vec![ZERO; dim];
    let mut r = vec![ZERO; dim];
    l[0] = ONE;
    r[dim - 1] = ONE;
    vec![l, r]
}

/// Spatial modes spanning the logical qubit of `party`: `(l, r)` for photon A,
/// `(r, l)` for photon B. Restricting to these turns `Φ+_spa` into `Φ+`.
pub fn spatial_logical(dim: usize, party: Party) -> Vec<Vec<C64>> {
    let mut modes = spatial_lr(dim);
    if party == Party::B {
        modes.reverse();
    }
    modes
}

/// Layout of the 2⊗2 state CHSH operates on, labeled with `dof`.
pub fn qubit_pair_layout(dof: Dof) -> SubsystemLayout {
    SubsystemLayout::bipartite(dof, 2, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::make_named_state;
    use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

    #[test]
    fn phi_plus_correlations() {
        let phi = make_named_state("phi+_poln").unwrap();
        let z = LocalAnalyzer::from_bloch(0.0, 0.0);
        assert!((correlation_from_state(&phi, &z, &z).unwrap() - 1.0).abs() < 1e-12);
        let b = LocalAnalyzer::from_bloch(PI / 4.0, 0.0);
        assert!((correlation_from_state(&phi, &z, &b).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);
        let mixed = DensityOperator::maximally_mixed(qubit_pair_layout(Dof::Polarization));
        assert!(correlation_from_state(&mixed, &z, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn canonical_settings_reach_tsirelson() {
        let phi = make_named_state("phi+_poln").unwrap();
        let r = chsh_from_state(&phi, &ChshSettings::canonical()).unwrap();
        assert!((r.s - 2.0 * SQRT_2).abs() < 1e-9);
        let mut degenerate = ChshSettings::canonical();
        degenerate.a_prime = degenerate.a.clone();
        assert!(chsh_from_state(&phi, &degenerate).unwrap().s <= 2.0 + 1e-12);
    }

    #[test]
    fn optimal_chsh_anchors() {
        for name in ["phi+_poln", "psi-_poln", "phi+_spa", "phi-_te"] {
            let rho = make_named_state(name).unwrap();
            let o = optimal_chsh(&rho).unwrap();
            assert!((o.analytic - 2.0 * SQRT_2).abs() < 1e-9, "{name}");
            assert!((o.result.s - o.analytic).abs() < 1e-6, "{name}");
        }
        let mixed = DensityOperator::maximally_mixed(qubit_pair_layout(Dof::Polarization));
        assert!(optimal_chsh(&mixed).unwrap().analytic.abs() < 1e-12);
    }

    #[test]
    fn nonmaximal_closed_form() {
        let (c0, c1) = (1.88, 1.0);
        let n = f64::hypot(c0, c1);
        let amps = vec![C64::new(c0 / n, 0.0), ZERO, ZERO, C64::new(c1 / n, 0.0)];
        let rho = crate::qcore::StateVector::new(amps, qubit_pair_layout(Dof::Generic))
            .unwrap()
            .to_density()
            .unwrap();
        let conc = 2.0 * c0 * c1 / (c0 * c0 + c1 * c1);
        let expected = 2.0 * (1.0 + conc * conc).sqrt();
        let o = optimal_chsh(&rho).unwrap();
        assert!((o.analytic - expected).abs() < 1e-9);
        assert!((o.result.s - o.analytic).abs() < 1e-6);
    }

    #[test]
    fn equatorial_search_matches_planar_closed_form() {
        let rho = make_named_state("phi+_te").unwrap();
        let o = optimal_chsh_in(&rho, BlochDomain::Equator).unwrap();
        assert!((o.analytic - 2.0 * SQRT_2).abs() < 1e-9);
        assert!((o.result.s - o.analytic).abs() < 1e-6);
        let settings = o.result.settings.unwrap();
        for an in [&settings.a, &settings.a_prime, &settings.b, &settings.b_prime] {
            assert!(an.bloch()[2].abs() < 1e-12);
            an.to_setting(Party::A, Dof::EnergyTime, 2).unwrap();
        }
    }

    #[test]
    fn counts_from_born_probabilities() {
        let phi = make_named_state("phi+_poln").unwrap();
        let settings = ChshSettings::canonical();
        let entries = settings.entries(Dof::Polarization, 2).unwrap();
        assert_eq!(entries.len(), 16);
        let records: Vec<CountRecord> = entries
            .iter()
            .map(|e| CountRecord {
                setting_a: e.setting_a.clone(),
                setting_b: e.setting_b.clone(),
                counts: (e.element(phi.layout()).unwrap().probability(&phi) * 1e8).round() as u64,
                duration: 1.0,
                expected: None,
            })
            .collect();
        let r = chsh_from_counts(&records).unwrap();
        let exact = chsh_from_state(&phi, &settings).unwrap();
        assert!((r.s - exact.s).abs() < 1e-7);
        assert!(r.sigma.unwrap() > 0.0);
    }

    #[test]
    fn equal_counts_and_missing_records() {
        let ids = ["+", "-"];
        let mut records = Vec::new();
        for na in ["a", "a'"] {
            for nb in ["b", "b'"] {
                for oa in ids {
                    for ob in ids {
                        records.push(CountRecord {
                            setting_a: format!("{na}{oa}"),
                            setting_b: format!("{nb}{ob}"),
                            counts: 50,
                            duration: 1.0,
                            expected: None,
                        });
                    }
                }
            }
        }
        assert!(chsh_from_counts(&records).unwrap().s.abs() < 1e-15);
        records.pop();
        assert!(matches!(chsh_from_counts(&records), Err(Error::MissingRecord(_, _))));
    }

    #[test]
    fn projecting_spatial_gg_leaves_polarization_bell_state() {
        let rho = make_named_state("eq1_ideal").unwrap();
        let g = vec![ZERO, ONE, ZERO];
        let actions = vec![
            SubspaceAction::Keep,
            SubspaceAction::Project(g.clone()),
            SubspaceAction::Trace,
            SubspaceAction::Keep,
            SubspaceAction::Project(g),
            SubspaceAction::Trace,
        ];
        let p = subspace_project(&rho, &actions).unwrap();
        let phi = make_named_state("phi+_poln").unwrap();
        assert!((p.matrix() - phi.matrix()).max_abs() < 1e-12);
        assert_eq!(p.layout(), phi.layout());
    }

    #[test]
    fn restriction_to_lr_modes() {
        let rho = make_named_state("eq1_poln_spa").unwrap();
        let lr = spatial_lr(3);
        let h = vec![ONE, ZERO];
        let actions = vec![
            SubspaceAction::Project(h.clone()),
            SubspaceAction::Restrict(lr.clone()),
            SubspaceAction::Project(h),
            SubspaceAction::Restrict(lr),
        ];
        let p = subspace_project(&rho, &actions).unwrap();
        // (|lr⟩ + |rl⟩)/√2 in the (l, r) basis
        let expected = make_named_state("phi+_spa").unwrap();
        assert!((p.matrix() - expected.matrix()).max_abs() < 1e-12);
        let o = optimal_chsh(&p).unwrap();
        assert!((o.analytic - 2.0 * SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn logical_restriction_maps_spatial_bell_states_to_qubit_bell_states() {
        for (spa, poln) in [("phi+_spa", "phi+_poln"), ("psi-_spa", "psi-_poln")] {
            let rho = make_named_state(spa).unwrap();
            let actions = vec![
                SubspaceAction::Restrict(spatial_logical(2, Party::A)),
                SubspaceAction::Restrict(spatial_logical(2, Party::B)),
            ];
            let p = subspace_project(&rho, &actions).unwrap();
            let expected = make_named_state(poln).unwrap();
            assert!((p.matrix() - expected.matrix()).max_abs() < 1e-12, "{spa}");
        }
    }

    #[test]
    fn spatial_chsh_entries_follow_logical_encoding() {
        let rho = make_named_state("phi+_spa").unwrap();
        let settings = ChshSettings::canonical();
        let mut records = Vec::new();
        for e in settings.entries(Dof::Spatial, 2).unwrap() {
            let p = e.element(rho.layout()).unwrap().probability(&rho);
            records.push(CountRecord {
                setting_a: e.setting_a,
                setting_b: e.setting_b,
                counts: (p * 1e12).round() as u64,
                duration: 1.0,
                expected: None,
            });
        }
        let r = chsh_from_counts(&records).unwrap();
        assert!((r.s - 2.0 * SQRT_2).abs() < 1e-9, "S = {}", r.s);
    }

    #[test]
    fn vanishing_projection_is_an_error() {
        let phi = make_named_state("phi+_poln").unwrap();
        let actions = vec![
            SubspaceAction::Project(vec![ONE, ZERO]),
            SubspaceAction::Project(vec![ZERO, ONE]),
        ];
        assert!(matches!(
            subspace_project(&phi, &actions),
            Err(Error::VanishingProbability(_))
        ));
    }

    #[test]
    fn analyzer_json_round_trip() {
        let s = ChshSettings::canonical();
        let text = serde_json::to_string(&s).unwrap();
        let back: ChshSettings = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<LocalAnalyzer>("[[1.0,0.0],[1.0,0.0]]").is_err());
    }
}
