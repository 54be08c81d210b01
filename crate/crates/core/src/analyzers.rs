//! Per-photon analysis chains and the joint projectors they define.
//!
//! Each photon passes a spatial filter (hologram + single-mode fiber), an
//! energy-time phase stage and a polarization filter (quarter-wave plate,
//! half-wave plate, polarizer). Every stage is an ideal rank-1 projection onto
//! the ket it selects; a stage left out acts as the identity on its DOF.
//!
//! Jones conventions: `R(θ)` is the active rotation `[[cos θ, −sin θ], [sin θ, cos θ]]`,
//! `hwp(θ) = R(θ)·diag(1, −1)·R(−θ)` and `qwp(θ) = R(θ)·diag(1, i)·R(−θ)`.
//! Global phases carry no meaning and are compared modulo phase.
//!
//! Named polarization settings (radians):
//!
//! | ket | qwp | hwp |
//! |-----|-----|-----|
//! | H = (1, 0) | 0 | 0 |
//! | V = (0, 1) | 0 | π/4 |
//! | D = (1, 1)/√2 | 0 | π/8 |
//! | A = (1, −1)/√2 | 0 | −π/8 |
//! | R = (1, i)/√2 | −π/4 | −π/8 |
//! | L = (1, −i)/√2 | π/4 | π/8 |

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, FRAC_PI_8};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::qcore::{
    inner, kron_vec, norm, ComplexMatrix, DensityOperator, Dof, Party, SubsystemLayout, C64, I, ONE, ZERO,
};
use crate::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-12;

pub fn rotation(theta: f64) -> ComplexMatrix {
    let (s, c) = theta.sin_cos();
    ComplexMatrix::from_vec(2, 2, vec![c.into(), (-s).into(), s.into(), c.into()]).expect("2x2")
}

fn retarder(theta: f64, slow: C64) -> ComplexMatrix {
    let diag = ComplexMatrix::from_vec(2, 2, vec![ONE, ZERO, ZERO, slow]).expect("2x2");
    &(&rotation(theta) * &diag) * &rotation(-theta)
}

/// Half-wave plate with its fast axis at `theta`.
pub fn hwp_jones(theta: f64) -> ComplexMatrix {
    retarder(theta, -ONE)
}

/// Quarter-wave plate with its fast axis at `theta`.
pub fn qwp_jones(theta: f64) -> ComplexMatrix {
    retarder(theta, I)
}

/// Wave-plate angles of the polarization filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationSetting {
    pub qwp: f64,
    pub hwp: f64,
}

impl PolarizationSetting {
    pub fn new(qwp: f64, hwp: f64) -> Result<Self> {
        let s = Self { qwp, hwp };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !self.qwp.is_finite() || !self.hwp.is_finite() {
            return Err(Error::InvalidArgument("wave-plate angles must be finite".into()));
        }
        Ok(())
    }

    /// Setting for one of `H V D A R L`.
    pub fn named(name: &str) -> Result<Self> {
        let (qwp, hwp) = match name {
            "H" => (0.0, 0.0),
            "V" => (0.0, FRAC_PI_4),
            "D" => (0.0, FRAC_PI_8),
            "A" => (0.0, -FRAC_PI_8),
            "R" => (-FRAC_PI_4, -FRAC_PI_8),
            "L" => (FRAC_PI_4, FRAC_PI_8),
            other => return Err(Error::InvalidArgument(format!("unknown polarization `{other}`"))),
        };
        Ok(Self { qwp, hwp })
    }

    /// Wave-plate angles whose transmitted state is `target` (up to phase).
    pub fn for_ket(target: &[C64]) -> Result<Self> {
        if target.len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "polarization ket of length {}",
                target.len()
            )));
        }
        let n = norm(target);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument("polarization ket must be nonzero".into()));
        }
        let (x, y) = (target[0] / n, target[1] / n);
        let s1 = x.norm_sqr() - y.norm_sqr();
        let xy = x.conj() * y;
        let (s2, s3) = (2.0 * xy.re, 2.0 * xy.im);
        // The qwp sets the ellipticity and leaves the major axis along its fast
        // axis; the hwp then mirrors orientation and handedness.
        let qwp = -0.5 * s3.clamp(-1.0, 1.0).asin();
        let orientation = 0.5 * s2.atan2(s1);
        let hwp = 0.5 * (orientation + qwp);
        Ok(Self { qwp, hwp })
    }

    /// The ket transmitted with certainty: `(qwp·hwp)† |H⟩`.
    pub fn ket(&self) -> [C64; 2] {
        poln_projector(self)
    }
}

pub fn poln_projector(s: &PolarizationSetting) -> [C64; 2] {
    let chain = &qwp_jones(s.qwp) * &hwp_jones(s.hwp);
    let adj = chain.adjoint();
    [adj[(0, 0)], adj[(1, 0)]]
}

/// Spatial-mode ket selected by the hologram + fiber, in basis `(l, g, r)`
/// (or `(l, r)` for a two-mode encoding).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct SpatialSetting {
    ket: Vec<C64>,
}

impl SpatialSetting {
    pub fn new(ket: Vec<C64>) -> Result<Self> {
        check_unit(&ket, "spatial")?;
        Ok(Self { ket })
    }

    pub fn normalized(ket: &[C64]) -> Result<Self> {
        Self::new(crate::qcore::normalize(ket)?)
    }

    /// `l g r h v` with `h = (l + r)/√2`, `v = (l − r)/√2`; `dim` is 2 or 3.
    pub fn named(name: &str, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!(
                "spatial dimension {dim} (expected 2 or 3)"
            )));
        }
        let (l, r) = (0, dim - 1);
        let mut ket = vec![ZERO; dim];
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        match name {
            "l" => ket[l] = ONE,
            "r" => ket[r] = ONE,
            "g" if dim == 3 => ket[1] = ONE,
            "h" => {
                ket[l] = s;
                ket[r] = s;
            }
            "v" => {
                ket[l] = s;
                ket[r] = -s;
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown spatial mode `{other}` for dimension {dim}"
                )))
            }
        }
        Ok(Self { ket })
    }

    pub fn ket(&self) -> &[C64] {
        &self.ket
    }
}

impl TryFrom<Vec<[f64; 2]>> for SpatialSetting {
    type Error = Error;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(v.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}

impl From<SpatialSetting> for Vec<[f64; 2]> {
    fn from(s: SpatialSetting) -> Self {
        s.ket.iter().map(|z| [z.re, z.im]).collect()
    }
}

/// Phase `δ` of the Franson stage; only equatorial projections are available.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTimeSetting {
    pub delta: f64,
}

impl EnergyTimeSetting {
    pub fn new(delta: f64) -> Result<Self> {
        if !delta.is_finite() {
            return Err(Error::InvalidArgument("energy-time phase must be finite".into()));
        }
        Ok(Self { delta })
    }

    pub fn ket(&self) -> [C64; 2] {
        etime_projector(self)
    }
}

/// `(|s⟩ + e^{iδ}|f⟩)/√2`
pub fn etime_projector(s: &EnergyTimeSetting) -> [C64; 2] {
    [C64::new(FRAC_1_SQRT_2, 0.0), C64::from_polar(FRAC_1_SQRT_2, s.delta)]
}

/// One photon's analyzer configuration. `None` components pass the DOF through.
///
/// `local` is a raw ket over all of the photon's subsystems at once; it is
/// needed for projections that do not factor across DOFs (e.g. the
/// superposition kets of a full tomographic set) and excludes the other fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub poln: Option<PolarizationSetting>,
    pub spatial: Option<SpatialSetting>,
    pub etime: Option<EnergyTimeSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_ket")]
    pub local: Option<Vec<C64>>,
}

mod opt_ket {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<C64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|k| k.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<C64>>, D::Error> {
        let raw: Option<Vec<[f64; 2]>> = Option::deserialize(d)?;
        Ok(raw.map(|v| v.into_iter().map(|[re, im]| C64::new(re, im)).collect()))
    }
}

impl AnalyzerSetting {
    pub fn poln(s: PolarizationSetting) -> Self {
        Self {
            poln: Some(s),
            ..Self::default()
        }
    }

    pub fn spatial(s: SpatialSetting) -> Self {
        Self {
            spatial: Some(s),
            ..Self::default()
        }
    }

    pub fn etime(s: EnergyTimeSetting) -> Self {
        Self {
            etime: Some(s),
            ..Self::default()
        }
    }

    pub fn local(ket: Vec<C64>) -> Result<Self> {
        check_unit(&ket, "local")?;
        Ok(Self {
            local: Some(ket),
            ..Self::default()
        })
    }

    pub fn is_pass_through(&self) -> bool {
        self.poln.is_none() && self.spatial.is_none() && self.etime.is_none() && self.local.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_pass_through() {
            return Err(Error::InvalidArgument(
                "analyzer setting passes every DOF through".into(),
            ));
        }
        if self.local.is_some() && (self.poln.is_some() || self.spatial.is_some() || self.etime.is_some()) {
            return Err(Error::InvalidArgument(
                "`local` cannot be combined with per-DOF settings".into(),
            ));
        }
        if let Some(p) = &self.poln {
            p.validate()?;
        }
        if let Some(s) = &self.spatial {
            check_unit(&s.ket, "spatial")?;
        }
        if let Some(e) = &self.etime {
            EnergyTimeSetting::new(e.delta)?;
        }
        if let Some(k) = &self.local {
            check_unit(k, "local")?;
        }
        Ok(())
    }

    fn component(&self, dof: Dof) -> Option<Vec<C64>> {
        match dof {
            Dof::Polarization => self.poln.map(|p| p.ket().to_vec()),
            Dof::Spatial => self.spatial.as_ref().map(|s| s.ket.clone()),
            Dof::EnergyTime => self.etime.map(|e| e.ket().to_vec()),
            Dof::Generic => None,
        }
    }

    fn requested_dofs(&self) -> Vec<Dof> {
        let mut out = Vec::new();
        if self.poln.is_some() {
            out.push(Dof::Polarization);
        }
        if self.spatial.is_some() {
            out.push(Dof::Spatial);
        }
        if self.etime.is_some() {
            out.push(Dof::EnergyTime);
        }
        out
    }
}

fn check_unit(ket: &[C64], what: &str) -> Result<()> {
    let n = norm(ket);
    if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::InvalidArgument(format!("{what} ket has norm {n}, expected 1")));
    }
    Ok(())
}

/// Projector onto the span of orthonormal kets over the full layout.
///
/// A rank-1 element has one ket; every passed-through subsystem multiplies the
/// rank by its dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct JointElement {
    kets: Vec<Vec<C64>>,
}

impl JointElement {
    pub fn from_kets(kets: Vec<Vec<C64>>) -> Self {
        Self { kets }
    }

    pub fn kets(&self) -> &[Vec<C64>] {
        &self.kets
    }

    pub fn rank(&self) -> usize {
        self.kets.len()
    }

    pub fn dim(&self) -> usize {
        self.kets.first().map_or(0, Vec::len)
    }

    pub fn trace(&self) -> f64 {
        self.kets.iter().map(|k| norm(k).powi(2)).sum()
    }

    pub fn matrix(&self) -> ComplexMatrix {
        let d = self.dim();
        let mut m = ComplexMatrix::zeros(d, d);
        for k in &self.kets {
            m = &m + &ComplexMatrix::outer(k);
        }
        m
    }

    /// `Tr(ρ·element)`
    pub fn probability(&self, rho: &DensityOperator) -> f64 {
        self.kets.iter().map(|k| rho.ket_expectation(k)).sum()
    }
}

/// Builds the two-photon measurement element for `a ⊗ b` over `layout`.
pub fn joint_projector(a: &AnalyzerSetting, b: &AnalyzerSetting, layout: &SubsystemLayout) -> Result<JointElement> {
    if a.is_pass_through() && b.is_pass_through() {
        return Err(Error::InvalidArgument(
            "joint element with every DOF passed through".into(),
        ));
    }
    // factors in layout order; each is a list of orthonormal local kets
    let mut factors: Vec<Vec<Vec<C64>>> = Vec::new();
    let subsystems = layout.subsystems();
    let mut covered = vec![false; subsystems.len()];
    for (party, setting) in [(Party::A, a), (Party::B, b)] {
        if !setting.is_pass_through() {
            setting.validate()?;
        }
        for dof in setting.requested_dofs() {
            if layout.find(party, dof).is_none() {
                return Err(Error::LayoutMismatch(format!(
                    "photon {party} sets {dof} but layout {layout} has no such subsystem"
                )));
            }
        }
        if let Some(k) = &setting.local {
            let idx = layout.party_indices(party);
            let contiguous = idx.windows(2).all(|w| w[1] == w[0] + 1);
            if idx.is_empty() || !contiguous {
                return Err(Error::LayoutMismatch(format!(
                    "photon {party} subsystems are not contiguous in {layout}"
                )));
            }
            if k.len() != layout.party_dim(party) {
                return Err(Error::LayoutMismatch(format!(
                    "local ket of length {} for photon {party} of dimension {}",
                    k.len(),
                    layout.party_dim(party)
                )));
            }
        }
    }

    let mut i = 0;
    while i < subsystems.len() {
        let sub = subsystems[i];
        let setting = if sub.party == Party::A { a } else { b };
        if let Some(k) = &setting.local {
            let idx = layout.party_indices(sub.party);
            for &j in &idx {
                covered[j] = true;
            }
            factors.push(vec![k.clone()]);
            i = idx.last().map_or(i, |&last| last + 1);
            continue;
        }
        match setting.component(sub.dof) {
            Some(ket) => {
                if ket.len() != sub.dim {
                    return Err(Error::LayoutMismatch(format!(
                        "{} ket of length {} for photon {} subsystem of dimension {}",
                        sub.dof,
                        ket.len(),
                        sub.party,
                        sub.dim
                    )));
                }
                factors.push(vec![ket]);
            }
            None => factors.push(
                (0..sub.dim)
                    .map(|j| {
                        let mut e = vec![ZERO; sub.dim];
                        e[j] = ONE;
                        e
                    })
                    .collect(),
            ),
        }
        covered[i] = true;
        i += 1;
    }
    debug_assert!(covered.iter().all(|&c| c));

    let mut kets: Vec<Vec<C64>> = vec![vec![ONE]];
    for factor in &factors {
        kets = kets
            .iter()
            .flat_map(|k| factor.iter().map(move |f| kron_vec(k, f)))
            .collect();
    }
    Ok(JointElement { kets })
}

/// One line of a settings file: a pair of per-photon settings with string ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingsEntry {
    pub setting_a: String,
    pub setting_b: String,
    pub a: AnalyzerSetting,
    pub b: AnalyzerSetting,
}

impl SettingsEntry {
    pub fn element(&self, layout: &SubsystemLayout) -> Result<JointElement> {
        joint_projector(&self.a, &self.b, layout)
    }
}

pub fn read_settings(path: &Path) -> Result<Vec<SettingsEntry>> {
    let entries: Vec<SettingsEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for e in &entries {
        e.a.validate()?;
        e.b.validate()?;
    }
    Ok(entries)
}

pub fn settings_to_json(entries: &[SettingsEntry]) -> String {
    serde_json::to_string_pretty(entries).expect("settings are always serializable")
}

/// Overlap `|⟨u|v⟩|²` between normalized kets.
pub fn overlap(u: &[C64], v: &[C64]) -> f64 {
    inner(u, v).norm_sqr()
}
