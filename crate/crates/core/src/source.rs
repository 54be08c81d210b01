//! Hyperentangled two-photon states, noise channels and coincidence counting.
//!
//! The ideal source emits
//! `(|HH⟩ + |VV⟩) ⊗ (|rl⟩ + α|gg⟩ + |lr⟩) ⊗ (|ss⟩ + |ff⟩)` (normalized), with
//! `α` the complex weight of the zero-OAM component. Imperfections are applied
//! as channels in a fixed order:
//!
//! 1. per-DOF white noise `ρ → Vρ + (1 − V)·I/d` on each two-photon factor,
//! 2. polarization dephasing in the H/V basis, photon A then B,
//! 3. polarization depolarization, photon A then B,
//! 4. global white noise.
//!
//! Two-mode spatial encodings use the basis `(l, r)` for both photons. The
//! logical qubit is `|0⟩ = l, |1⟩ = r` for photon A and `|0⟩ = r, |1⟩ = l` for
//! photon B, so that `Φ+_spa = (|lr⟩ + |rl⟩)/√2` is the OAM-conserving pair.
//!
//! Rates are in Hz and durations in seconds. The default pair rate (10 kHz) and
//! background rate (0 Hz) are modelling assumptions, not measured values.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzers::{JointElement, SettingsEntry};
use crate::qcore::{ComplexMatrix, DensityOperator, Dof, StateVector, SubsystemLayout, C64, ONE, ZERO};
use crate::{Error, Result};

/// Zero-OAM amplitude of the best-fit pure state for the measured 36-dim state.
pub fn fitted_alpha() -> C64 {
    C64::from_polar(1.88, 0.16 * PI)
}

mod complex_pair {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(C64::new(re, im))
    }
}

/// Source and detection parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// `[re, im]` in JSON.
    #[serde(with = "complex_pair")]
    pub alpha: C64,
    /// 3 keeps `(l, g, r)`; 2 drops `g`.
    pub spatial_truncation: usize,
    pub visibility_poln: f64,
    pub visibility_spa: f64,
    pub visibility_et: f64,
    #[serde(rename = "dephase_poln_A")]
    pub dephase_poln_a: f64,
    #[serde(rename = "dephase_poln_B")]
    pub dephase_poln_b: f64,
    #[serde(rename = "depolarize_poln_A")]
    pub depolarize_poln_a: f64,
    #[serde(rename = "depolarize_poln_B")]
    pub depolarize_poln_b: f64,
    pub white_noise: f64,
    pub pair_rate: f64,
    /// Flat accidental rate added to every measurement element.
    pub background_rate: f64,
    pub seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            alpha: ONE,
            spatial_truncation: 3,
            visibility_poln: 1.0,
            visibility_spa: 1.0,
            visibility_et: 1.0,
            dephase_poln_a: 0.0,
            dephase_poln_b: 0.0,
            depolarize_poln_a: 0.0,
            depolarize_poln_b: 0.0,
            white_noise: 0.0,
            pair_rate: 1.0e4,
            background_rate: 0.0,
            seed: 0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("visibility_poln", self.visibility_poln),
            ("visibility_spa", self.visibility_spa),
            ("visibility_et", self.visibility_et),
            ("dephase_poln_A", self.dephase_poln_a),
            ("dephase_poln_B", self.dephase_poln_b),
            ("depolarize_poln_A", self.depolarize_poln_a),
            ("depolarize_poln_B", self.depolarize_poln_b),
            ("white_noise", self.white_noise),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        for (name, r) in [("pair_rate", self.pair_rate), ("background_rate", self.background_rate)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {r} must be finite and nonnegative"
                )));
            }
        }
        if self.spatial_truncation != 2 && self.spatial_truncation != 3 {
            return Err(Error::InvalidArgument(format!(
                "spatial_truncation = {} (expected 2 or 3)",
                self.spatial_truncation
            )));
        }
        if !(self.alpha.re.is_finite() && self.alpha.im.is_finite()) {
            return Err(Error::InvalidArgument("alpha must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BellKind {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

/// Two-qubit Bell state on one DOF, in the logical encoding described in the
/// module docs.
pub fn bell_ket(kind: BellKind, dof: Dof) -> StateVector {
    let s = FRAC_1_SQRT_2;
    // logical |00⟩,|01⟩,|10⟩,|11⟩ amplitudes
    let logical = match kind {
        BellKind::PhiPlus => [s, 0.0, 0.0, s],
        BellKind::PhiMinus => [s, 0.0, 0.0, -s],
        BellKind::PsiPlus => [0.0, s, s, 0.0],
        BellKind::PsiMinus => [0.0, s, -s, 0.0],
    };
    let amps: Vec<C64> = if dof == Dof::Spatial {
        // physical index (a, b) over (l, r): logical b is flipped
        let mut p = [0.0; 4];
        for a in 0..2 {
            for b in 0..2 {
                p[2 * a + b] = logical[2 * a + (1 - b)];
            }
        }
        p.iter().map(|&x| C64::new(x, 0.0)).collect()
    } else {
        logical.iter().map(|&x| C64::new(x, 0.0)).collect()
    };
    StateVector::new(amps, SubsystemLayout::bipartite(dof, 2, 2)).expect("4 amplitudes")
}

/// `(|rl⟩ + α|gg⟩ + |lr⟩)/norm` over `(l, g, r)²`, or `(|rl⟩ + |lr⟩)/√2` over
/// `(l, r)²` when `truncation` is 2.
pub fn spatial_ket(alpha: C64, truncation: usize) -> Result<StateVector> {
    match truncation {
        3 => {
            let mut amps = vec![ZERO; 9];
            amps[2] = ONE; // |l r⟩
            amps[4] = alpha; // |g g⟩
            amps[6] = ONE; // |r l⟩
            StateVector::new(amps, SubsystemLayout::bipartite(Dof::Spatial, 3, 3))?.normalized()
        }
        2 => Ok(bell_ket(BellKind::PhiPlus, Dof::Spatial)),
        t => Err(Error::InvalidArgument(format!(
            "spatial truncation {t} (expected 2 or 3)"
        ))),
    }
}

/// `Vρ + (1 − V)·I/d`
pub fn white_noise(rho: &DensityOperator, visibility: f64) -> DensityOperator {
    let d = rho.dim();
    let mixed = ComplexMatrix::identity(d).scale_real((1.0 - visibility) / d as f64);
    let m = &rho.matrix().scale_real(visibility) + &mixed;
    DensityOperator::from_parts_unchecked(m, rho.layout().clone())
}

/// Phase damping of strength `p` in the computational basis of `subsystem`:
/// coherences between different local levels shrink by `1 − p`.
pub fn dephase(rho: &DensityOperator, subsystem: usize, p: f64) -> Result<DensityOperator> {
    let layout = rho.layout();
    layout.check_index(subsystem)?;
    let digit: Vec<usize> = (0..rho.dim()).map(|i| layout.digits(i)[subsystem]).collect();
    let mut m = rho.matrix().clone();
    for r in 0..rho.dim() {
        for c in 0..rho.dim() {
            if digit[r] != digit[c] {
                m[(r, c)] *= 1.0 - p;
            }
        }
    }
    Ok(DensityOperator::from_parts_unchecked(m, layout.clone()))
}

/// Depolarizing channel of strength `p` on `subsystem`:
/// `ρ → (1 − p)ρ + p·(I/d ⊗ Tr_subsystem ρ)`.
pub fn depolarize(rho: &DensityOperator, subsystem: usize, p: f64) -> Result<DensityOperator> {
    let layout = rho.layout();
    layout.check_index(subsystem)?;
    let d_local = layout.dims()[subsystem];
    let n = rho.dim();
    let digits: Vec<Vec<usize>> = (0..n).map(|i| layout.digits(i)).collect();
    let mut out = rho.matrix().scale_real(1.0 - p);
    let mut dr = vec![0; layout.len()];
    let mut dc = vec![0; layout.len()];
    for r in 0..n {
        for c in 0..n {
            if digits[r][subsystem] != digits[c][subsystem] {
                continue;
            }
            dr.copy_from_slice(&digits[r]);
            dc.copy_from_slice(&digits[c]);
            let mut acc = ZERO;
            for k in 0..d_local {
                dr[subsystem] = k;
                dc[subsystem] = k;
                acc += rho.matrix()[(layout.join(&dr), layout.join(&dc))];
            }
            out[(r, c)] += acc * (p / d_local as f64);
        }
    }
    Ok(DensityOperator::from_parts_unchecked(out, layout.clone()))
}

/// Full hyperentangled state over `[poln, spatial, etime]` per photon with the
/// configured noise applied.
pub fn build_hyper_state(cfg: &SourceConfig) -> Result<DensityOperator> {
    cfg.validate()?;
    let poln = white_noise(
        &bell_ket(BellKind::PhiPlus, Dof::Polarization).to_density()?,
        cfg.visibility_poln,
    );
    let spa = white_noise(
        &spatial_ket(cfg.alpha, cfg.spatial_truncation)?.to_density()?,
        cfg.visibility_spa,
    );
    let et = white_noise(
        &bell_ket(BellKind::PhiPlus, Dof::EnergyTime).to_density()?,
        cfg.visibility_et,
    );
    let mut rho = poln.tensor(&spa).tensor(&et).to_canonical_order();

    let layout = rho.layout().clone();
    let poln_a = layout
        .find(crate::qcore::Party::A, Dof::Polarization)
        .expect("poln A present");
    let poln_b = layout
        .find(crate::qcore::Party::B, Dof::Polarization)
        .expect("poln B present");
    if cfg.dephase_poln_a > 0.0 {
        rho = dephase(&rho, poln_a, cfg.dephase_poln_a)?;
    }
    if cfg.dephase_poln_b > 0.0 {
        rho = dephase(&rho, poln_b, cfg.dephase_poln_b)?;
    }
    if cfg.depolarize_poln_a > 0.0 {
        rho = depolarize(&rho, poln_a, cfg.depolarize_poln_a)?;
    }
    if cfg.depolarize_poln_b > 0.0 {
        rho = depolarize(&rho, poln_b, cfg.depolarize_poln_b)?;
    }
    if cfg.white_noise > 0.0 {
        rho = white_noise(&rho, 1.0 - cfg.white_noise);
    }
    Ok(rho)
}

/// Names accepted by [`make_named_state`], with a short description and the
/// per-photon layout.
pub const CATALOG: &[(&str, &str)] = &[
    ("phi+_poln", "(|HH⟩+|VV⟩)/√2; 2⊗2"),
    ("phi-_poln", "(|HH⟩−|VV⟩)/√2; 2⊗2"),
    ("psi+_poln", "(|HV⟩+|VH⟩)/√2; 2⊗2"),
    ("psi-_poln", "(|HV⟩−|VH⟩)/√2; 2⊗2"),
    ("phi+_spa", "(|lr⟩+|rl⟩)/√2 over (l,r); 2⊗2"),
    ("phi-_spa", "(|lr⟩−|rl⟩)/√2 over (l,r); 2⊗2"),
    ("psi+_spa", "(|ll⟩+|rr⟩)/√2 over (l,r); 2⊗2"),
    ("psi-_spa", "(|ll⟩−|rr⟩)/√2 over (l,r); 2⊗2"),
    ("phi+_te", "(|ss⟩+|ff⟩)/√2; 2⊗2"),
    ("phi-_te", "(|ss⟩−|ff⟩)/√2; 2⊗2"),
    ("psi+_te", "(|sf⟩+|fs⟩)/√2; 2⊗2"),
    ("psi-_te", "(|sf⟩−|fs⟩)/√2; 2⊗2"),
    ("fig3a", "Φ+_poln ⊗ Φ+_spa; (2·2)⊗(2·2)"),
    ("fig3b", "Ψ+_poln ⊗ Φ+_spa; (2·2)⊗(2·2)"),
    ("fig3c", "½(|HH⟩⟨HH|+|VV⟩⟨VV|) ⊗ Φ+_spa; (2·2)⊗(2·2)"),
    ("fig3d", "¼ I_poln ⊗ Φ+_spa; (2·2)⊗(2·2)"),
    ("eq1_ideal", "Φ+_poln ⊗ (|rl⟩+|gg⟩+|lr⟩)/√3 ⊗ Φ+_te; (2·3·2)⊗(2·3·2)"),
    ("eq1_poln_spa", "Φ+_poln ⊗ (|rl⟩+|gg⟩+|lr⟩)/√3; (2·3)⊗(2·3)"),
    (
        "fig2_fit",
        "Φ+_poln ⊗ (|lr⟩+α|gg⟩+|rl⟩)/norm, α=1.88e^{0.16iπ}; (2·3)⊗(2·3)",
    ),
];

fn combine(a: &DensityOperator, b: &DensityOperator) -> DensityOperator {
    a.tensor(b).to_canonical_order()
}

/// Exact analytic state for a catalog name (see [`CATALOG`]).
pub fn make_named_state(name: &str) -> Result<DensityOperator> {
    let bell = |kind, dof| bell_ket(kind, dof).to_density();
    if let Some((kind, dof)) = parse_bell_name(name) {
        return bell(kind, dof);
    }
    let phi_spa = || bell(BellKind::PhiPlus, Dof::Spatial);
    let phi_poln = || bell(BellKind::PhiPlus, Dof::Polarization);
    match name {
        "fig3a" => Ok(combine(&phi_poln()?, &phi_spa()?)),
        "fig3b" => Ok(combine(&bell(BellKind::PsiPlus, Dof::Polarization)?, &phi_spa()?)),
        "fig3c" => {
            let mut m = ComplexMatrix::zeros(4, 4);
            m[(0, 0)] = C64::new(0.5, 0.0);
            m[(3, 3)] = C64::new(0.5, 0.0);
            let classical = DensityOperator::new(m, SubsystemLayout::bipartite(Dof::Polarization, 2, 2))?;
            Ok(combine(&classical, &phi_spa()?))
        }
        "fig3d" => {
            let mixed = DensityOperator::maximally_mixed(SubsystemLayout::bipartite(Dof::Polarization, 2, 2));
            Ok(combine(&mixed, &phi_spa()?))
        }
        "eq1_ideal" => build_hyper_state(&SourceConfig::default()),
        "eq1_poln_spa" => Ok(combine(&phi_poln()?, &spatial_ket(ONE, 3)?.to_density()?)),
        "fig2_fit" => Ok(combine(&phi_poln()?, &spatial_ket(fitted_alpha(), 3)?.to_density()?)),
        other => Err(Error::UnknownState(other.to_string())),
    }
}

fn parse_bell_name(name: &str) -> Option<(BellKind, Dof)> {
    let (kind, dof) = name.split_once('_')?;
    let kind = match kind {
        "phi+" => BellKind::PhiPlus,
        "phi-" => BellKind::PhiMinus,
        "psi+" => BellKind::PsiPlus,
        "psi-" => BellKind::PsiMinus,
        _ => return None,
    };
    let dof = match dof {
        "poln" => Dof::Polarization,
        "spa" => Dof::Spatial,
        "te" => Dof::EnergyTime,
        _ => return None,
    };
    Some((kind, dof))
}

/// `pair_rate · Tr(ρ·element) + background_rate`, in Hz.
pub fn expected_rate(rho: &DensityOperator, element: &JointElement, cfg: &SourceConfig) -> Result<f64> {
    if element.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "element of dimension {} for state of dimension {}",
            element.dim(),
            rho.dim()
        )));
    }
    Ok((cfg.pair_rate * element.probability(rho) + cfg.background_rate).max(0.0))
}

/// Pair rate that makes the mean expected count per settings entry equal
/// `mean_counts` over `duration` seconds (with no background).
pub fn pair_rate_for_mean_counts(
    rho: &DensityOperator,
    settings: &[SettingsEntry],
    mean_counts: f64,
    duration: f64,
) -> Result<f64> {
    let total: f64 = settings
        .iter()
        .map(|e| Ok(e.element(rho.layout())?.probability(rho)))
        .sum::<Result<f64>>()?;
    if !(total > 0.0) || settings.is_empty() {
        return Err(Error::VanishingProbability(total));
    }
    Ok(mean_counts * settings.len() as f64 / (total * duration))
}

/// One coincidence measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub setting_a: String,
    pub setting_b: String,
    pub counts: u64,
    /// Seconds.
    pub duration: f64,
    /// Expected counts, when known (not written to CSV).
    #[serde(skip)]
    pub expected: Option<f64>,
}

/// Draws `Poisson(rate · duration)` counts for every settings entry.
///
/// Record `i` uses its own ChaCha stream `(cfg.seed, i)`, so the output does
/// not depend on evaluation order or thread count.
pub fn simulate_counts(
    rho: &DensityOperator,
    settings: &[SettingsEntry],
    cfg: &SourceConfig,
    duration: f64,
) -> Result<Vec<CountRecord>> {
    cfg.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration {duration} must be positive")));
    }
    let expected: Vec<f64> = settings
        .iter()
        .map(|e| Ok(expected_rate(rho, &e.element(rho.layout())?, cfg)? * duration))
        .collect::<Result<_>>()?;
    Ok(settings
        .par_iter()
        .zip(expected.par_iter())
        .enumerate()
        .map(|(i, (entry, &mean))| CountRecord {
            setting_a: entry.setting_a.clone(),
            setting_b: entry.setting_b.clone(),
            counts: poisson_draw(cfg.seed, i as u64, mean),
            duration,
            expected: Some(mean),
        })
        .collect())
}

/// Poisson sample from the stream `(seed, stream)`.
pub fn poisson_draw(seed: u64, stream: u64, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let dist = Poisson::new(mean).expect("positive finite mean");
    dist.sample(&mut rng) as u64
}

pub fn write_counts_csv<W: Write>(records: &[CountRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_counts_csv<R: Read>(input: R) -> Result<Vec<CountRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: CountRecord = row?;
        if !(r.duration > 0.0 && r.duration.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "record ({}, {}) has non-positive duration {}",
                r.setting_a, r.setting_b, r.duration
            )));
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzers::{AnalyzerSetting, PolarizationSetting};
    use crate::qcore::{eigvals_hermitian, Party};

    fn poln_marginal(rho: &DensityOperator) -> DensityOperator {
        rho.reduce_to_dofs(&[Dof::Polarization]).unwrap()
    }

    #[test]
    fn ideal_state_is_pure_with_schmidt_rank_12() {
        let rho = build_hyper_state(&SourceConfig::default()).unwrap();
        assert_eq!(rho.layout().dims(), vec![2, 3, 2, 2, 3, 2]);
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        let reduced = rho.reduce_to_party(Party::A).unwrap();
        let ev = eigvals_hermitian(reduced.matrix()).unwrap();
        let rank = ev.iter().filter(|&&l| l > 1e-12).count();
        assert_eq!(rank, 12);
    }

    #[test]
    fn alpha_zero_spatial_factor() {
        let psi = spatial_ket(ZERO, 3).unwrap();
        let s = FRAC_1_SQRT_2;
        for (i, a) in psi.amplitudes().iter().enumerate() {
            let expected = if i == 2 || i == 6 { s } else { 0.0 };
            assert!((a - C64::new(expected, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn full_dephasing_leaves_classical_correlations() {
        let cfg = SourceConfig {
            dephase_poln_a: 1.0,
            ..SourceConfig::default()
        };
        let m = poln_marginal(&build_hyper_state(&cfg).unwrap());
        let mut expected = ComplexMatrix::zeros(4, 4);
        expected[(0, 0)] = C64::new(0.5, 0.0);
        expected[(3, 3)] = C64::new(0.5, 0.0);
        assert!((m.matrix() - &expected).max_abs() < 1e-12);
    }

    #[test]
    fn named_states() {
        let phi = make_named_state("phi+_poln").unwrap();
        let s = 0.5;
        for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            assert!((phi.matrix()[(i, j)].re - s).abs() < 1e-15);
        }
        let c = make_named_state("fig3c").unwrap();
        assert_eq!(c.layout().dims(), vec![2, 2, 2, 2]);
        assert_eq!(make_named_state("fig3d").unwrap().dim(), 16);
        assert!(matches!(make_named_state("nope"), Err(Error::UnknownState(_))));
        for (name, _) in CATALOG {
            let rho = make_named_state(name).unwrap();
            assert!(rho.layout().is_canonical(), "{name}");
        }
    }

    #[test]
    fn fig2_fit_uses_fitted_alpha() {
        let spa = make_named_state("fig2_fit")
            .unwrap()
            .reduce_to_dofs(&[Dof::Spatial])
            .unwrap();
        let a = fitted_alpha();
        let n2 = 2.0 + a.norm_sqr();
        // ⟨gg|ρ|lr⟩ = α / n²
        let got = spa.matrix()[(4, 2)];
        assert!((got - a / n2).norm() < 1e-12);
        assert!((a.norm() - 1.88).abs() < 1e-15);
        assert!((a.arg() - 0.16 * PI).abs() < 1e-15);
    }

    #[test]
    fn expected_rate_born_rule() {
        let rho = make_named_state("phi+_poln").unwrap();
        let h = AnalyzerSetting::poln(PolarizationSetting::named("H").unwrap());
        let e = crate::analyzers::joint_projector(&h, &h, rho.layout()).unwrap();
        let cfg = SourceConfig {
            pair_rate: 1000.0,
            background_rate: 0.0,
            ..Default::default()
        };
        assert!((expected_rate(&rho, &e, &cfg).unwrap() - 500.0).abs() < 1e-9);
        let id = JointElement::from_kets(
            (0..4)
                .map(|i| {
                    let mut k = vec![ZERO; 4];
                    k[i] = ONE;
                    k
                })
                .collect(),
        );
        let cfg_bg = SourceConfig {
            background_rate: 3.0,
            ..cfg
        };
        assert!((expected_rate(&rho, &id, &cfg_bg).unwrap() - 1003.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let bad = SourceConfig {
            white_noise: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SourceConfig {
            pair_rate: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SourceConfig {
            spatial_truncation: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"alpha": [1.0, 0.5], "dephase_poln_A": 0.25, "seed": 9}"#;
        let cfg = SourceConfig::from_json(json).unwrap();
        assert_eq!(cfg.alpha, C64::new(1.0, 0.5));
        assert_eq!(cfg.dephase_poln_a, 0.25);
        assert!(SourceConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn zero_expectation_gives_zero_counts() {
        for s in 0..50 {
            assert_eq!(poisson_draw(s, s, 0.0), 0);
        }
    }

    #[test]
    fn counts_csv_round_trip() {
        let recs = vec![CountRecord {
            setting_a: "H".into(),
            setting_b: "V".into(),
            counts: 12,
            duration: 1.5,
            expected: None,
        }];
        let mut buf = Vec::new();
        write_counts_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("setting_a,setting_b,counts,duration\n"));
        assert_eq!(read_counts_csv(buf.as_slice()).unwrap(), recs);
        assert!(read_counts_csv("setting_a,setting_b,counts,duration\nH,V,1,0\n".as_bytes()).is_err());
    }
}
