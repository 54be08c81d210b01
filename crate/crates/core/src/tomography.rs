//! Projector sets and density-matrix reconstruction from coincidence counts.
//!
//! The likelihood is Poisson: element `i` with duration `t_i` has mean
//! `λ_i = N·t_i·Tr(ρ Π_i)`, where the flux `N` is a nuisance parameter profiled
//! out at every step (`N = Σc / Tr(ρH)` with `H = Σ t_i Π_i`). Maximizing over
//! `N` leaves the multinomial likelihood `Σ c_i ln q_i` with
//! `q_i = t_i Tr(ρΠ_i)/Tr(ρH)`.
//!
//! The maximum-likelihood iteration works on `σ ∝ H^{1/2} ρ H^{1/2}` with the
//! whitened elements `Π'_i = t_i H^{-1/2} Π_i H^{-1/2}`, which sum to the
//! identity even when the raw set does not. Writing `σ ∝ AA†`, the `RσR` step
//! is `A → A + (R − I)A`. That direction is followed with a line search and
//! Polak-Ribière conjugation, so the recorded log-likelihood never decreases
//! and positivity holds by construction. Once single steps stop gaining, a
//! Newton polish (interior maxima) or a low-rank Gauss-Newton polish (maxima on
//! the PSD boundary) removes the slow tail of the iteration.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::FRAC_1_SQRT_2;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzers::{AnalyzerSetting, JointElement, PolarizationSetting, SettingsEntry};
use crate::metrics;
use crate::qcore::json::LayoutJson;
use crate::qcore::{
    eig_hermitian, eigvals_hermitian, inv_sqrt_pd, sqrt_psd, ComplexMatrix, DensityOperator, Dof, Party,
    SubsystemLayout, C64, I, ONE, ZERO,
};
use crate::source::{read_counts_csv, CountRecord};
use crate::{Error, Result};

/// Floor on predicted probabilities inside logarithms and ratios.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Elements per parallel work unit. Partial sums are combined in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 64;

/// Largest step multiple tried along `R − I` in the likelihood line search.
const MAX_EXTRAPOLATION: f64 = 64.0;

/// Per-photon kets whose projectors span the Hermitian operators, paired into
/// joint elements.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorSet {
    dim: usize,
    kets: Vec<Vec<C64>>,
    ids: Vec<String>,
}

impl ProjectorSet {
    /// Rejects sets whose `d²` projectors are linearly dependent.
    pub fn new(kets: Vec<Vec<C64>>, ids: Vec<String>) -> Result<Self> {
        let dim = kets.first().map_or(0, Vec::len);
        if dim < 2 || kets.iter().any(|k| k.len() != dim) {
            return Err(Error::InvalidArgument(
                "projector kets must share a dimension ≥ 2".into(),
            ));
        }
        if ids.len() != kets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ids for {} kets",
                ids.len(),
                kets.len()
            )));
        }
        let set = Self { dim, kets, ids };
        let rank = set.gram_rank()?;
        if rank < dim * dim {
            return Err(Error::RankDeficient {
                rank,
                required: dim * dim,
            });
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kets(&self) -> &[Vec<C64>] {
        &self.kets
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Rank of the Gram matrix `Tr(P_k P_l) = |⟨k|l⟩|²` of the per-photon
    /// projectors.
    pub fn gram_rank(&self) -> Result<usize> {
        let n = self.kets.len();
        let mut g = ComplexMatrix::zeros(n, n);
        for k in 0..n {
            for l in 0..n {
                g[(k, l)] = C64::new(crate::qcore::inner(&self.kets[k], &self.kets[l]).norm_sqr(), 0.0);
            }
        }
        Ok(numerical_rank(&eigvals_hermitian(&g)?))
    }

    /// All `(a, b)` pairs of per-photon projectors, photon A major.
    ///
    /// A photon carried by a single polarization qubit gets wave-plate
    /// settings; any other photon gets a raw `local` ket.
    pub fn settings(&self, layout: &SubsystemLayout) -> Result<Vec<SettingsEntry>> {
        for party in [Party::A, Party::B] {
            if layout.party_dim(party) != self.dim {
                return Err(Error::LayoutMismatch(format!(
                    "photon {party} has dimension {} but the projector set has {}",
                    layout.party_dim(party),
                    self.dim
                )));
            }
        }
        let per_party = |party: Party| -> Result<Vec<AnalyzerSetting>> {
            let idx = layout.party_indices(party);
            let poln_only = idx.len() == 1 && layout.subsystems()[idx[0]].dof == Dof::Polarization;
            self.kets
                .iter()
                .map(|k| {
                    if poln_only {
                        Ok(AnalyzerSetting::poln(PolarizationSetting::for_ket(k)?))
                    } else {
                        AnalyzerSetting::local(k.clone())
                    }
                })
                .collect()
        };
        let sa = per_party(Party::A)?;
        let sb = per_party(Party::B)?;
        let mut out = Vec::with_capacity(self.kets.len().pow(2));
        for (ia, a) in self.ids.iter().zip(&sa) {
            for (ib, b) in self.ids.iter().zip(&sb) {
                out.push(SettingsEntry {
                    setting_a: ia.clone(),
                    setting_b: ib.clone(),
                    a: a.clone(),
                    b: b.clone(),
                });
            }
        }
        Ok(out)
    }
}

fn numerical_rank(eigenvalues: &[f64]) -> usize {
    let max = eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    eigenvalues.iter().filter(|&&l| l > 1e-10 * max).count()
}

/// `d` basis kets `e_j`, then `(e_j + e_k)/√2` and `(e_j + i e_k)/√2` for each
/// `j < k`. For `d = 2` these are H, V, D and R.
pub fn canonical_set(d: usize) -> Result<ProjectorSet> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("local dimension {d} (need ≥ 2)")));
    }
    let mut kets = Vec::with_capacity(d * d);
    let mut ids = Vec::with_capacity(d * d);
    for j in 0..d {
        let mut k = vec![ZERO; d];
        k[j] = ONE;
        kets.push(k);
        ids.push(format!("e{j}"));
    }
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    for j in 0..d {
        for k in j + 1..d {
            let mut x = vec![ZERO; d];
            x[j] = s;
            x[k] = s;
            let mut y = vec![ZERO; d];
            y[j] = s;
            y[k] = I * s;
            kets.push(x);
            ids.push(format!("x{j}_{k}"));
            kets.push(y);
            ids.push(format!("y{j}_{k}"));
        }
    }
    ProjectorSet::new(kets, ids)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step raises the log-likelihood by less than this.
    pub tolerance: f64,
}

impl Default for TomographyOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Linear,
    #[default]
    Mle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub id_a: String,
    pub id_b: String,
    pub element: JointElement,
    pub counts: f64,
    /// Seconds.
    pub duration: f64,
}

/// Counts paired with their measurement elements, sorted by id pair so that
/// the input order of records never matters.
#[derive(Clone, Debug)]
pub struct TomographyProblem {
    layout: SubsystemLayout,
    measurements: Vec<Measurement>,
    pub options: TomographyOptions,
}

impl TomographyProblem {
    pub fn new(
        layout: SubsystemLayout,
        mut measurements: Vec<Measurement>,
        options: TomographyOptions,
    ) -> Result<Self> {
        if measurements.is_empty() {
            return Err(Error::InvalidArgument("no measurements".into()));
        }
        let d = layout.total_dim();
        for m in &measurements {
            if m.element.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "element ({}, {}) has dimension {} for layout {layout}",
                    m.id_a,
                    m.id_b,
                    m.element.dim()
                )));
            }
            if !(m.counts >= 0.0 && m.counts.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "counts {} for ({}, {})",
                    m.counts, m.id_a, m.id_b
                )));
            }
            if !(m.duration > 0.0 && m.duration.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "duration {} for ({}, {})",
                    m.duration, m.id_a, m.id_b
                )));
            }
        }
        measurements.sort_by(|x, y| (&x.id_a, &x.id_b).cmp(&(&y.id_a, &y.id_b)));
        if let Some(w) = measurements
            .windows(2)
            .find(|w| (&w[0].id_a, &w[0].id_b) == (&w[1].id_a, &w[1].id_b))
        {
            return Err(Error::InvalidArgument(format!(
                "duplicate setting pair ({}, {})",
                w[0].id_a, w[0].id_b
            )));
        }
        Ok(Self {
            layout,
            measurements,
            options,
        })
    }

    /// Matches count records to settings by id pair. Repeated records for one
    /// pair are pooled (counts and durations add).
    pub fn from_records(
        layout: SubsystemLayout,
        settings: &[SettingsEntry],
        records: &[CountRecord],
        options: TomographyOptions,
    ) -> Result<Self> {
        let mut pooled: HashMap<(&str, &str), (u64, f64)> = HashMap::new();
        // BTreeMap keeps the duration sum independent of record order
        let mut durations: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
        for r in records {
            let key = (r.setting_a.as_str(), r.setting_b.as_str());
            pooled.entry(key).or_insert((0, 0.0)).0 += r.counts;
            durations.entry(key).or_default().push(r.duration);
        }
        for (key, ds) in durations {
            ds_sorted_sum(ds, &mut pooled.get_mut(&key).expect("same keys").1);
        }
        let known: std::collections::HashSet<(&str, &str)> = settings
            .iter()
            .map(|s| (s.setting_a.as_str(), s.setting_b.as_str()))
            .collect();
        if let Some((a, b)) = pooled.keys().find(|k| !known.contains(*k)) {
            return Err(Error::InvalidArgument(format!(
                "count record for unknown setting pair ({a}, {b})"
            )));
        }
        let measurements = settings
            .iter()
            .map(|s| {
                let &(counts, duration) = pooled
                    .get(&(s.setting_a.as_str(), s.setting_b.as_str()))
                    .ok_or_else(|| Error::MissingRecord(s.setting_a.clone(), s.setting_b.clone()))?;
                Ok(Measurement {
                    id_a: s.setting_a.clone(),
                    id_b: s.setting_b.clone(),
                    element: s.element(&layout)?,
                    counts: counts as f64,
                    duration,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layout, measurements, options)
    }

    /// Noiseless data: real-valued expected counts, unit durations.
    pub fn from_expected(
        layout: SubsystemLayout,
        settings: &[SettingsEntry],
        expected: &[f64],
        options: TomographyOptions,
    ) -> Result<Self> {
        if settings.len() != expected.len() {
            return Err(Error::InvalidArgument(format!(
                "{} expected counts for {} settings",
                expected.len(),
                settings.len()
            )));
        }
        let measurements = settings
            .iter()
            .zip(expected)
            .map(|(s, &c)| {
                Ok(Measurement {
                    id_a: s.setting_a.clone(),
                    id_b: s.setting_b.clone(),
                    element: s.element(&layout)?,
                    counts: c,
                    duration: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layout, measurements, options)
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn total_counts(&self) -> f64 {
        self.measurements.iter().map(|m| m.counts).sum()
    }

    /// `H = Σ t_i Π_i`
    pub fn exposure_operator(&self) -> ComplexMatrix {
        let d = self.layout.total_dim();
        let partials: Vec<ComplexMatrix> = self
            .measurements
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut h = ComplexMatrix::zeros(d, d);
                for m in chunk {
                    for k in m.element.kets() {
                        add_outer(&mut h, k, m.duration);
                    }
                }
                h
            })
            .collect();
        sum_in_order(partials, d)
    }

    /// Expected counts `N·t_i·Tr(ρΠ_i)` under a state and flux.
    pub fn predicted_counts(&self, rho: &DensityOperator, intensity: f64) -> Vec<f64> {
        self.measurements
            .par_iter()
            .map(|m| intensity * m.duration * m.element.probability(rho))
            .collect()
    }

    fn with_counts(&self, counts: Vec<f64>) -> Self {
        let mut out = self.clone();
        for (m, c) in out.measurements.iter_mut().zip(counts) {
            m.counts = c;
        }
        out
    }
}

fn ds_sorted_sum(mut ds: Vec<f64>, out: &mut f64) {
    ds.sort_by(f64::total_cmp);
    *out = ds.iter().sum();
}

fn add_outer(m: &mut ComplexMatrix, ket: &[C64], weight: f64) {
    let n = ket.len();
    let data = m.as_mut_slice();
    for i in 0..n {
        let vi = ket[i] * weight;
        if vi == ZERO {
            continue;
        }
        let row = &mut data[i * n..(i + 1) * n];
        for (dst, kj) in row.iter_mut().zip(ket) {
            *dst += vi * kj.conj();
        }
    }
}

fn sum_in_order(parts: Vec<ComplexMatrix>, d: usize) -> ComplexMatrix {
    parts.into_iter().fold(ComplexMatrix::zeros(d, d), |acc, p| &acc + &p)
}

/// Coordinates `Tr(G_k M)` in the orthonormal Hermitian basis `E_jj`,
/// `(E_jk + E_kj)/√2`, `i(E_jk − E_kj)/√2` (`j < k`), in that order.
fn hermitian_coords(m: &ComplexMatrix) -> Vec<f64> {
    let d = m.rows();
    let mut out = Vec::with_capacity(d * d);
    for j in 0..d {
        out.push(m[(j, j)].re);
    }
    for j in 0..d {
        for k in j + 1..d {
            let z = m[(j, k)];
            out.push(std::f64::consts::SQRT_2 * z.re);
            out.push(std::f64::consts::SQRT_2 * z.im);
        }
    }
    out
}

/// Inverse of [`hermitian_coords`].
fn from_hermitian_coords(x: &[f64], d: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d, d);
    for j in 0..d {
        m[(j, j)] = C64::new(x[j], 0.0);
    }
    let mut idx = d;
    for j in 0..d {
        for k in j + 1..d {
            let z = C64::new(x[idx], x[idx + 1]) * FRAC_1_SQRT_2;
            m[(j, k)] = z;
            m[(k, j)] = z.conj();
            idx += 2;
        }
    }
    m
}

/// Linear-inversion estimate; may have negative eigenvalues.
#[derive(Clone, Debug)]
pub struct LinearEstimate {
    /// Hermitian and unit trace.
    pub matrix: ComplexMatrix,
    pub layout: SubsystemLayout,
    /// Total flux `Tr μ` of the unnormalized fit, per unit duration.
    pub intensity: f64,
    pub min_eigenvalue: f64,
}

impl LinearEstimate {
    /// False when the minimum eigenvalue is below −1e-6.
    pub fn is_physical(&self) -> bool {
        self.min_eigenvalue >= -1e-6
    }

    pub fn to_density(&self) -> Result<DensityOperator> {
        if !self.is_physical() {
            return Err(Error::NotPsd(self.min_eigenvalue));
        }
        let eig = crate::qcore::eig_hermitian(&self.matrix)?;
        let clamped = eig.reconstruct_with(|l| l.max(0.0));
        DensityOperator::normalized_from(clamped, self.layout.clone())
    }
}

/// Least-squares solution of `c_i = t_i Tr(μ Π_i)` over Hermitian `μ`,
/// parameterized in an orthonormal Hermitian basis; `ρ = μ/Tr μ`.
pub fn linear_inversion(problem: &TomographyProblem) -> Result<LinearEstimate> {
    let d = problem.layout.total_dim();
    let p = d * d;
    let ms = &problem.measurements;
    let rows: Vec<Vec<f64>> = ms
        .par_iter()
        .map(|m| {
            hermitian_coords(&m.element.matrix())
                .into_iter()
                .map(|x| x * m.duration)
                .collect()
        })
        .collect();
    let a = DMatrix::from_fn(ms.len(), p, |i, k| rows[i][k]);
    let c = DVector::from_iterator(ms.len(), ms.iter().map(|m| m.counts));
    let ata = a.transpose() * &a;
    let atc = a.transpose() * &c;
    let scale = ata.diagonal().max().max(f64::MIN_POSITIVE);
    let chol = match ata.clone().cholesky() {
        Some(ch) if ch.l_dirty().diagonal().iter().all(|&l| l * l > 1e-12 * scale) => ch,
        _ => {
            let ev: Vec<f64> = ata.symmetric_eigen().eigenvalues.iter().copied().collect();
            return Err(Error::RankDeficient {
                rank: numerical_rank(&ev),
                required: p,
            });
        }
    };
    let x = chol.solve(&atc);
    let mu = from_hermitian_coords(x.as_slice(), d);
    let intensity = mu.trace().re;
    if !(intensity > 0.0) {
        return Err(Error::ZeroCounts(
            "linear inversion (fitted flux is not positive)".into(),
        ));
    }
    let matrix = mu.scale_real(1.0 / intensity).hermitian_part();
    let min_eigenvalue = eigvals_hermitian(&matrix)?.last().copied().unwrap_or(0.0);
    Ok(LinearEstimate {
        matrix,
        layout: problem.layout.clone(),
        intensity,
        min_eigenvalue,
    })
}

#[derive(Clone, Debug)]
pub struct TomographyResult {
    pub rho: DensityOperator,
    /// Poisson log-likelihood `Σ c ln λ − λ` (without `ln c!`) after each
    /// accepted iterate, starting with the initial state.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted flux `N` in `λ_i = N t_i Tr(ρΠ_i)`.
    pub intensity: f64,
}

impl TomographyResult {
    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

struct Whitened {
    /// `√t_i H^{-1/2}|ψ⟩` for every ket of every element.
    kets: Vec<Vec<Vec<C64>>>,
    counts: Vec<f64>,
    total: f64,
    dim: usize,
}

impl Whitened {
    fn probabilities(&self, sigma: &ComplexMatrix) -> Vec<f64> {
        self.kets
            .par_iter()
            .map(|ks| ks.iter().map(|k| sigma.expectation(k).re).sum::<f64>())
            .collect()
    }

    fn log_likelihood(&self, q: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .counts
            .par_chunks(CHUNK)
            .zip(q.par_chunks(CHUNK))
            .map(|(cs, qs)| {
                cs.iter()
                    .zip(qs)
                    .filter(|(&c, _)| c > 0.0)
                    .map(|(&c, &qi)| c * (self.total * qi.max(PROBABILITY_FLOOR)).ln())
                    .sum::<f64>()
            })
            .collect();
        terms.iter().sum::<f64>() - self.total
    }

    /// `Σ c_i ln(q'_i/q_i)`, evaluated through `ln_1p` so that increments far
    /// below the magnitude of the log-likelihood itself stay resolvable.
    fn gain(&self, q_old: &[f64], q_new: &[f64]) -> f64 {
        let parts: Vec<f64> = self
            .counts
            .par_chunks(CHUNK)
            .zip(q_old.par_chunks(CHUNK).zip(q_new.par_chunks(CHUNK)))
            .map(|(cs, (qo, qn))| {
                let mut acc = 0.0;
                for ((&c, &a), &b) in cs.iter().zip(qo).zip(qn) {
                    if c > 0.0 {
                        let (a, b) = (a.max(PROBABILITY_FLOOR), b.max(PROBABILITY_FLOOR));
                        acc += c * ((b - a) / a).ln_1p();
                    }
                }
                acc
            })
            .collect();
        parts.iter().sum()
    }

    /// `R = Σ (f_i/q_i) Π'_i`
    fn r_operator(&self, q: &[f64]) -> ComplexMatrix {
        let d = self.dim;
        let parts: Vec<ComplexMatrix> = self
            .kets
            .par_chunks(CHUNK)
            .zip(self.counts.par_chunks(CHUNK))
            .zip(q.par_chunks(CHUNK))
            .map(|((ks, cs), qs)| {
                let mut r = ComplexMatrix::zeros(d, d);
                for ((kets, &c), &qi) in ks.iter().zip(cs).zip(qs) {
                    if c == 0.0 {
                        continue;
                    }
                    let w = c / self.total / qi.max(PROBABILITY_FLOOR);
                    for k in kets {
                        add_outer(&mut r, k, w);
                    }
                }
                r
            })
            .collect();
        sum_in_order(parts, d)
    }
}

/// `σ = AA†/Tr(AA†)`
fn state_from_factor(a: &ComplexMatrix) -> ComplexMatrix {
    let s = (a * &a.adjoint()).hermitian_part();
    let tr = s.trace().re;
    s.scale_real(1.0 / tr)
}

/// `Re Tr(X†Y)`
fn real_inner(x: &ComplexMatrix, y: &ComplexMatrix) -> f64 {
    x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| (a.conj() * b).re)
        .sum()
}

/// Picks `t` for `A + tD`: doubling from 1 while the likelihood improves,
/// halving when the full step loses likelihood. Returns the new factor (rescaled
/// to unit trace), state, probabilities and gain.
fn line_search(
    wh: &Whitened,
    factor: &ComplexMatrix,
    direction: &ComplexMatrix,
    q: &[f64],
) -> Option<(ComplexMatrix, ComplexMatrix, Vec<f64>, f64)> {
    let try_t = |t: f64| {
        let a = factor + &direction.scale_real(t);
        let sigma = state_from_factor(&a);
        let a = a.scale_real(1.0 / a.frobenius_norm());
        let qc = wh.probabilities(&sigma);
        let g = wh.gain(q, &qc);
        (a, sigma, qc, g)
    };
    let first = try_t(1.0);
    if first.3 >= 0.0 {
        let mut best = first;
        let mut t = 1.0;
        while t < MAX_EXTRAPOLATION {
            t *= 2.0;
            let cand = try_t(t);
            if cand.3 > best.3 {
                best = cand;
            } else {
                break;
            }
        }
        return Some(best);
    }
    let mut t = 0.5;
    for _ in 0..40 {
        let cand = try_t(t);
        if cand.3 >= 0.0 {
            // keep shrinking while that still helps
            let mut best = cand;
            for _ in 0..40 {
                t *= 0.5;
                let next = try_t(t);
                if next.3 > best.3 {
                    best = next;
                } else {
                    break;
                }
            }
            return Some(best);
        }
        t *= 0.5;
    }
    None
}

/// Smallest eigenvalue of `σ` for which the Newton polish is attempted.
const NEWTON_MIN_EIGENVALUE: f64 = 1e-9;

/// Newton iterations on the stationarity condition `R(σ) = I` for an interior
/// maximum. The ascent iteration ends where single-step gains sink into
/// rounding noise, which on flat likelihoods can leave `σ` visibly short of
/// the optimum; Newton reads the gradient instead and closes that gap. Each
/// step must keep `σ` positive definite and not lower the likelihood.
fn newton_polish(
    wh: &Whitened,
    sigma: &ComplexMatrix,
    q: &[f64],
    tol: f64,
) -> Result<Option<(ComplexMatrix, Vec<f64>)>> {
    let d = wh.dim;
    if eigvals_hermitian(sigma)?.last().copied().unwrap_or(0.0) < NEWTON_MIN_EIGENVALUE {
        return Ok(None);
    }
    let p = d * d;
    let coords: Vec<Vec<f64>> = wh
        .kets
        .par_iter()
        .map(|ks| {
            let mut m = ComplexMatrix::zeros(d, d);
            for k in ks {
                add_outer(&mut m, k, 1.0);
            }
            hermitian_coords(&m)
        })
        .collect();
    let a = DMatrix::from_fn(coords.len(), p, |i, k| coords[i][k]);
    let identity = ComplexMatrix::identity(d);
    let mut sigma = sigma.clone();
    let mut q = q.to_vec();
    let mut gains = Vec::new();
    for _ in 0..20 {
        // Hessian of Σ f ln q − Tr σ is −Σ (f_i/q_i²) a_i a_iᵀ
        let weights: Vec<f64> = wh
            .counts
            .iter()
            .zip(&q)
            .map(|(&c, &qi)| c / wh.total / qi.max(PROBABILITY_FLOOR).powi(2))
            .collect();
        let mut aw = a.clone();
        for (i, mut row) in aw.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let hess = a.transpose() * &aw;
        let grad = DVector::from_vec(hermitian_coords(&(&wh.r_operator(&q) - &identity)));
        let Some(chol) = hess.cholesky() else { break };
        let step = from_hermitian_coords(chol.solve(&grad).as_slice(), d);
        let cand = (&sigma + &step).hermitian_part();
        let tr = cand.trace().re;
        if !(tr > 0.0) {
            break;
        }
        let cand = cand.scale_real(1.0 / tr);
        if eigvals_hermitian(&cand)?.last().copied().unwrap_or(-1.0) <= 0.0 {
            break;
        }
        let qc = wh.probabilities(&cand);
        let g = wh.gain(&q, &qc);
        if !(g >= 0.0) {
            break;
        }
        sigma = cand;
        q = qc;
        gains.push(g);
        if g < tol * 1e-3 || step.frobenius_norm() < 1e-15 {
            break;
        }
    }
    Ok((!gains.is_empty()).then_some((sigma, gains)))
}

/// Parameter budget `2·d·r` for the low-rank polish.
const LOW_RANK_MAX_PARAMS: usize = 512;

/// Gauss-Newton on a rank-`r` factor `A` (`σ ∝ AA†`) for maxima on the PSD
/// boundary, where the full-rank Newton step does not apply and the ascent
/// iteration creeps toward the zero eigenvalues. Ranks are taken from the
/// spectrum of `σ` wherever the tail falls below `1e-4·λ_max`; the best
/// candidate wins. Steps that lower the likelihood are halved or rejected.
fn low_rank_polish(
    wh: &Whitened,
    sigma: &ComplexMatrix,
    q: &[f64],
    tol: f64,
) -> Result<Option<(ComplexMatrix, Vec<f64>)>> {
    let d = wh.dim;
    let eig = eig_hermitian(sigma)?;
    let top = eig.values[0];
    let mut best: Option<(ComplexMatrix, Vec<f64>)> = None;
    for r in 1..d {
        if eig.values[r] >= 1e-4 * top || 2 * d * r > LOW_RANK_MAX_PARAMS {
            continue;
        }
        let mut a = ComplexMatrix::zeros(d, r);
        for k in 0..r {
            let v = eig.vector(k);
            let s = eig.values[k].max(0.0).sqrt();
            for i in 0..d {
                a[(i, k)] = v[i] * s;
            }
        }
        if let Some(found) = gauss_newton_factor(wh, a, q, tol) {
            let total = |g: &[f64]| g.iter().sum::<f64>();
            if best.as_ref().is_none_or(|b| total(&found.1) > total(&b.1)) {
                best = Some(found);
            }
        }
    }
    Ok(best)
}

fn gauss_newton_factor(wh: &Whitened, mut a: ComplexMatrix, q: &[f64], tol: f64) -> Option<(ComplexMatrix, Vec<f64>)> {
    let (d, r) = (a.rows(), a.cols());
    let p = 2 * d * r;
    let mut q_ref = q.to_vec();
    let mut sigma = None;
    let mut gains = Vec::new();
    for _ in 0..20 {
        // unnormalized model q̃_i = ⟨φ_i|AA†|φ_i⟩; L = Σ f ln q̃ − Σ q̃
        let raw = (&a * &a.adjoint()).hermitian_part();
        let qt = wh.probabilities(&raw);
        let rows: Vec<(Vec<f64>, f64, f64)> = wh
            .kets
            .par_iter()
            .zip(&wh.counts)
            .zip(&qt)
            .map(|((ks, &c), &qi)| {
                let mut g = vec![0.0; p];
                for k in ks {
                    // 2 φ (φ† A), stacked as [re, im]
                    for col in 0..r {
                        let proj: C64 = (0..d).map(|i| k[i].conj() * a[(i, col)]).sum();
                        for i in 0..d {
                            let z = k[i] * proj * 2.0;
                            g[i * r + col] += z.re;
                            g[d * r + i * r + col] += z.im;
                        }
                    }
                }
                let qi = qi.max(PROBABILITY_FLOOR);
                (g, c / wh.total / qi, c / wh.total / (qi * qi))
            })
            .collect();
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for (g, w1, w2) in &rows {
            let gv = DVector::from_column_slice(g);
            grad.axpy(w1 - 1.0, &gv, 1.0);
            hess.ger(*w2, &gv, &gv, 1.0);
        }
        let damping = 1e-12 * hess.diagonal().max().max(f64::MIN_POSITIVE);
        for i in 0..p {
            hess[(i, i)] += damping;
        }
        let chol = hess.cholesky()?;
        let step = chol.solve(&grad);
        let mut delta = ComplexMatrix::zeros(d, r);
        for i in 0..d {
            for col in 0..r {
                delta[(i, col)] = C64::new(step[i * r + col], step[d * r + i * r + col]);
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..10 {
            let cand_a = &a + &delta.scale_real(t);
            let cand = state_from_factor(&cand_a);
            let qc = wh.probabilities(&cand);
            let g = wh.gain(&q_ref, &qc);
            if g >= 0.0 {
                accepted = Some((cand_a, cand, qc, g));
                break;
            }
            t *= 0.5;
        }
        let Some((a_new, s_new, q_new, g)) = accepted else {
            break;
        };
        a = a_new;
        sigma = Some(s_new);
        q_ref = q_new;
        gains.push(g);
        if g < tol * 1e-3 {
            break;
        }
    }
    sigma.map(|s| (s, gains))
}

/// Maximum-likelihood state by the accelerated whitened `RρR` iteration,
/// started from the maximally mixed state.
pub fn mle_reconstruct(problem: &TomographyProblem) -> Result<TomographyResult> {
    let opts = &problem.options;
    let d = problem.layout.total_dim();
    let total = problem.total_counts();
    if !(total > 0.0) {
        return Err(Error::ZeroCounts("the whole data set".into()));
    }
    let h = problem.exposure_operator();
    let w = inv_sqrt_pd(&h).map_err(|_| Error::RankDeficient {
        rank: eigvals_hermitian(&h).map(|ev| numerical_rank(&ev)).unwrap_or(0),
        required: d,
    })?;
    let kets: Vec<Vec<Vec<C64>>> = problem
        .measurements
        .par_iter()
        .map(|m| {
            let s = m.duration.sqrt();
            m.element
                .kets()
                .iter()
                .map(|k| w.apply(k).into_iter().map(|z| z * s).collect())
                .collect()
        })
        .collect();
    let wh = Whitened {
        kets,
        counts: problem.measurements.iter().map(|m| m.counts).collect(),
        total,
        dim: d,
    };

    // ρ = I/D maps to σ = H/Tr H
    let mut sigma = h.hermitian_part().scale_real(1.0 / h.trace().re);
    let mut factor = sqrt_psd(&sigma)?;
    let mut q = wh.probabilities(&sigma);
    let mut ll = wh.log_likelihood(&q);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let identity = ComplexMatrix::identity(d);
    let mut prev_grad: Option<ComplexMatrix> = None;
    let mut direction = ComplexMatrix::zeros(d, d);

    while iterations < opts.max_iterations {
        iterations += 1;
        // ascent direction in the factor: (R − I)A, so A + (R − I)A = RA is the RρR step
        let grad = &(&wh.r_operator(&q) - &identity) * &factor;
        let beta = match &prev_grad {
            Some(g0) => {
                let denom = real_inner(g0, g0);
                if denom > 0.0 {
                    (real_inner(&grad, &(&grad - g0)) / denom).max(0.0)
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        direction = &grad + &direction.scale_real(beta);
        if real_inner(&grad, &direction) <= 0.0 {
            direction = grad.clone();
        }
        let mut accepted = line_search(&wh, &factor, &direction, &q);
        if accepted.is_none() && beta > 0.0 {
            direction = grad.clone();
            accepted = line_search(&wh, &factor, &direction, &q);
        }
        let steepest = direction == grad;
        prev_grad = Some(grad);
        let Some((a_new, s_new, q_new, gain)) = accepted else {
            // no ascent direction left at working precision
            converged = true;
            break;
        };
        factor = a_new;
        sigma = s_new;
        q = q_new;
        ll += gain;
        trace.push(ll);
        if gain < opts.tolerance {
            if steepest {
                converged = true;
                break;
            }
            // a short conjugate step says little; confirm with a plain one
            prev_grad = None;
            direction = ComplexMatrix::zeros(d, d);
        }
    }

    if converged {
        let polished = match newton_polish(&wh, &sigma, &q, opts.tolerance)? {
            Some(found) => Some(found),
            None => low_rank_polish(&wh, &sigma, &q, opts.tolerance)?,
        };
        if let Some((s_new, gains)) = polished {
            sigma = s_new;
            for g in gains {
                ll += g;
                trace.push(ll);
            }
        }
    }

    let rho_m = (&(&w * &sigma) * &w).hermitian_part();
    let rho = DensityOperator::normalized_from(rho_m, problem.layout.clone())?;
    let intensity = total / rho.expectation(&h);
    Ok(TomographyResult {
        rho,
        log_likelihood: trace,
        iterations,
        converged,
        intensity,
    })
}

/// Sample standard deviations of the reconstructed metrics over parametric
/// bootstrap resamples. Fidelity is taken against the original estimate and
/// tangle is only reported for two-qubit layouts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub resamples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negativity: Option<f64>,
}

/// Resamples every count from `Poisson(N t_i Tr(ρ̂ Π_i))`, reruns the MLE and
/// reports metric spreads. Resample `r` draws from ChaCha stream `(seed, r)`.
pub fn bootstrap_errors(
    problem: &TomographyProblem,
    result: &TomographyResult,
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapReport> {
    if n_resamples == 0 {
        return Ok(BootstrapReport::default());
    }
    if !result.converged {
        return Err(Error::InvalidArgument(
            "bootstrap needs a converged reconstruction".into(),
        ));
    }
    let predicted = problem.predicted_counts(&result.rho, result.intensity);
    let two_qubit = problem.layout.dims() == [2, 2];
    let samples: Vec<[f64; 4]> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let counts = predicted
                .iter()
                .map(|&lam| {
                    if lam > 0.0 {
                        Poisson::new(lam).expect("positive mean").sample(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect();
            let fit = mle_reconstruct(&problem.with_counts(counts))?;
            Ok([
                if two_qubit {
                    metrics::tangle(&fit.rho)?
                } else {
                    f64::NAN
                },
                metrics::linear_entropy(&fit.rho),
                metrics::fidelity(&fit.rho, &result.rho)?,
                metrics::negativity(&fit.rho)?,
            ])
        })
        .collect::<Result<_>>()?;
    let std = |k: usize| -> f64 {
        let n = samples.len() as f64;
        if samples.len() < 2 {
            return 0.0;
        }
        let mean = samples.iter().map(|s| s[k]).sum::<f64>() / n;
        (samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(BootstrapReport {
        resamples: n_resamples,
        tangle: two_qubit.then(|| std(0)),
        linear_entropy: Some(std(1)),
        fidelity: Some(std(2)),
        negativity: Some(std(3)),
    })
}

/// `options.json` of a problem bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleOptions {
    pub layout: LayoutJson,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_max_iterations() -> usize {
    TomographyOptions::default().max_iterations
}

fn default_tolerance() -> f64 {
    TomographyOptions::default().tolerance
}

impl BundleOptions {
    pub fn tomography_options(&self) -> TomographyOptions {
        TomographyOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }
}

/// Reads `settings.json`, `counts.csv` and `options.json` from `dir`.
pub fn read_bundle(dir: &Path) -> Result<(TomographyProblem, Method)> {
    let settings = crate::analyzers::read_settings(&dir.join("settings.json"))?;
    let records = read_counts_csv(std::fs::File::open(dir.join("counts.csv"))?)?;
    let options: BundleOptions = serde_json::from_str(&std::fs::read_to_string(dir.join("options.json"))?)?;
    let layout = options.layout.to_layout()?;
    let problem = TomographyProblem::from_records(layout, &settings, &records, options.tomography_options())?;
    Ok((problem, options.method))
}

/// `diagnostics.json` written next to a reconstructed `rho.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: Method,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub converged: bool,
    pub intensity: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_likelihood_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_eigenvalue: Option<f64>,
}

impl Diagnostics {
    pub fn from_mle(r: &TomographyResult) -> Self {
        Self {
            method: Method::Mle,
            iterations: r.iterations,
            log_likelihood: r.final_log_likelihood(),
            converged: r.converged,
            intensity: r.intensity,
            log_likelihood_trace: r.log_likelihood.clone(),
            min_eigenvalue: None,
        }
    }

    pub fn from_linear(problem: &TomographyProblem, est: &LinearEstimate) -> Self {
        // Poisson log-likelihood of the linear estimate where it is defined
        let ll = problem
            .measurements
            .iter()
            .map(|m| {
                let lam = (est.intensity
                    * m.duration
                    * m.element
                        .kets()
                        .iter()
                        .map(|k| est.matrix.expectation(k).re)
                        .sum::<f64>())
                .max(PROBABILITY_FLOOR);
                m.counts * lam.ln() - lam
            })
            .sum();
        Self {
            method: Method::Linear,
            iterations: 0,
            log_likelihood: ll,
            converged: true,
            intensity: est.intensity,
            log_likelihood_trace: Vec::new(),
            min_eigenvalue: Some(est.min_eigenvalue),
        }
    }
}
