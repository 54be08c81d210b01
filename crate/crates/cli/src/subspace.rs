//! Reduction of a multi-DOF state to the two-qubit subspace a CHSH test runs on.
//!
//! `--project DOF=NAME` projects that DOF of both photons on a named ket
//! (`NAME_A/NAME_B` sets them separately); the analyzed DOF is kept and every
//! other DOF is traced out. An analyzed spatial DOF is restricted to two modes
//! (`l,r` unless `--restrict` says otherwise), taken in reverse order for
//! photon B so the qubit follows the logical encoding.

use std::collections::HashMap;

use hyperent::analyzers::{EnergyTimeSetting, PolarizationSetting, SpatialSetting};
use hyperent::bell::{subspace_project, SubspaceAction};
use hyperent::qcore::{DensityOperator, Dof, Party, C64};

use crate::error::{CliError, CliResult};

pub fn parse_dof(s: &str) -> CliResult<Dof> {
    match s {
        "poln" | "polarization" => Ok(Dof::Polarization),
        "spatial" | "spa" => Ok(Dof::Spatial),
        "etime" | "te" | "energy-time" => Ok(Dof::EnergyTime),
        "generic" => Ok(Dof::Generic),
        other => Err(CliError::validation(format!("unknown degree of freedom `{other}`"))),
    }
}

/// Ket for a named level of `dof`: `H V D A R L`, `l g r h v`, or an
/// energy-time phase in radians.
pub fn named_ket(dof: Dof, dim: usize, name: &str) -> CliResult<Vec<C64>> {
    Ok(match dof {
        Dof::Polarization => PolarizationSetting::named(name)?.ket().to_vec(),
        Dof::Spatial => SpatialSetting::named(name, dim)?.ket().to_vec(),
        Dof::EnergyTime => {
            let delta: f64 = name
                .parse()
                .map_err(|_| CliError::validation(format!("energy-time projection `{name}` is not a phase")))?;
            EnergyTimeSetting::new(delta)?.ket().to_vec()
        }
        Dof::Generic => {
            let k: usize = name
                .parse()
                .map_err(|_| CliError::validation(format!("generic level `{name}` is not an index")))?;
            if k >= dim {
                return Err(CliError::validation(format!(
                    "level {k} out of range for dimension {dim}"
                )));
            }
            let mut v = vec![C64::new(0.0, 0.0); dim];
            v[k] = C64::new(1.0, 0.0);
            v
        }
    })
}

/// `DOF=NAME` or `DOF=NAME_A/NAME_B`.
pub fn parse_projections(specs: &[String]) -> CliResult<HashMap<Dof, (String, String)>> {
    let mut out = HashMap::new();
    for spec in specs {
        let (dof, names) = spec
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("projection `{spec}` is not DOF=NAME")))?;
        let dof = parse_dof(dof.trim())?;
        let (a, b) = match names.split_once('/') {
            Some((a, b)) => (a.trim().to_string(), b.trim().to_string()),
            None => (names.trim().to_string(), names.trim().to_string()),
        };
        if out.insert(dof, (a, b)).is_some() {
            return Err(CliError::validation(format!("{dof} projected twice")));
        }
    }
    Ok(out)
}

/// The DOF to analyze: the explicit choice, or the only one present.
pub fn pick_dof(rho: &DensityOperator, requested: Option<Dof>) -> CliResult<Dof> {
    if let Some(d) = requested {
        return Ok(d);
    }
    let mut dofs = rho.layout().dofs();
    dofs.sort();
    dofs.dedup();
    match dofs.as_slice() {
        [only] => Ok(*only),
        _ => Err(CliError::validation(
            "state has several degrees of freedom; choose one with --dof",
        )),
    }
}

pub fn reduce_to_qubits(
    rho: &DensityOperator,
    dof: Dof,
    projections: &HashMap<Dof, (String, String)>,
    restrict: Option<&str>,
) -> CliResult<DensityOperator> {
    let layout = rho.layout();
    if projections.contains_key(&dof) {
        return Err(CliError::validation(format!("{dof} is both analyzed and projected")));
    }
    for party in [Party::A, Party::B] {
        if layout.find(party, dof).is_none() {
            return Err(CliError::validation(format!(
                "state has no {dof} subsystem on photon {party}"
            )));
        }
    }
    for d in projections.keys() {
        if !layout.dofs().contains(d) {
            return Err(CliError::validation(format!("state has no {d} subsystem to project")));
        }
    }
    let mut actions = Vec::with_capacity(layout.len());
    for sub in layout.subsystems() {
        let action = if sub.dof == dof {
            if sub.dof == Dof::Spatial {
                let pair = restrict.unwrap_or("l,r");
                let (x, y) = pair
                    .split_once(',')
                    .ok_or_else(|| CliError::validation(format!("restriction `{pair}` is not two modes")))?;
                let mut modes = vec![
                    named_ket(sub.dof, sub.dim, x.trim())?,
                    named_ket(sub.dof, sub.dim, y.trim())?,
                ];
                if sub.party == Party::B {
                    modes.reverse();
                }
                SubspaceAction::Restrict(modes)
            } else if sub.dim == 2 {
                SubspaceAction::Keep
            } else {
                return Err(CliError::validation(format!(
                    "cannot analyze {} of dimension {} as a qubit",
                    sub.dof, sub.dim
                )));
            }
        } else if let Some((a, b)) = projections.get(&sub.dof) {
            let name = if sub.party == Party::A { a } else { b };
            SubspaceAction::Project(named_ket(sub.dof, sub.dim, name)?)
        } else {
            SubspaceAction::Trace
        };
        actions.push(action);
    }
    Ok(subspace_project(rho, &actions)?)
}
