//! Tidy CSV of density-matrix elements for bar-chart plotting.

use std::fmt::Write;

use hyperent::qcore::{ComplexMatrix, Dof, Party, SubsystemLayout};

fn level_name(dof: Dof, dim: usize, level: usize) -> String {
    match (dof, dim) {
        (Dof::Polarization, 2) => ["H", "V"][level].to_string(),
        (Dof::Spatial, 3) => ["l", "g", "r"][level].to_string(),
        (Dof::Spatial, 2) => ["l", "r"][level].to_string(),
        (Dof::EnergyTime, 2) => ["s", "f"][level].to_string(),
        _ => level.to_string(),
    }
}

/// Basis label such as `Hl|Vr`: photon A levels, then photon B.
pub fn basis_label(layout: &SubsystemLayout, index: usize) -> String {
    let digits = layout.digits(index);
    let mut parts = [String::new(), String::new()];
    for (sub, &k) in layout.subsystems().iter().zip(&digits) {
        let slot = usize::from(sub.party == Party::B);
        parts[slot].push_str(&level_name(sub.dof, sub.dim, k));
    }
    match (parts[0].is_empty(), parts[1].is_empty()) {
        (false, false) => format!("{}|{}", parts[0], parts[1]),
        (true, _) => parts[1].clone(),
        (_, true) => parts[0].clone(),
    }
}

/// `row,col,row_label,col_label,re,im`, one line per element.
pub fn density_grid_csv(m: &ComplexMatrix, layout: &SubsystemLayout) -> String {
    let d = m.rows();
    let labels: Vec<String> = (0..d).map(|i| basis_label(layout, i)).collect();
    let mut out = String::from("row,col,row_label,col_label,re,im\n");
    for i in 0..d {
        for j in 0..d {
            let z = m[(i, j)];
            writeln!(out, "{i},{j},{},{},{:e},{:e}", labels[i], labels[j], z.re, z.im).expect("string write");
        }
    }
    out
}
