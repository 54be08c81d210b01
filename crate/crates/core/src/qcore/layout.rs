use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which photon of the pair a subsystem belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::A => Party::B,
            Party::B => Party::A,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::A => "A",
            Party::B => "B",
        })
    }
}

/// Photonic degree of freedom carried by a subsystem.
///
/// The declaration order is the canonical within-photon ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dof {
    #[serde(rename = "poln")]
    Polarization,
    #[serde(rename = "spatial")]
    Spatial,
    #[serde(rename = "etime")]
    EnergyTime,
    #[serde(rename = "generic")]
    Generic,
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dof::Polarization => "poln",
            Dof::Spatial => "spatial",
            Dof::EnergyTime => "etime",
            Dof::Generic => "generic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Subsystem {
    pub dim: usize,
    pub party: Party,
    pub dof: Dof,
}

impl Subsystem {
    pub fn new(dim: usize, party: Party, dof: Dof) -> Self {
        Self { dim, party, dof }
    }
}

/// Ordered local dimensions of a multipartite space, with party and DOF labels.
///
/// Joint indices are row-major over the subsystems: the first subsystem is
/// the most significant digit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubsystemLayout {
    subsystems: Vec<Subsystem>,
}

impl SubsystemLayout {
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Self> {
        if let Some(s) = subsystems.iter().find(|s| s.dim == 0) {
            return Err(Error::InvalidArgument(format!(
                "subsystem {}:{} has dimension 0",
                s.party, s.dof
            )));
        }
        Ok(Self { subsystems })
    }

    /// Layout with unlabeled ([`Dof::Generic`]) subsystems.
    pub fn from_dims(dims: &[usize], parties: &[Party]) -> Result<Self> {
        if dims.len() != parties.len() {
            return Err(Error::InvalidArgument(format!(
                "{} dims but {} party labels",
                dims.len(),
                parties.len()
            )));
        }
        Self::new(
            dims.iter()
                .zip(parties)
                .map(|(&d, &p)| Subsystem::new(d, p, Dof::Generic))
                .collect(),
        )
    }

    /// One subsystem per party with the given DOF, photon A first.
    pub fn bipartite(dof: Dof, dim_a: usize, dim_b: usize) -> Self {
        Self {
            subsystems: vec![
                Subsystem::new(dim_a, Party::A, dof),
                Subsystem::new(dim_b, Party::B, dof),
            ],
        }
    }

    /// Both photons carry the same per-photon DOF list, in canonical order.
    pub fn symmetric(per_photon: &[(Dof, usize)]) -> Self {
        let mut subsystems = Vec::with_capacity(2 * per_photon.len());
        for party in [Party::A, Party::B] {
            for &(dof, dim) in per_photon {
                subsystems.push(Subsystem::new(dim, party, dof));
            }
        }
        Self { subsystems }
    }

    /// A single subsystem with no partner, e.g. one photon's polarization.
    pub fn single(dim: usize, party: Party, dof: Dof) -> Self {
        Self {
            subsystems: vec![Subsystem::new(dim, party, dof)],
        }
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.subsystems.iter().map(|s| s.dim).collect()
    }

    pub fn parties(&self) -> Vec<Party> {
        self.subsystems.iter().map(|s| s.party).collect()
    }

    pub fn dofs(&self) -> Vec<Dof> {
        self.subsystems.iter().map(|s| s.dof).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.dim).product()
    }

    pub fn party_indices(&self, party: Party) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.subsystems[i].party == party).collect()
    }

    pub fn party_dim(&self, party: Party) -> usize {
        self.subsystems
            .iter()
            .filter(|s| s.party == party)
            .map(|s| s.dim)
            .product()
    }

    pub fn find(&self, party: Party, dof: Dof) -> Option<usize> {
        self.subsystems.iter().position(|s| s.party == party && s.dof == dof)
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::InvalidSubsystem { index, len: self.len() });
        }
        Ok(())
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut subsystems = self.subsystems.clone();
        subsystems.extend_from_slice(&other.subsystems);
        Self { subsystems }
    }

    /// Sub-layout keeping `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut subsystems = Vec::with_capacity(indices.len());
        for &i in indices {
            self.check_index(i)?;
            subsystems.push(self.subsystems[i]);
        }
        Ok(Self { subsystems })
    }

    pub fn with_dim(&self, index: usize, dim: usize) -> Result<Self> {
        self.check_index(index)?;
        let mut out = self.clone();
        out.subsystems[index].dim = dim;
        Ok(out)
    }

    /// Subsystem order that sorts by party (A first), then DOF.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| (self.subsystems[i].party, self.subsystems[i].dof));
        order
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical_order().iter().enumerate().all(|(i, &j)| i == j)
    }

    /// True when every party-A subsystem precedes every party-B subsystem.
    pub fn is_party_contiguous(&self) -> bool {
        let first_b = self.subsystems.iter().position(|s| s.party == Party::B);
        match first_b {
            None => true,
            Some(k) => self.subsystems[k..].iter().all(|s| s.party == Party::B),
        }
    }

    /// Splits a joint index into per-subsystem digits.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for (k, s) in self.subsystems.iter().enumerate().rev() {
            out[k] = index % s.dim;
            index /= s.dim;
        }
        out
    }

    pub fn join(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(&self.subsystems)
            .fold(0, |acc, (&d, s)| acc * s.dim + d)
    }
}

impl fmt::Display for SubsystemLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .subsystems
            .iter()
            .map(|s| format!("{}:{}{}", s.party, s.dof, s.dim))
            .collect();
        write!(f, "[{}]", parts.join(","))
    }
}
