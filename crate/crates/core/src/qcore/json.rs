//! JSON encoding of states and operators.
//!
//! `{"dims": [...], "parties": [...], "dofs": [...], "matrix": [[re, im], ...]}`
//! with the matrix flattened row-major; kets use `"vector"` instead of
//! `"matrix"`. `dofs` is optional and defaults to `generic`. Doubles are written
//! in shortest round-trip form, so decoding reproduces them bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::{Dof, Party, Subsystem, SubsystemLayout};
use super::matrix::{ComplexMatrix, C64};
use super::state::{DensityOperator, StateVector, Tolerances};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutJson {
    pub dims: Vec<usize>,
    pub parties: Vec<Party>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dofs: Option<Vec<Dof>>,
}

impl LayoutJson {
    pub fn from_layout(layout: &SubsystemLayout) -> Self {
        Self {
            dims: layout.dims(),
            parties: layout.parties(),
            dofs: Some(layout.dofs()),
        }
    }

    pub fn to_layout(&self) -> Result<SubsystemLayout> {
        if self.parties.len() != self.dims.len() {
            return Err(Error::InvalidArgument("`parties` and `dims` differ in length".into()));
        }
        let dofs = match &self.dofs {
            Some(d) if d.len() != self.dims.len() => {
                return Err(Error::InvalidArgument("`dofs` and `dims` differ in length".into()))
            }
            Some(d) => d.clone(),
            None => vec![Dof::Generic; self.dims.len()],
        };
        SubsystemLayout::new(
            self.dims
                .iter()
                .zip(&self.parties)
                .zip(&dofs)
                .map(|((&dim, &party), &dof)| Subsystem::new(dim, party, dof))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateJson {
    #[serde(flatten)]
    pub layout: LayoutJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<[f64; 2]>>,
}

fn pairs(data: &[C64]) -> Vec<[f64; 2]> {
    data.iter().map(|z| [z.re, z.im]).collect()
}

fn complexes(data: &[[f64; 2]]) -> Vec<C64> {
    data.iter().map(|&[re, im]| C64::new(re, im)).collect()
}

impl StateJson {
    pub fn from_density(rho: &DensityOperator) -> Self {
        Self {
            layout: LayoutJson::from_layout(rho.layout()),
            matrix: Some(pairs(rho.matrix().as_slice())),
            vector: None,
        }
    }

    /// Raw matrix payload; nothing is validated until it is read back.
    pub fn from_matrix(matrix: &ComplexMatrix, layout: &SubsystemLayout) -> Self {
        Self {
            layout: LayoutJson::from_layout(layout),
            matrix: Some(pairs(matrix.as_slice())),
            vector: None,
        }
    }

    pub fn from_vector(psi: &StateVector) -> Self {
        Self {
            layout: LayoutJson::from_layout(psi.layout()),
            matrix: None,
            vector: Some(pairs(psi.amplitudes())),
        }
    }

    /// Decodes a density operator; a `"vector"` payload is turned into a pure state.
    pub fn to_density(&self, tol: &Tolerances) -> Result<DensityOperator> {
        let layout = self.layout.to_layout()?;
        match (&self.matrix, &self.vector) {
            (Some(m), None) => {
                let d = layout.total_dim();
                let matrix = ComplexMatrix::from_vec(d, d, complexes(m))?;
                DensityOperator::with_tolerances(matrix, layout, tol)
            }
            (None, Some(v)) => StateVector::new(complexes(v), layout)?.to_density(),
            _ => Err(Error::InvalidArgument(
                "exactly one of `matrix` or `vector` is required".into(),
            )),
        }
    }

    pub fn to_vector(&self) -> Result<StateVector> {
        let layout = self.layout.to_layout()?;
        match &self.vector {
            Some(v) => StateVector::new(complexes(v), layout),
            None => Err(Error::InvalidArgument("`vector` is required".into())),
        }
    }
}

pub fn density_to_json(rho: &DensityOperator) -> String {
    serde_json::to_string(&StateJson::from_density(rho)).expect("state JSON is always serializable")
}

pub fn density_from_json(text: &str, tol: &Tolerances) -> Result<DensityOperator> {
    serde_json::from_str::<StateJson>(text)?.to_density(tol)
}

pub fn read_density(path: &Path, tol: &Tolerances) -> Result<DensityOperator> {
    density_from_json(&std::fs::read_to_string(path)?, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::random::random_density;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn density_json_round_trip_is_bit_exact(seed in any::<u64>(), rank in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layout = SubsystemLayout::symmetric(&[(Dof::Polarization, 2)]);
            let rho = random_density(&mut rng, layout, rank);
            let back = density_from_json(&density_to_json(&rho), &Tolerances::default()).unwrap();
            for (a, b) in rho.matrix().as_slice().iter().zip(back.matrix().as_slice()) {
                prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
            prop_assert_eq!(back.layout(), rho.layout());
        }
    }

    #[test]
    fn missing_dofs_default_to_generic() {
        let text = r#"{"dims":[2],"parties":["A"],"vector":[[1,0],[0,0]]}"#;
        let s: StateJson = serde_json::from_str(text).unwrap();
        let psi = s.to_vector().unwrap();
        assert_eq!(psi.layout().dofs(), vec![Dof::Generic]);
    }

    #[test]
    fn rejects_both_payloads() {
        let text = r#"{"dims":[1],"parties":["A"],"vector":[[1,0]],"matrix":[[1,0]]}"#;
        let s: StateJson = serde_json::from_str(text).unwrap();
        assert!(s.to_density(&Tolerances::default()).is_err());
    }
}
