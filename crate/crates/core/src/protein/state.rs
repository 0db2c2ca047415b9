use serde::{Deserialize, Serialize};

use super::residue::ResidueType;
use super::templates::{ATOMS_PER_RESIDUE, NUM_TORSIONS};
use crate::error::{Error, Result};
use crate::geom::{Rigid, Vec3};

/// Seven torsions per residue, `(ω, φ, ψ, χ1..χ4)`, each as `(sin, cos)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsionAngles {
    pub angles: [[f64; 2]; NUM_TORSIONS],
    pub mask: [bool; NUM_TORSIONS],
}

impl Default for TorsionAngles {
    fn default() -> Self {
        TorsionAngles {
            angles: [[0.0, 1.0]; NUM_TORSIONS],
            mask: [false; NUM_TORSIONS],
        }
    }
}

impl TorsionAngles {
    pub fn from_radians(values: [f64; NUM_TORSIONS], mask: [bool; NUM_TORSIONS]) -> Self {
        TorsionAngles {
            angles: values.map(|a| [a.sin(), a.cos()]),
            mask,
        }
    }

    pub fn angle(&self, k: usize) -> f64 {
        self.angles[k][0].atan2(self.angles[k][1])
    }

    pub fn set_angle(&mut self, k: usize, radians: f64) {
        self.angles[k] = [radians.sin(), radians.cos()];
    }

    pub fn normalized(mut self) -> Self {
        for a in self.angles.iter_mut() {
            let n = (a[0] * a[0] + a[1] * a[1]).sqrt();
            if n > 0.0 {
                a[0] /= n;
                a[1] /= n;
            } else {
                *a = [0.0, 1.0];
            }
        }
        self
    }
}

/// Heavy atoms in the fixed 14-slot layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomSet {
    pub coords: Vec<[Vec3; ATOMS_PER_RESIDUE]>,
    pub exists: Vec<[bool; ATOMS_PER_RESIDUE]>,
}

impl AtomSet {
    pub fn empty(n: usize) -> Self {
        AtomSet {
            coords: vec![[Vec3::zeros(); ATOMS_PER_RESIDUE]; n],
            exists: vec![[false; ATOMS_PER_RESIDUE]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, residue: usize, slot: usize) -> Option<Vec3> {
        self.exists[residue][slot].then(|| self.coords[residue][slot])
    }

    pub fn ca(&self) -> Vec<Vec3> {
        self.coords.iter().map(|c| c[1]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProteinState {
    pub sequence: Vec<ResidueType>,
    pub frames: Vec<Rigid>,
    pub torsions: Vec<TorsionAngles>,
    /// Picoseconds; carried as metadata only.
    pub step_time: Option<f64>,
}

impl ProteinState {
    pub fn new(
        sequence: Vec<ResidueType>,
        frames: Vec<Rigid>,
        torsions: Vec<TorsionAngles>,
    ) -> Result<Self> {
        let s = ProteinState {
            sequence,
            frames,
            torsions,
            step_time: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sequence.len();
        if self.frames.len() != n || self.torsions.len() != n {
            return Err(Error::Shape(format!(
                "state arrays disagree: {} residues, {} frames, {} torsions",
                n,
                self.frames.len(),
                self.torsions.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.rot.orthonormality_error() > 1e-6 || !f.trans.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid frame at residue {i}")));
            }
        }
        Ok(())
    }

    pub fn ca_positions(&self) -> Vec<Vec3> {
        self.frames.iter().map(|f| f.trans).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<ProteinState>,
    /// Picoseconds between stored states.
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<ProteinState>, dt: f64) -> Result<Self> {
        let t = Trajectory { states, dt };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .states
            .first()
            .ok_or_else(|| Error::InvalidArgument("trajectory has no states".into()))?;
        for (k, s) in self.states.iter().enumerate() {
            s.validate()?;
            if s.sequence != first.sequence {
                return Err(Error::SequenceMismatch(format!(
                    "state {k} sequence differs from state 0"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn sequence(&self) -> &[ResidueType] {
        &self.states[0].sequence
    }

    pub fn n_residues(&self) -> usize {
        self.states[0].len()
    }

    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            states: self.states[start..end].to_vec(),
            dt: self.dt,
        }
    }
}
