use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::QuatFrame;
use crate::protein::{
    chain_torsion_masks, parse_sequence, sequence_string, ProteinState, RigidGroupTemplates,
    TorsionAngles, Trajectory, NUM_TORSIONS,
};

pub const TRAJECTORY_FORMAT: &str = "fourdfold-traj/1";

#[derive(Serialize, Deserialize)]
struct TrajectoryDoc {
    format: String,
    sequence: String,
    dt_ps: f64,
    states: Vec<StateDoc>,
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    frames: Vec<QuatFrame>,
    torsions: Vec<[[f64; 2]; NUM_TORSIONS]>,
    /// Absent masks fall back to the chain defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    torsion_mask: Option<Vec<[bool; NUM_TORSIONS]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step_time_ps: Option<f64>,
}

pub fn trajectory_to_json(traj: &Trajectory) -> Result<String> {
    traj.validate()?;
    let doc = TrajectoryDoc {
        format: TRAJECTORY_FORMAT.to_string(),
        sequence: sequence_string(traj.sequence()),
        dt_ps: traj.dt,
        states: traj
            .states
            .iter()
            .map(|s| StateDoc {
                frames: s.frames.iter().map(QuatFrame::from).collect(),
                torsions: s.torsions.iter().map(|t| t.angles).collect(),
                torsion_mask: Some(s.torsions.iter().map(|t| t.mask).collect()),
                step_time_ps: s.step_time,
            })
            .collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn trajectory_from_json(text: &str) -> Result<Trajectory> {
    let doc: TrajectoryDoc = serde_json::from_str(text)?;
    if doc.format != TRAJECTORY_FORMAT {
        return Err(Error::Parse(format!(
            "unsupported trajectory format '{}', expected '{TRAJECTORY_FORMAT}'",
            doc.format
        )));
    }
    if !(doc.dt_ps.is_finite() && doc.dt_ps > 0.0) {
        return Err(Error::Parse(format!("dt_ps must be positive, got {}", doc.dt_ps)));
    }
    let seq = parse_sequence(&doc.sequence)?;
    let n = seq.len();
    let default_masks = chain_torsion_masks(&seq, RigidGroupTemplates::standard());
    let mut states = Vec::with_capacity(doc.states.len());
    for (k, st) in doc.states.into_iter().enumerate() {
        if st.frames.len() != n || st.torsions.len() != n {
            return Err(Error::Shape(format!(
                "state {k}: {} frames and {} torsions for {n} residues",
                st.frames.len(),
                st.torsions.len()
            )));
        }
        let masks = st.torsion_mask.unwrap_or_else(|| default_masks.clone());
        if masks.len() != n {
            return Err(Error::Shape(format!("state {k}: {} torsion masks", masks.len())));
        }
        let frames = st.frames.iter().map(QuatFrame::to_rigid).collect::<Result<Vec<_>>>()?;
        let torsions = st
            .torsions
            .into_iter()
            .zip(masks)
            .map(|(angles, mask)| TorsionAngles { angles, mask })
            .collect();
        let mut state = ProteinState::new(seq.clone(), frames, torsions)?;
        state.step_time = st.step_time_ps;
        states.push(state);
    }
    Trajectory::new(states, doc.dt_ps)
}

pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if super::is_pdb_path(path) {
        return super::write_pdb(traj, path);
    }
    let text = trajectory_to_json(traj)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(super) fn load_json(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trajectory_from_json(&text)
}
