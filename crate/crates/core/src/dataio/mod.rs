//! Trajectory files, training windows, dataset splits and synthetic data.

mod json;
mod pdb;
mod split;
mod synth;
mod windows;

use std::path::Path;

pub use json::{save_trajectory, trajectory_from_json, trajectory_to_json, TRAJECTORY_FORMAT};
pub use pdb::{pdb_string, read_pdb, trajectory_from_pdb, write_pdb, PDB_DEFAULT_DT};
pub use split::{split_o2o, split_s2l, SplitMode, SplitSpec, S2L_TRAIN_FRACTION};
pub use synth::{synth_trajectory, synthesize, SynthConfig, SynthKind, Synthetic};
pub use windows::{make_windows, window_at, window_starts, WindowSample, WindowSet, WindowSpec};

use crate::error::Result;
use crate::protein::Trajectory;

/// Loads a trajectory, choosing the reader by extension: `.pdb` and `.ent`
/// are read as multi-model PDB, anything else as trajectory JSON.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    if is_pdb_path(path) {
        read_pdb(path)
    } else {
        json::load_json(path)
    }
}

pub(crate) fn is_pdb_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pdb") | Some("ent")
    )
}
