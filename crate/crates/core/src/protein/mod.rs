//! Frame-plus-torsion protein parameterization over idealized rigid groups.

mod build;
mod residue;
mod state;
mod templates;

pub use build::{
    alt_torsions, atom_exists, atoms_from_frames_and_torsions, build_state, chain_frames,
    chain_torsion_masks, dihedral, frames_from_backbone, group_frames, place_atom, rot_x,
    state_atoms, torsions_from_atoms, SLOT_C, SLOT_CA, SLOT_N, SLOT_O,
};
pub use residue::{parse_sequence, sequence_string, ResidueType, NUM_RESIDUE_TYPES};
pub use state::{AtomSet, ProteinState, TorsionAngles, Trajectory};
pub use templates::{
    residues_checksum, ResidueTemplate, RigidGroup, RigidGroupTemplates, ATOMS_PER_RESIDUE, CHI1,
    NUM_TORSIONS, OMEGA, PHI, PSI, TEMPLATE_FORMAT, TEMPLATE_VERSION,
};
