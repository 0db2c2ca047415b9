//! The denoising trunk: invariant point attention, the reference spatial
//! module, temporal motion alignment, edge and backbone updates, and the
//! torsion head.

mod config;
mod modules;
mod params;
mod trunk;

pub use config::{IpaConfig, ModelConfig};
pub use modules::{
    backbone_update_on, edge_update_on, ipa_on, motion_alignment_on, normalize_pairs,
    spatial_attention_on, spatial_module_on, torsion_head_on, FrameVars, IpaOutput,
};
pub use params::{Binder, ModelParams, ParamEntry, ParamGroup};
pub(crate) use params::linear;
pub use trunk::{
    frames_to_tensors, tensors_to_frames, torsions_from_tensor, trunk_forward, trunk_forward_on,
    TrunkInputs, TrunkOptions, TrunkOutput,
};
