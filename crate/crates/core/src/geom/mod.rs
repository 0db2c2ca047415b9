//! SO(3)/SE(3) algebra, the IGSO(3) kernel and the translation OU process.

mod igso3;
mod rigid;

pub use igso3::{
    igso3_density, random_unit_vector, rot_score, rot_score_with, sample_igso3, sigma_of_t,
    trans_score, Igso3, Igso3Series, RotationSchedule,
};
pub use rigid::{
    apply, compose, exp_so3, hat, invert, log_so3, quat_to_rot, FrameGrid, QuatFrame, Rigid,
    Rotation, TangentVector, Vec3,
};

/// Å → diffusion units (nm).
pub const TRANSLATION_SCALE: f64 = 0.1;
