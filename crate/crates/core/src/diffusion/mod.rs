//! Forward noising, the score-matching objective and reverse-time sampling.

mod loss;
mod noise;
mod objective;
mod sampler;
mod schedule;

pub use loss::{
    aux_gate, aux_losses, dsm_loss, torsion_loss, total_loss, AuxLosses, LossComponents,
    LossReport, AUX_T_CUTOFF, AUX_WEIGHT, BACKBONE_SLOTS, CONTACT_CUTOFF, TORSION_WEIGHT,
};
pub use noise::{forward_noise, score_from_prediction, to_angstrom, to_model_units, NoisedSample};
pub use objective::{
    assemble_total, aux_losses_on, backbone_atoms_on, conditioning_grid, reference_center, rot_score_on,
    torsion_loss_on, weighted_mse_on, window_loss_on, BackboneLocal, PreparedWindow, WindowLoss,
};
pub use sampler::{
    integrate_reverse, iterative_rollout, reverse_sample, rollout_motion_window, sample_prior,
    SampleRequest,
};
pub use schedule::DiffusionSchedule;
