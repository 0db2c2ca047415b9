use nalgebra::Matrix3;

use super::config::ModelConfig;
use super::modules::{
    backbone_update_on, edge_update_on, ipa_block, motion_alignment_on, spatial_module_on,
    torsion_head_on, FrameVars,
};
use super::params::{Binder, ModelParams};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{embed_sequence_on, embed_temporal_positions, step_features, PrecomputedEmbedding};
use crate::geom::{FrameGrid, Rigid, Rotation, Vec3};
use crate::protein::{ResidueType, TorsionAngles};

/// Inputs to one trunk evaluation, all frames in model units (translations
/// already scaled and centered).
#[derive(Clone, Copy, Debug)]
pub struct TrunkInputs<'a> {
    pub seq: &'a [ResidueType],
    pub t: f64,
    /// `S×N` noisy frames.
    pub noisy: &'a FrameGrid,
    /// `(s_mot + s_ref)×N` clean frames ordered `[motion…, reference]`.
    pub clean: &'a FrameGrid,
    pub embedding: Option<&'a PrecomputedEmbedding>,
}

#[derive(Clone, Copy, Debug)]
pub struct TrunkOptions {
    /// When false the temporal residual is bypassed entirely.
    pub motion_alignment: bool,
}

impl Default for TrunkOptions {
    fn default() -> Self {
        TrunkOptions {
            motion_alignment: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrunkOutput {
    /// Predicted clean rotations `[S·N, 3, 3]`.
    pub rot: Var,
    /// Predicted clean translations `[S·N, 3]` in model units.
    pub trans: Var,
    /// Unit `(sin, cos)` torsions `[S, N, 7, 2]`.
    pub torsions: Var,
}

/// Rotations `[B,3,3]` and translations `[B,3]` of a list of frames.
pub fn frames_to_tensors(frames: &[Rigid]) -> (Tensor, Tensor) {
    let mut rot = Vec::with_capacity(frames.len() * 9);
    let mut trans = Vec::with_capacity(frames.len() * 3);
    for f in frames {
        let m = f.rot.matrix();
        for i in 0..3 {
            for j in 0..3 {
                rot.push(m[(i, j)]);
            }
        }
        trans.extend_from_slice(f.trans.as_slice());
    }
    let b = frames.len();
    (Tensor::new(&[b, 3, 3], rot), Tensor::new(&[b, 3], trans))
}

pub fn tensors_to_frames(rot: &Tensor, trans: &Tensor) -> Vec<Rigid> {
    rot.data()
        .chunks(9)
        .zip(trans.data().chunks(3))
        .map(|(r, t)| {
            let m = Matrix3::from_row_slice(r);
            Rigid::new(
                Rotation::from_matrix_unchecked(m),
                Vec3::new(t[0], t[1], t[2]),
            )
        })
        .collect()
}

/// Records one full trunk pass on `tape`.
pub fn trunk_forward_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    inputs: &TrunkInputs<'_>,
    opts: TrunkOptions,
) -> Result<TrunkOutput> {
    let n = inputs.seq.len();
    let s = inputs.noisy.s_count();
    let n_clean = cfg.n_clean();
    if inputs.noisy.n_count() != n || inputs.clean.n_count() != n {
        return Err(Error::Shape(format!(
            "sequence has {n} residues but frame grids have {} and {}",
            inputs.noisy.n_count(),
            inputs.clean.n_count()
        )));
    }
    if inputs.clean.s_count() != n_clean {
        return Err(Error::Shape(format!(
            "expected {n_clean} clean steps, got {}",
            inputs.clean.s_count()
        )));
    }
    let steps = n_clean + s;
    let (v0, z0) = embed_sequence_on(tape, b, cfg, inputs.seq, inputs.embedding)?;
    let mut times = vec![0.0; n_clean];
    times.extend(std::iter::repeat_n(inputs.t, s));
    let (mut v, mut z) = step_features(tape, b, cfg, v0, z0, &times)?;

    let (cr, ct) = frames_to_tensors(inputs.clean.frames());
    let (nr, nt) = frames_to_tensors(inputs.noisy.frames());
    let clean_rot = tape.constant(cr);
    let clean_trans = tape.constant(ct);
    let mut noisy = FrameVars {
        rot: tape.constant(nr),
        trans: tape.constant(nt),
    };
    let positions: Vec<usize> = (0..steps).collect();
    let pos = tape.constant(embed_temporal_positions(&positions, cfg.d_v));

    for l in 0..cfg.layers {
        let frames = FrameVars {
            rot: tape.concat(&[clean_rot, noisy.rot], 0),
            trans: tape.concat(&[clean_trans, noisy.trans], 0),
        };
        v = ipa_block(tape, b, cfg, l, v, z, frames);
        tape.check_finite(v, &format!("layer {l}: node features after IPA"))?;

        let v_clean = tape.narrow(v, 0, 0, n_clean);
        let v_ref = tape.narrow(v, 0, cfg.s_mot, 1);
        let v_ref = tape.reshape(v_ref, &[n, cfg.d_v]);
        let v_noisy = tape.narrow(v, 0, n_clean, s);
        let mut v_noisy = spatial_module_on(tape, b, cfg, &format!("layer{l}.spatial"), v_ref, v_noisy);
        if opts.motion_alignment {
            let v_all = tape.concat(&[v_clean, v_noisy], 0);
            v_noisy = motion_alignment_on(tape, b, cfg, &format!("layer{l}.temporal"), v_all, pos, s);
        }
        v = tape.concat(&[v_clean, v_noisy], 0);
        tape.check_finite(v, &format!("layer {l}: node features after temporal update"))?;

        z = edge_update_on(tape, b, cfg, &format!("layer{l}.edge"), v, z);
        tape.check_finite(z, &format!("layer {l}: edge features"))?;

        noisy = backbone_update_on(tape, b, &format!("layer{l}.backbone"), v_noisy, noisy);
        tape.check_finite(noisy.rot, &format!("layer {l}: frame rotations"))?;
        tape.check_finite(noisy.trans, &format!("layer {l}: frame translations"))?;
    }
    let v_noisy = tape.narrow(v, 0, n_clean, s);
    let torsions = torsion_head_on(tape, b, v_noisy);
    tape.check_finite(torsions, "torsion head")?;
    Ok(TrunkOutput {
        rot: noisy.rot,
        trans: noisy.trans,
        torsions,
    })
}

/// Inference-only trunk evaluation returning the predicted clean frames
/// (model units) and torsions with masks taken from `masks` when given.
pub fn trunk_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    inputs: &TrunkInputs<'_>,
    opts: TrunkOptions,
) -> Result<(FrameGrid, Vec<Vec<TorsionAngles>>)> {
    let mut tape = Tape::new();
    let mut b = Binder::frozen(params);
    let out = trunk_forward_on(&mut tape, &mut b, cfg, inputs, opts)?;
    let frames = tensors_to_frames(tape.value(out.rot), tape.value(out.trans));
    let grid = FrameGrid::new(inputs.noisy.s_count(), inputs.noisy.n_count(), frames)?;
    let torsions = torsions_from_tensor(tape.value(out.torsions));
    Ok((grid, torsions))
}

/// `[S, N, 7, 2]` → per-step torsion lists with empty masks.
pub fn torsions_from_tensor(t: &Tensor) -> Vec<Vec<TorsionAngles>> {
    let (s, n) = (t.shape()[0], t.shape()[1]);
    (0..s)
        .map(|k| {
            (0..n)
                .map(|i| {
                    let base = (k * n + i) * 14;
                    let mut ta = TorsionAngles::default();
                    for a in 0..7 {
                        ta.angles[a] = [t.data()[base + 2 * a], t.data()[base + 2 * a + 1]];
                    }
                    ta
                })
                .collect()
        })
        .collect()
}
