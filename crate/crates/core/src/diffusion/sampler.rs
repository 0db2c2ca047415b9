//! Reverse-time sampling. Time runs from `t = 1` down to `t_min`; step `k`
//! evaluates the model at `t_k = 1 − k·h` with `h = (1 − t_min)/n_steps`.

use rand::Rng;

use super::noise::{score_from_prediction, standard_normal3};
use super::objective::conditioning_grid;
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::features::PrecomputedEmbedding;
use crate::geom::{exp_so3, FrameGrid, Rigid, Rotation, TRANSLATION_SCALE};
use crate::network::{trunk_forward, ModelConfig, ModelParams, TrunkInputs, TrunkOptions};
use crate::protein::{
    chain_torsion_masks, ProteinState, RigidGroupTemplates, TorsionAngles, Trajectory,
};

/// Draws `S×N` frames from the `t = 1` priors, in model units.
pub fn sample_prior(
    s: usize,
    n: usize,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<FrameGrid> {
    let kernel = sched.kernel(1.0)?;
    let frames = (0..s * n)
        .map(|_| {
            let rot = kernel.sample(&Rotation::identity(), rng);
            Rigid::new(rot, standard_normal3(rng))
        })
        .collect();
    FrameGrid::new(s, n, frames)
}

fn grid_is_finite(g: &FrameGrid) -> bool {
    g.frames()
        .iter()
        .all(|f| f.trans.iter().chain(f.rot.matrix().iter()).all(|x| x.is_finite()))
}

/// Euler–Maruyama integration of the reverse SDE. `predict(x, t)` returns
/// the predicted clean frames and an extra payload; the final step replaces
/// the state by the prediction and returns its payload.
pub fn integrate_reverse<T>(
    init: FrameGrid,
    sched: &DiffusionSchedule,
    n_steps: usize,
    noise_scale: f64,
    rng: &mut impl Rng,
    mut predict: impl FnMut(&FrameGrid, f64) -> Result<(FrameGrid, T)>,
) -> Result<(FrameGrid, T)> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be positive".into()));
    }
    let h = (1.0 - sched.t_min) / n_steps as f64;
    let mut x = init;
    for k in 0..n_steps {
        let t = 1.0 - k as f64 * h;
        let (pred, extra) = predict(&x, t)?;
        if !grid_is_finite(&pred) {
            return Err(Error::SamplerDivergence { step: k });
        }
        if k + 1 == n_steps {
            return Ok((pred, extra));
        }
        let (rot_scores, trans_scores) = score_from_prediction(&pred, &x, t, sched)?;
        let t_next = (t - h).max(sched.t_min);
        let d_sigma2 = sched.sigma2(t)? - sched.sigma2(t_next)?;
        for (idx, f) in x.frames_mut().iter_mut().enumerate() {
            let drift = f.trans * 0.5 + trans_scores[idx];
            f.trans += drift * h + standard_normal3(rng) * (h.sqrt() * noise_scale);
            let step = rot_scores[idx] * d_sigma2
                + standard_normal3(rng) * (d_sigma2.sqrt() * noise_scale);
            f.rot = f.rot.compose(&exp_so3(&step));
        }
        if !grid_is_finite(&x) {
            return Err(Error::SamplerDivergence { step: k });
        }
    }
    unreachable!("loop returns on its final step")
}

#[derive(Clone, Copy, Debug)]
pub struct SampleRequest<'a> {
    pub reference: &'a ProteinState,
    /// Motion states, oldest first.
    pub motion: &'a [ProteinState],
    pub s: usize,
    pub n_steps: usize,
    pub noise_scale: f64,
    /// Time between generated states, copied into the trajectory.
    pub dt: f64,
    pub embedding: Option<&'a PrecomputedEmbedding>,
    pub options: TrunkOptions,
}

/// Samples `s` future states following `reference`.
pub fn reverse_sample(
    params: &ModelParams,
    cfg: &ModelConfig,
    sched: &DiffusionSchedule,
    templates: &RigidGroupTemplates,
    req: &SampleRequest<'_>,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if req.s == 0 {
        return Err(Error::InvalidArgument("s must be at least 1".into()));
    }
    if req.motion.len() != cfg.s_mot {
        return Err(Error::InvalidArgument(format!(
            "model expects {} motion states, got {}",
            cfg.s_mot,
            req.motion.len()
        )));
    }
    let seq = &req.reference.sequence;
    let n = seq.len();
    let (clean, center) = conditioning_grid(req.motion, req.reference)?;
    let init = sample_prior(req.s, n, sched, rng)?;
    let (frames, torsions) =
        integrate_reverse(init, sched, req.n_steps, req.noise_scale, rng, |x, t| {
            trunk_forward(
                params,
                cfg,
                &TrunkInputs {
                    seq,
                    t,
                    noisy: x,
                    clean: &clean,
                    embedding: req.embedding,
                },
                req.options,
            )
        })?;
    let masks = chain_torsion_masks(seq, templates);
    let start = req.reference.step_time;
    let states = (0..req.s)
        .map(|k| {
            let frames: Vec<Rigid> = frames
                .row(k)
                .iter()
                .map(|f| {
                    let rot = Rotation::from_matrix_orthonormalized(f.rot.matrix());
                    Rigid::new(rot, f.trans / TRANSLATION_SCALE + center)
                })
                .collect();
            let tors: Vec<TorsionAngles> = torsions[k]
                .iter()
                .zip(&masks)
                .map(|(t, m)| {
                    let mut t = t.normalized();
                    t.mask = *m;
                    t
                })
                .collect();
            let mut st = ProteinState::new(seq.clone(), frames, tors)?;
            st.step_time = start.map(|s0| s0 + req.dt * (k + 1) as f64);
            Ok(st)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(states, req.dt)
}

/// One-step-at-a-time generation: each new state becomes the reference for
/// the next call and the motion window slides along the generated history.
pub fn iterative_rollout(
    params: &ModelParams,
    cfg: &ModelConfig,
    sched: &DiffusionSchedule,
    templates: &RigidGroupTemplates,
    req: &SampleRequest<'_>,
    total_steps: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("total_steps must be positive".into()));
    }
    let mut out: Vec<ProteinState> = Vec::with_capacity(total_steps);
    for _ in 0..total_steps {
        let reference = out.last().unwrap_or(req.reference).clone();
        let motion: Vec<ProteinState> = rollout_motion_window(req.motion, req.reference, &out)
            .into_iter()
            .cloned()
            .collect();
        let step = SampleRequest {
            reference: &reference,
            motion: &motion,
            s: 1,
            ..*req
        };
        let traj = reverse_sample(params, cfg, sched, templates, &step, rng)?;
        out.extend(traj.states);
    }
    Trajectory::new(out, req.dt)
}

/// Motion window for the call that follows `generated`: the `s_mot` states
/// preceding the newest one in the history `[motion…, reference, generated…]`.
pub fn rollout_motion_window<'a>(
    motion: &'a [ProteinState],
    reference: &'a ProteinState,
    generated: &'a [ProteinState],
) -> Vec<&'a ProteinState> {
    let history: Vec<&ProteinState> = motion
        .iter()
        .chain(std::iter::once(reference))
        .chain(generated.iter())
        .collect();
    let h = history.len();
    history[h - 1 - motion.len()..h - 1].to_vec()
}
