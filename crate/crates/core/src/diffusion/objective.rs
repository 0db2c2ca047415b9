//! Differentiable training objective for one window.

use rand::Rng;

use super::loss::{
    aux_gate, total_loss, LossComponents, LossReport, CONTACT_CUTOFF, TORSION_WEIGHT,
};
use super::noise::{forward_noise, to_model_units};
use super::schedule::DiffusionSchedule;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::PrecomputedEmbedding;
use crate::geom::{FrameGrid, Igso3Series, Rigid, Vec3, TRANSLATION_SCALE};
use crate::network::{trunk_forward_on, Binder, ModelConfig, TrunkInputs, TrunkOptions};
use crate::protein::{
    alt_torsions, chain_torsion_masks, ProteinState, ResidueType, RigidGroupTemplates,
    TorsionAngles, NUM_TORSIONS, PSI, SLOT_C, SLOT_CA, SLOT_N, SLOT_O,
};

/// Backbone atoms of one residue type in its backbone frame. O depends on ψ
/// as `o_fixed + sin ψ · o_sin + cos ψ · o_cos`.
#[derive(Clone, Copy, Debug)]
pub struct BackboneLocal {
    /// N, Cα, C and the ψ-independent part of O.
    pub fixed: [Vec3; 4],
    pub o_sin: Vec3,
    pub o_cos: Vec3,
}

impl BackboneLocal {
    pub fn new(r: ResidueType, templates: &RigidGroupTemplates) -> Result<Self> {
        let tmpl = templates.get(r);
        let find = |slot: usize| {
            tmpl.groups.iter().find_map(|g| {
                g.atoms
                    .iter()
                    .find(|(s, _)| *s == slot)
                    .map(|(_, p)| (g, *p))
            })
        };
        let missing = |what: &str| Error::Parse(format!("template for {r:?} lacks {what}"));
        let (g0, n) = find(SLOT_N).ok_or_else(|| missing("N"))?;
        let (_, ca) = find(SLOT_CA).ok_or_else(|| missing("CA"))?;
        let (_, c) = find(SLOT_C).ok_or_else(|| missing("C"))?;
        let (go, o) = find(SLOT_O).ok_or_else(|| missing("O"))?;
        if g0.index != 0 || go.torsion != Some(PSI) || go.parent != Some(0) {
            return Err(Error::Parse(format!(
                "template for {r:?} does not place O from the ψ group"
            )));
        }
        // O = D · Rx(ψ) · p with D the ψ group's default frame.
        let d = &go.default_frame;
        let m = d.rot.matrix();
        Ok(BackboneLocal {
            fixed: [n, ca, c, d.trans + m * Vec3::new(o.x, 0.0, 0.0)],
            o_sin: m * Vec3::new(0.0, -o.z, o.y),
            o_cos: m * Vec3::new(0.0, o.y, o.z),
        })
    }

    /// Local N, Cα, C, O for a given `(sin ψ, cos ψ)`.
    pub fn atoms(&self, psi: [f64; 2]) -> [Vec3; 4] {
        let mut a = self.fixed;
        a[3] += self.o_sin * psi[0] + self.o_cos * psi[1];
        a
    }
}

/// Ground truth and conditioning for one training window, centered on the
/// reference Cα centroid.
#[derive(Clone, Debug)]
pub struct PreparedWindow {
    pub seq: Vec<ResidueType>,
    /// Å offset subtracted from every coordinate.
    pub center: Vec3,
    /// `[motion…, reference]` in model units.
    pub conditioning: FrameGrid,
    /// Targets in centered Å.
    pub target: FrameGrid,
    pub torsions: Vec<Vec<TorsionAngles>>,
    pub alt_torsions: Vec<Vec<TorsionAngles>>,
    pub masks: Vec<[bool; NUM_TORSIONS]>,
    pub backbone: Vec<BackboneLocal>,
    /// Target N, Cα, C, O per step and residue, centered Å.
    pub target_atoms: Vec<Vec<[Vec3; 4]>>,
}

pub fn reference_center(reference: &ProteinState) -> Vec3 {
    let n = reference.frames.len().max(1) as f64;
    reference.frames.iter().map(|f| f.trans).sum::<Vec3>() / n
}

fn centered(frames: &[Rigid], center: &Vec3) -> Vec<Rigid> {
    frames
        .iter()
        .map(|f| Rigid::new(f.rot, f.trans - center))
        .collect()
}

/// Centered conditioning grid `[motion…, reference]` in model units.
pub fn conditioning_grid(motion: &[ProteinState], reference: &ProteinState) -> Result<(FrameGrid, Vec3)> {
    let center = reference_center(reference);
    let mut rows = Vec::with_capacity(motion.len() + 1);
    for st in motion.iter().chain(std::iter::once(reference)) {
        if st.sequence != reference.sequence {
            return Err(Error::SequenceMismatch("conditioning states differ in sequence".into()));
        }
        rows.push(centered(&st.frames, &center));
    }
    Ok((to_model_units(&FrameGrid::from_rows(rows)?), center))
}

impl PreparedWindow {
    pub fn new(
        motion: &[ProteinState],
        reference: &ProteinState,
        targets: &[ProteinState],
        templates: &RigidGroupTemplates,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("window has no target steps".into()));
        }
        let seq = reference.sequence.clone();
        let (conditioning, center) = conditioning_grid(motion, reference)?;
        let chain_masks = chain_torsion_masks(&seq, templates);
        let backbone = seq
            .iter()
            .map(|&r| BackboneLocal::new(r, templates))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(targets.len());
        let mut torsions = Vec::with_capacity(targets.len());
        let mut alts = Vec::with_capacity(targets.len());
        let mut target_atoms = Vec::with_capacity(targets.len());
        for st in targets {
            if st.sequence != seq {
                return Err(Error::SequenceMismatch("target state differs in sequence".into()));
            }
            let frames = centered(&st.frames, &center);
            target_atoms.push(
                frames
                    .iter()
                    .zip(&st.torsions)
                    .zip(&backbone)
                    .map(|((f, t), bb)| bb.atoms(t.angles[PSI]).map(|p| f.apply(&p)))
                    .collect(),
            );
            rows.push(frames);
            alts.push(alt_torsions(&seq, &st.torsions, templates));
            torsions.push(st.torsions.clone());
        }
        let masks = (0..seq.len())
            .map(|i| {
                std::array::from_fn(|k| chain_masks[i][k] && targets.iter().all(|st| st.torsions[i].mask[k]))
            })
            .collect();
        Ok(PreparedWindow {
            seq,
            center,
            conditioning,
            target: FrameGrid::from_rows(rows)?,
            torsions,
            alt_torsions: alts,
            masks,
            backbone,
            target_atoms,
        })
    }

    pub fn s(&self) -> usize {
        self.target.s_count()
    }

    pub fn n(&self) -> usize {
        self.seq.len()
    }
}

/// `φ(c) = g(ω)/(2 sin ω)` with `c = cos ω`, so that the score of a relative
/// rotation `M` is `φ · vee(M − Mᵀ)`.
fn score_factor(series: &Igso3Series, c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0);
    let w = c.acos();
    let s = w.sin();
    if s > 1e-4 {
        series.log_density_derivs(w).0 / (2.0 * s)
    } else {
        // L'Hôpital at both ends of [0, π].
        series.log_density_derivs(w.max(1e-9)).1 / (2.0 * w.cos())
    }
}

fn score_factor_derivative(series: &Igso3Series, c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0);
    let w = c.acos();
    let s = w.sin();
    if s > 1e-2 {
        let (g, dg) = series.log_density_derivs(w);
        let dphi_dw = (dg * s - g * w.cos()) / (2.0 * s * s);
        -dphi_dw / s
    } else {
        let h = 1e-6;
        let (lo, hi) = ((c - h).max(-1.0), (c + h).min(1.0));
        (score_factor(series, hi) - score_factor(series, lo)) / (hi - lo)
    }
}

/// Conditional rotation scores `[B, 3]` from relative rotations
/// `M = R̂₀ᵀ R_t` given as `[B, 3, 3]`.
pub fn rot_score_on(tape: &mut Tape, rel: Var, series: &Igso3Series) -> Var {
    let m = tape.value(rel);
    assert_eq!(&m.shape()[1..], &[3, 3]);
    let b = m.shape()[0];
    let mut out = vec![0.0; b * 3];
    for k in 0..b {
        let r = &m.data()[9 * k..9 * k + 9];
        let phi = score_factor(series, (r[0] + r[4] + r[8] - 1.0) / 2.0);
        out[3 * k] = phi * (r[7] - r[5]);
        out[3 * k + 1] = phi * (r[2] - r[6]);
        out[3 * k + 2] = phi * (r[3] - r[1]);
    }
    let series = series.clone();
    tape.push(Tensor::new(&[b, 3], out), &[rel], move |g, vals, sink| {
        let m = vals[rel.0].data();
        let g = g.data();
        sink.with(rel, |gm| {
            for k in 0..b {
                let r = &m[9 * k..9 * k + 9];
                let gk = &g[3 * k..3 * k + 3];
                let c = (r[0] + r[4] + r[8] - 1.0) / 2.0;
                let phi = score_factor(&series, c);
                let w = [r[7] - r[5], r[2] - r[6], r[3] - r[1]];
                let o = &mut gm[9 * k..9 * k + 9];
                o[7] += phi * gk[0];
                o[5] -= phi * gk[0];
                o[2] += phi * gk[1];
                o[6] -= phi * gk[1];
                o[3] += phi * gk[2];
                o[1] -= phi * gk[2];
                if c.abs() < 1.0 {
                    let dot = gk[0] * w[0] + gk[1] * w[1] + gk[2] * w[2];
                    let gc = score_factor_derivative(&series, c) * dot / 2.0;
                    o[0] += gc;
                    o[4] += gc;
                    o[8] += gc;
                }
            }
        });
    })
}

/// `λ · mean_b ‖pred_b − target_b‖²` for `[B, 3]` inputs.
pub fn weighted_mse_on(tape: &mut Tape, pred: Var, target: Var, weight: f64) -> Var {
    let b = tape.shape(pred)[0];
    let d = tape.sub(pred, target);
    let sq = tape.square(d);
    let s = tape.sum_all(sq);
    tape.scale(s, weight / b as f64)
}

fn torsion_tensor(rows: &[Vec<TorsionAngles>]) -> Tensor {
    let (s, n) = (rows.len(), rows[0].len());
    let data = rows
        .iter()
        .flatten()
        .flat_map(|t| t.angles.iter().flatten().copied())
        .collect();
    Tensor::new(&[s, n, NUM_TORSIONS, 2], data)
}

/// Torsion loss for `[S, N, 7, 2]` predictions, averaged over steps.
pub fn torsion_loss_on(
    tape: &mut Tape,
    pred: Var,
    gt: &[Vec<TorsionAngles>],
    alt: &[Vec<TorsionAngles>],
    masks: &[[bool; NUM_TORSIONS]],
) -> Var {
    let (s, n) = (gt.len(), masks.len());
    let gt = tape.constant(torsion_tensor(gt));
    let alt = tape.constant(torsion_tensor(alt));
    let mut m = Vec::with_capacity(s * n * NUM_TORSIONS);
    for _ in 0..s {
        m.extend(masks.iter().flatten().map(|&b| if b { 1.0 } else { 0.0 }));
    }
    let mask = tape.constant(Tensor::new(&[s, n, NUM_TORSIONS, 1], m));
    let dist = |tape: &mut Tape, target: Var| {
        let d = tape.sub(pred, target);
        let sq = tape.square(d);
        let sq = tape.mul(sq, mask);
        let sq = tape.reshape(sq, &[s, n, 2 * NUM_TORSIONS]);
        tape.sum_axis(sq, 2)
    };
    let dg = dist(tape, gt);
    let da = dist(tape, alt);
    let best = tape.minimum(dg, da);
    let total = tape.sum_all(best);
    tape.scale(total, 1.0 / (s * n) as f64)
}

/// Predicted N, Cα, C, O `[S·N, 4, 3]` in Å from predicted rotations
/// `[S·N,3,3]`, translations `[S·N,3]` (model units) and torsions.
pub fn backbone_atoms_on(
    tape: &mut Tape,
    rot: Var,
    trans: Var,
    torsions: Var,
    backbone: &[BackboneLocal],
) -> Var {
    let bn = tape.shape(rot)[0];
    let n = backbone.len();
    let mut fixed = Vec::with_capacity(bn * 12);
    let mut ks = vec![0.0; bn * 12];
    let mut kc = vec![0.0; bn * 12];
    for k in 0..bn {
        let bb = &backbone[k % n];
        for p in &bb.fixed {
            fixed.extend_from_slice(p.as_slice());
        }
        ks[12 * k + 9..12 * k + 12].copy_from_slice(bb.o_sin.as_slice());
        kc[12 * k + 9..12 * k + 12].copy_from_slice(bb.o_cos.as_slice());
    }
    let fixed = tape.constant(Tensor::new(&[bn, 4, 3], fixed));
    let ks = tape.constant(Tensor::new(&[bn, 4, 3], ks));
    let kc = tape.constant(Tensor::new(&[bn, 4, 3], kc));
    let tor = tape.reshape(torsions, &[bn, NUM_TORSIONS, 2]);
    let psi = tape.narrow(tor, 1, PSI, 1);
    let sin = tape.narrow(psi, 2, 0, 1);
    let cos = tape.narrow(psi, 2, 1, 1);
    let a = tape.mul(sin, ks);
    let b = tape.mul(cos, kc);
    let local = tape.add(fixed, a);
    let local = tape.add(local, b);
    let trans_a = tape.scale(trans, 1.0 / TRANSLATION_SCALE);
    tape.frame_apply(rot, trans_a, local)
}

/// `(L_Ω, L_2D)` for predicted atoms `[S·N, 4, 3]` against targets, both
/// averaged over the `S` steps.
pub fn aux_losses_on(tape: &mut Tape, pred: Var, target: &[Vec<[Vec3; 4]>]) -> (Var, Var, bool) {
    let s = target.len();
    let n = target[0].len();
    let m = 4 * n;
    let pts: Vec<Vec3> = target.iter().flatten().flatten().copied().collect();
    let gt_data: Vec<f64> = pts.iter().flat_map(|p| p.iter().copied().collect::<Vec<_>>()).collect();
    let gt = tape.constant(Tensor::new(&[s * n, 4, 3], gt_data));
    let d = tape.sub(pred, gt);
    let sq = tape.square(d);
    let l_omega = tape.sum_all(sq);
    let l_omega = tape.scale(l_omega, 1.0 / (4 * n * s) as f64);

    let mut weights = vec![0.0; s * m * m];
    let mut dist = vec![0.0; s * m * m];
    let mut degenerate = false;
    for k in 0..s {
        let p = &pts[k * m..(k + 1) * m];
        let mut count = 0usize;
        for a in 0..m {
            for b in 0..m {
                let dd = (p[a] - p[b]).norm();
                dist[(k * m + a) * m + b] = dd;
                if dd < CONTACT_CUTOFF {
                    count += 1;
                    weights[(k * m + a) * m + b] = 1.0;
                }
            }
        }
        let c = count as f64 - n as f64;
        let scale = if c > 0.0 {
            1.0 / (c * s as f64)
        } else {
            degenerate = true;
            0.0
        };
        for w in &mut weights[k * m * m..(k + 1) * m * m] {
            *w *= scale;
        }
    }
    let pred = tape.reshape(pred, &[s, m, 3]);
    let pd = tape.pairwise_distances(pred);
    let gd = tape.constant(Tensor::new(&[s, m, m], dist));
    let w = tape.constant(Tensor::new(&[s, m, m], weights));
    let e = tape.sub(pd, gd);
    let e = tape.square(e);
    let e = tape.mul(e, w);
    let l_2d = tape.sum_all(e);
    (l_omega, l_2d, degenerate)
}

/// Weighted total from `[dsm_rot, dsm_trans, torsion, l_omega, l_2d]`. When
/// the auxiliary gate is closed those terms are left off the tape path, so
/// they receive no gradient at all.
pub fn assemble_total(tape: &mut Tape, terms: [Var; 5], t: f64) -> Var {
    let [dsm_rot, dsm_trans, torsion, l_omega, l_2d] = terms;
    let mut total = tape.add(dsm_rot, dsm_trans);
    let torsion = tape.scale(torsion, TORSION_WEIGHT);
    total = tape.add(total, torsion);
    let gate = aux_gate(t);
    if gate > 0.0 {
        let aux = tape.add(l_omega, l_2d);
        let aux = tape.scale(aux, gate);
        total = tape.add(total, aux);
    }
    total
}

#[derive(Clone, Copy, Debug)]
pub struct WindowLoss {
    pub total: Var,
    pub report: LossReport,
    pub aux_degenerate: bool,
}

/// Noises the window's targets at time `t`, runs the trunk and records the
/// full weighted loss.
#[allow(clippy::too_many_arguments)]
pub fn window_loss_on(
    tape: &mut Tape,
    b: &mut Binder<'_>,
    cfg: &ModelConfig,
    sched: &DiffusionSchedule,
    window: &PreparedWindow,
    t: f64,
    opts: TrunkOptions,
    embedding: Option<&PrecomputedEmbedding>,
    rng: &mut impl Rng,
) -> Result<WindowLoss> {
    let noised = forward_noise(&window.target, t, sched, rng)?;
    let out = trunk_forward_on(
        tape,
        b,
        cfg,
        &TrunkInputs {
            seq: &window.seq,
            t,
            noisy: &noised.noisy,
            clean: &window.conditioning,
            embedding,
        },
        opts,
    )?;
    let bn = noised.rot_scores.len();
    let vecs = |v: &[Vec3]| Tensor::new(&[v.len(), 3], v.iter().flat_map(|x| [x.x, x.y, x.z]).collect());

    let (noisy_rot, noisy_trans) = crate::network::frames_to_tensors(noised.noisy.frames());
    let noisy_rot = tape.constant(noisy_rot);
    let rel = tape.bmm(out.rot, noisy_rot, true, false);
    let series = sched.series(t)?;
    let pred_rot_score = rot_score_on(tape, rel, &series);
    let target_rot = tape.constant(vecs(&noised.rot_scores));
    let dsm_rot = weighted_mse_on(tape, pred_rot_score, target_rot, sched.lambda_rot(t)?);

    let var = 1.0 - (-t).exp();
    let pulled = tape.scale(out.trans, (-t / 2.0).exp() / var);
    let mut offset = noisy_trans;
    offset.scale_in_place(-1.0 / var);
    let offset = tape.constant(offset);
    let pred_trans_score = tape.add(pulled, offset);
    let target_trans = tape.constant(vecs(&noised.trans_scores));
    let dsm_trans = weighted_mse_on(tape, pred_trans_score, target_trans, sched.lambda_trans(t)?);
    debug_assert_eq!(tape.shape(pred_trans_score)[0], bn);

    let torsion = torsion_loss_on(tape, out.torsions, &window.torsions, &window.alt_torsions, &window.masks);
    let atoms = backbone_atoms_on(tape, out.rot, out.trans, out.torsions, &window.backbone);
    let (l_omega, l_2d, aux_degenerate) = aux_losses_on(tape, atoms, &window.target_atoms);

    let total = assemble_total(tape, [dsm_rot, dsm_trans, torsion, l_omega, l_2d], t);
    let item = |v: Var| tape.value(v).item();
    let report = total_loss(
        &LossComponents {
            dsm_rot: item(dsm_rot),
            dsm_trans: item(dsm_trans),
            torsion: item(torsion),
            l_omega: item(l_omega),
            l_2d: item(l_2d),
        },
        t,
    )?;
    if !tape.value(total).is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }
    Ok(WindowLoss {
        total,
        report,
        aux_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::gradient_check;
    use crate::diffusion::loss::{aux_losses, torsion_loss};
    use crate::geom::{exp_so3, random_unit_vector, rot_score_with, Rotation, RotationSchedule};
    use crate::network::{ModelParams, ParamGroup};
    use crate::diffusion::loss::BACKBONE_SLOTS as BACKBONE_SLOT_LIST;
    use crate::protein::{atoms_from_frames_and_torsions, AtomSet, ResidueType};
    use crate::testutil::{jittered, peptide};

    fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rotation {
        exp_so3(&(random_unit_vector(rng) * (rng.random::<f64>() * max_angle)))
    }

    fn rot_tensor(rs: &[Rotation]) -> Tensor {
        Tensor::new(
            &[rs.len(), 3, 3],
            rs.iter()
                .flat_map(|r| {
                    let m = r.matrix();
                    (0..9).map(move |e| m[(e / 3, e % 3)])
                })
                .collect(),
        )
    }

    #[test]
    fn rotation_score_op_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &s2 in &[0.01, 0.3, 2.25] {
            let series = Igso3Series::new(s2, 1000).unwrap();
            let pred: Vec<Rotation> = (0..20).map(|_| random_rotation(&mut rng, 3.0)).collect();
            let noisy: Vec<Rotation> = (0..20).map(|_| random_rotation(&mut rng, 3.0)).collect();
            let mut tape = Tape::new();
            let p = tape.constant(rot_tensor(&pred));
            let x = tape.constant(rot_tensor(&noisy));
            let rel = tape.bmm(p, x, true, false);
            let sc = rot_score_on(&mut tape, rel, &series);
            let got = tape.value(sc).data().to_vec();
            for k in 0..20 {
                let want = rot_score_with(&series, &noisy[k], &pred[k]);
                for c in 0..3 {
                    assert!(
                        (got[3 * k + c] - want[c]).abs() < 1e-7 * (1.0 + want.norm()),
                        "σ²={s2} k={k}: {} vs {}",
                        got[3 * k + c],
                        want[c]
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_score_op_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &s2 in &[0.02, 0.5, 2.0] {
            let series = Igso3Series::new(s2, 1000).unwrap();
            let rs: Vec<Rotation> = (0..6).map(|_| random_rotation(&mut rng, 2.8)).collect();
            let weights = Tensor::new(&[6, 3], (0..18).map(|_| rng.random::<f64>() - 0.5).collect());
            let err = gradient_check(&[rot_tensor(&rs)], 1e-6, 1e-6, |t, v| {
                let s = rot_score_on(t, v[0], &series);
                let w = t.constant(weights.clone());
                let p = t.mul(s, w);
                t.sum_all(p)
            });
            assert!(err < 1e-4, "σ²={s2}: {err}");
        }
    }

    #[test]
    fn backbone_local_matches_full_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let templates = RigidGroupTemplates::standard();
        for r in ResidueType::ALL {
            let bb = BackboneLocal::new(r, templates).unwrap();
            let psi = rng.random::<f64>() * 2.0 * PI - PI;
            let mut tors = crate::protein::TorsionAngles::default();
            tors.set_angle(PSI, psi);
            let frame = Rigid::new(random_rotation(&mut rng, 3.0), random_unit_vector(&mut rng) * 4.0);
            let full = atoms_from_frames_and_torsions(&[r], &[frame], &[tors], templates).unwrap();
            let local = bb.atoms([psi.sin(), psi.cos()]);
            for (k, &slot) in BACKBONE_SLOT_LIST.iter().enumerate() {
                assert!((frame.apply(&local[k]) - full.coords[0][slot]).norm() < 1e-10, "{r:?} slot {slot}");
            }
        }
    }

    fn window(rng: &mut ChaCha8Rng, seq: &str, s: usize) -> PreparedWindow {
        let base = peptide(seq, rng);
        let states: Vec<ProteinState> = (0..3 + s).map(|_| jittered(&base, 0.2, 0.5, rng)).collect();
        PreparedWindow::new(&states[..2], &states[2], &states[3..], RigidGroupTemplates::standard()).unwrap()
    }

    fn pred_tensors(w: &PreparedWindow, rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor) {
        let frames: Vec<Rigid> = w
            .target
            .frames()
            .iter()
            .map(|f| {
                Rigid::new(
                    f.rot.compose(&random_rotation(rng, 0.3)),
                    (f.trans + random_unit_vector(rng) * 0.7) * TRANSLATION_SCALE,
                )
            })
            .collect();
        let (r, t) = crate::network::frames_to_tensors(&frames);
        let bn = frames.len();
        let mut tor = Vec::with_capacity(bn * 14);
        for _ in 0..bn * 7 {
            let a = rng.random::<f64>() * 2.0 * PI;
            tor.extend([a.sin(), a.cos()]);
        }
        (r, t, Tensor::new(&[w.s(), w.n(), 7, 2], tor))
    }

    #[test]
    fn tape_torsion_loss_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = window(&mut rng, "ADFKY", 3);
        let (_, _, tor) = pred_tensors(&w, &mut rng);
        let mut tape = Tape::new();
        let p = tape.constant(tor.clone());
        let l = torsion_loss_on(&mut tape, p, &w.torsions, &w.alt_torsions, &w.masks);
        let pred = crate::network::torsions_from_tensor(&tor);
        let plain: f64 = (0..w.s())
            .map(|k| torsion_loss(&pred[k], &w.torsions[k], &w.alt_torsions[k], &w.masks).unwrap())
            .sum::<f64>()
            / w.s() as f64;
        assert!((tape.value(l).item() - plain).abs() < 1e-12);
        let err = gradient_check(&[tor], 1e-6, 1e-8, |t, v| {
            torsion_loss_on(t, v[0], &w.torsions, &w.alt_torsions, &w.masks)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn tape_aux_losses_match_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = window(&mut rng, "GSWE", 2);
        let (r, t, tor) = pred_tensors(&w, &mut rng);
        let mut tape = Tape::new();
        let (rv, tv, torv) = (tape.constant(r.clone()), tape.constant(t.clone()), tape.constant(tor.clone()));
        let atoms = backbone_atoms_on(&mut tape, rv, tv, torv, &w.backbone);
        let (lo, l2, degenerate) = aux_losses_on(&mut tape, atoms, &w.target_atoms);
        assert!(!degenerate);

        let pts = tape.value(atoms).data().to_vec();
        let set = |rows: &[[Vec3; 4]]| {
            let mut a = AtomSet::empty(rows.len());
            for (i, p) in rows.iter().enumerate() {
                for (k, &slot) in BACKBONE_SLOT_LIST.iter().enumerate() {
                    a.coords[i][slot] = p[k];
                    a.exists[i][slot] = true;
                }
            }
            a
        };
        let n = w.n();
        let pred_sets: Vec<AtomSet> = (0..w.s())
            .map(|k| {
                let rows: Vec<[Vec3; 4]> = (0..n)
                    .map(|i| {
                        std::array::from_fn(|a| {
                            let o = ((k * n + i) * 4 + a) * 3;
                            Vec3::new(pts[o], pts[o + 1], pts[o + 2])
                        })
                    })
                    .collect();
                set(&rows)
            })
            .collect();
        let gt_sets: Vec<AtomSet> = w.target_atoms.iter().map(|r| set(r)).collect();
        let plain = aux_losses(&pred_sets, &gt_sets).unwrap();
        assert!((tape.value(lo).item() - plain.l_omega).abs() < 1e-10);
        assert!((tape.value(l2).item() - plain.l_2d).abs() < 1e-10);

        let err = gradient_check(&[r, t, tor], 1e-6, 1e-6, |tp, v| {
            let a = backbone_atoms_on(tp, v[0], v[1], v[2], &w.backbone);
            let (x, y, _) = aux_losses_on(tp, a, &w.target_atoms);
            tp.add(x, y)
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn ground_truth_prediction_zeroes_auxiliary_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = window(&mut rng, "MKV", 2);
        let frames: Vec<Rigid> = w.target.frames().iter().map(|f| f.scale_translation(TRANSLATION_SCALE)).collect();
        let (r, t) = crate::network::frames_to_tensors(&frames);
        let mut tape = Tape::new();
        let (rv, tv) = (tape.constant(r), tape.constant(t));
        let tor = tape.constant(torsion_tensor(&w.torsions));
        let atoms = backbone_atoms_on(&mut tape, rv, tv, tor, &w.backbone);
        let (lo, l2, _) = aux_losses_on(&mut tape, atoms, &w.target_atoms);
        assert!(tape.value(lo).item() < 1e-20);
        assert!(tape.value(l2).item() < 1e-20);
        let tl = torsion_loss_on(&mut tape, tor, &w.torsions, &w.alt_torsions, &w.masks);
        assert_eq!(tape.value(tl).item(), 0.0);
    }

    fn objective_at(params: &ModelParams, w: &PreparedWindow, sched: &DiffusionSchedule, t: f64, seed: u64) -> (f64, Vec<Option<Tensor>>, WindowLoss) {
        let cfg = ModelConfig::tiny();
        let mut tape = Tape::new();
        let mut b = Binder::new(params, |_| true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wl = window_loss_on(&mut tape, &mut b, &cfg, sched, w, t, TrunkOptions::default(), None, &mut rng).unwrap();
        let mut grads = tape.backward(wl.total);
        (tape.value(wl.total).item(), b.gradients(&mut grads), wl)
    }

    #[test]
    fn report_identity_and_aux_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = window(&mut rng, "ACDE", 2);
        let sched = DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.01, 8, 2000).unwrap();
        let params = ModelParams::init(&ModelConfig::tiny(), &mut rng);
        for &t in &[0.1, 0.25, 0.6] {
            let (total, _, wl) = objective_at(&params, &w, &sched, t, 11);
            let r = wl.report;
            let expect = r.dsm_rot + r.dsm_trans + r.torsion + if t < 0.25 { 0.25 * (r.l_omega + r.l_2d) } else { 0.0 };
            assert!((r.total - expect).abs() < 1e-10);
            assert!((total - r.total).abs() < 1e-10 * r.total.max(1.0));
            assert!(r.l_omega > 0.0 && r.l_2d > 0.0);
        }
    }

    #[test]
    fn closed_aux_gate_gives_atoms_exactly_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = window(&mut rng, "ACDE", 1);
        let target: Vec<f64> = w.target_atoms.iter().flatten().flatten().flat_map(|p| [p.x, p.y, p.z]).collect();
        let atoms = Tensor::new(&[w.n(), 4, 3], target.iter().map(|x| x + rng.random::<f64>() - 0.5).collect());
        for &t in &[0.1, 0.2499, 0.25, 0.7] {
            let mut tape = Tape::new();
            let a = tape.leaf(atoms.clone());
            let other = tape.leaf(Tensor::scalar(1.5));
            let (lo, l2, _) = aux_losses_on(&mut tape, a, &w.target_atoms);
            let total = assemble_total(&mut tape, [other, other, other, lo, l2], t);
            let g = tape.backward(total);
            let zero = g.get(a).is_none_or(|g| g.data().iter().all(|&x| x == 0.0));
            assert_eq!(zero, t >= 0.25, "t = {t}");
            assert_eq!(g.get(other).unwrap().item(), 3.0);
        }
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = window(&mut rng, "GAV", 2);
        let sched = DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.01, 8, 2000).unwrap();
        let mut params = ModelParams::init(&ModelConfig::tiny(), &mut rng);
        // Break the zero initialisation so every path carries signal.
        for e in params.entries_mut() {
            for x in e.tensor.data_mut() {
                *x += 0.05 * (rng.random::<f64>() - 0.5);
            }
        }
        let t = 0.15;
        let (_, grads, _) = objective_at(&params, &w, &sched, t, 21);
        let names = ["embed.residue", "layer0.ipa.q.w", "layer1.backbone.w", "layer0.temporal.we.w", "layer1.spatial.wr.w", "torsion.out.b"];
        let h = 1e-5;
        for name in names {
            let k = params.index_of(name).unwrap();
            assert_eq!(params.entries()[k].group == ParamGroup::MotionAlignment, name.contains("temporal"));
            let g = grads[k].as_ref().unwrap();
            for _ in 0..3 {
                let e = rng.random_range(0..g.numel());
                let mut p = params.clone();
                p.get_mut(name).unwrap().data_mut()[e] += h;
                let fp = objective_at(&p, &w, &sched, t, 21).0;
                p.get_mut(name).unwrap().data_mut()[e] -= 2.0 * h;
                let fm = objective_at(&p, &w, &sched, t, 21).0;
                let num = (fp - fm) / (2.0 * h);
                let a = g.data()[e];
                assert!((a - num).abs() <= 1e-4 * (a.abs() + num.abs()).max(1e-3), "{name}[{e}]: {a} vs {num}");
            }
        }
    }
}
