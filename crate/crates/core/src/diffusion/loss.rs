use serde::{Deserialize, Serialize};

use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::geom::{TangentVector, Vec3};
use crate::protein::{AtomSet, TorsionAngles, SLOT_C, SLOT_CA, SLOT_N, SLOT_O};
use crate::protein::NUM_TORSIONS;

pub const AUX_WEIGHT: f64 = 0.25;
pub const TORSION_WEIGHT: f64 = 1.0;
/// Auxiliary losses apply only for `t` strictly below this.
pub const AUX_T_CUTOFF: f64 = 0.25;
/// Pair-distance indicator threshold in Å.
pub const CONTACT_CUTOFF: f64 = 6.0;
pub const BACKBONE_SLOTS: [usize; 4] = [SLOT_N, SLOT_CA, SLOT_C, SLOT_O];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub dsm_rot: f64,
    pub dsm_trans: f64,
    pub torsion: f64,
    pub l_omega: f64,
    pub l_2d: f64,
    pub total: f64,
    pub t: f64,
}

/// Unweighted loss terms of one example.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub dsm_rot: f64,
    pub dsm_trans: f64,
    pub torsion: f64,
    pub l_omega: f64,
    pub l_2d: f64,
}

pub fn aux_gate(t: f64) -> f64 {
    if t < AUX_T_CUTOFF {
        AUX_WEIGHT
    } else {
        0.0
    }
}

pub fn total_loss(c: &LossComponents, t: f64) -> Result<LossReport> {
    for (name, v) in [
        ("dsm_rot", c.dsm_rot),
        ("dsm_trans", c.dsm_trans),
        ("torsion", c.torsion),
        ("l_omega", c.l_omega),
        ("l_2d", c.l_2d),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss component {name} = {v}")));
        }
    }
    let total =
        c.dsm_rot + c.dsm_trans + aux_gate(t) * (c.l_omega + c.l_2d) + TORSION_WEIGHT * c.torsion;
    Ok(LossReport {
        dsm_rot: c.dsm_rot,
        dsm_trans: c.dsm_trans,
        torsion: c.torsion,
        l_omega: c.l_omega,
        l_2d: c.l_2d,
        total,
        t,
    })
}

/// Weighted mean squared score errors `(rotation, translation)`.
pub fn dsm_loss(
    pred: (&[TangentVector], &[TangentVector]),
    target: (&[TangentVector], &[TangentVector]),
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<(f64, f64)> {
    let n = target.0.len();
    if pred.0.len() != n || pred.1.len() != n || target.1.len() != n {
        return Err(Error::Shape("score arrays differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Shape("empty score arrays".into()));
    }
    let mse = |a: &[Vec3], b: &[Vec3]| {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / n as f64
    };
    Ok((
        sched.lambda_rot(t)? * mse(pred.0, target.0),
        sched.lambda_trans(t)? * mse(pred.1, target.1),
    ))
}

/// Mean over residues of the squared torsion error against the closer of the
/// two ground truths, restricted to masked-in angles.
pub fn torsion_loss(
    pred: &[TorsionAngles],
    gt: &[TorsionAngles],
    alt_gt: &[TorsionAngles],
    masks: &[[bool; NUM_TORSIONS]],
) -> Result<f64> {
    let n = pred.len();
    if gt.len() != n || alt_gt.len() != n || masks.len() != n {
        return Err(Error::Shape("torsion arrays differ in length".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let dist = |a: &TorsionAngles, b: &TorsionAngles, m: &[bool; NUM_TORSIONS]| {
        (0..NUM_TORSIONS)
            .filter(|&k| m[k])
            .map(|k| (a.angles[k][0] - b.angles[k][0]).powi(2) + (a.angles[k][1] - b.angles[k][1]).powi(2))
            .sum::<f64>()
    };
    let sum: f64 = (0..n)
        .map(|i| dist(&pred[i], &gt[i], &masks[i]).min(dist(&pred[i], &alt_gt[i], &masks[i])))
        .sum();
    Ok(sum / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AuxLosses {
    pub l_omega: f64,
    pub l_2d: f64,
    /// Set when some structure had no qualifying pairs, so its `l_2d` was
    /// taken as zero.
    pub degenerate: bool,
}

fn backbone_points(atoms: &AtomSet) -> Vec<Vec3> {
    atoms
        .coords
        .iter()
        .flat_map(|c| BACKBONE_SLOTS.map(|s| c[s]))
        .collect()
}

/// Atom-position and pair-distance losses over N, Cα, C, O (Å), averaged
/// over the structures given.
pub fn aux_losses(pred: &[AtomSet], gt: &[AtomSet]) -> Result<AuxLosses> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape("need matching, non-empty structure lists".into()));
    }
    let mut out = AuxLosses::default();
    for (p, g) in pred.iter().zip(gt) {
        let n = g.len();
        if p.len() != n || n == 0 {
            return Err(Error::Shape("structures differ in residue count".into()));
        }
        let (pp, gp) = (backbone_points(p), backbone_points(g));
        out.l_omega +=
            pp.iter().zip(&gp).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / (4 * n) as f64;

        let (mut num, mut count) = (0.0, 0usize);
        for a in 0..gp.len() {
            for b in 0..gp.len() {
                let d = (gp[a] - gp[b]).norm();
                if d < CONTACT_CUTOFF {
                    count += 1;
                    num += (d - (pp[a] - pp[b]).norm()).powi(2);
                }
            }
        }
        let c = count as f64 - n as f64;
        if c > 0.0 {
            out.l_2d += num / c;
        } else {
            out.degenerate = true;
        }
    }
    let s = pred.len() as f64;
    out.l_omega /= s;
    out.l_2d /= s;
    Ok(out)
}
