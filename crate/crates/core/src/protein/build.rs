//! Conversions between (frames, torsions) and heavy-atom coordinates.

use std::f64::consts::PI;

use nalgebra::Matrix3;

use super::residue::ResidueType;
use super::state::{AtomSet, ProteinState, TorsionAngles};
use super::templates::{RigidGroupTemplates, ATOMS_PER_RESIDUE, CHI1, NUM_TORSIONS, OMEGA, PHI, PSI};
use crate::error::{Error, Result};
use crate::geom::{Rigid, Rotation, Vec3};

pub const SLOT_N: usize = 0;
pub const SLOT_CA: usize = 1;
pub const SLOT_C: usize = 2;
pub const SLOT_O: usize = 3;

/// Peptide-bond geometry used when chaining residues.
pub const BOND_C_N: f64 = 1.329;
pub const ANGLE_CA_C_N: f64 = 116.2 * PI / 180.0;
pub const ANGLE_C_N_CA: f64 = 121.7 * PI / 180.0;

/// Backbone frame: origin at Cα, x along Cα→C, z along x × (N − Cα).
pub fn frames_from_backbone(n: &Vec3, ca: &Vec3, c: &Vec3) -> Result<Rigid> {
    let e1 = c - ca;
    let norm1 = e1.norm();
    if norm1 < 1e-8 {
        return Err(Error::DegenerateGeometry("C coincides with CA".into()));
    }
    let x = e1 / norm1;
    let cross = x.cross(&(n - ca));
    let norm3 = cross.norm();
    if norm3 < 1e-8 {
        return Err(Error::DegenerateGeometry(
            "N, CA and C are collinear".into(),
        ));
    }
    let z = cross / norm3;
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    Ok(Rigid::new(Rotation::from_matrix_unchecked(m), *ca))
}

/// Rotation about the local x-axis by the angle whose `(sin, cos)` is given.
pub fn rot_x(sin_cos: [f64; 2]) -> Rotation {
    let n = (sin_cos[0].powi(2) + sin_cos[1].powi(2)).sqrt();
    let (s, c) = if n > 0.0 {
        (sin_cos[0] / n, sin_cos[1] / n)
    } else {
        (0.0, 1.0)
    };
    Rotation::from_matrix_unchecked(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
}

/// Transforms from every rigid group of one residue to its backbone frame,
/// indexed by group index (0..8). Missing groups stay identity.
pub fn group_frames(
    residue: ResidueType,
    torsions: &TorsionAngles,
    templates: &RigidGroupTemplates,
) -> [Rigid; 8] {
    let tmpl = templates.get(residue);
    let mut out = [Rigid::identity(); 8];
    for g in &tmpl.groups {
        let base = g.parent.map(|p| out[p]).unwrap_or_else(Rigid::identity);
        let mut t = base.compose(&g.default_frame);
        if let Some(k) = g.torsion {
            t = t.compose(&Rigid::new(rot_x(torsions.angles[k]), Vec3::zeros()));
        }
        out[g.index] = t;
    }
    out
}

pub fn atoms_from_frames_and_torsions(
    seq: &[ResidueType],
    frames: &[Rigid],
    torsions: &[TorsionAngles],
    templates: &RigidGroupTemplates,
) -> Result<AtomSet> {
    if frames.len() != seq.len() || torsions.len() != seq.len() {
        return Err(Error::Shape(format!(
            "sequence length {} but {} frames and {} torsions",
            seq.len(),
            frames.len(),
            torsions.len()
        )));
    }
    let mut atoms = AtomSet::empty(seq.len());
    for (i, &r) in seq.iter().enumerate() {
        let groups = group_frames(r, &torsions[i], templates);
        for g in &templates.get(r).groups {
            let to_global = frames[i].compose(&groups[g.index]);
            for (slot, pos) in &g.atoms {
                atoms.coords[i][*slot] = to_global.apply(pos);
                atoms.exists[i][*slot] = true;
            }
        }
    }
    Ok(atoms)
}

pub fn state_atoms(state: &ProteinState, templates: &RigidGroupTemplates) -> Result<AtomSet> {
    atoms_from_frames_and_torsions(&state.sequence, &state.frames, &state.torsions, templates)
}

/// Signed dihedral angle of four points, in (−π, π].
pub fn dihedral(p0: &Vec3, p1: &Vec3, p2: &Vec3, p3: &Vec3) -> f64 {
    let b1 = p1 - p0;
    let b2 = p2 - p1;
    let b3 = p3 - p2;
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let y = b2.norm() * b1.dot(&n2);
    let x = n1.dot(&n2);
    y.atan2(x)
}

fn sin_cos(a: f64) -> [f64; 2] {
    [a.sin(), a.cos()]
}

/// Torsions measured from coordinates. A torsion whose defining atoms are not
/// all present gets a cleared mask and the `(0, 1)` placeholder.
pub fn torsions_from_atoms(
    seq: &[ResidueType],
    atoms: &AtomSet,
    templates: &RigidGroupTemplates,
) -> Result<Vec<TorsionAngles>> {
    if atoms.len() != seq.len() {
        return Err(Error::Shape(format!(
            "{} residues but {} atom rows",
            seq.len(),
            atoms.len()
        )));
    }
    let mut out = Vec::with_capacity(seq.len());
    for (i, &r) in seq.iter().enumerate() {
        let tmpl = templates.get(r);
        let mut t = TorsionAngles::default();
        let here = |slot: usize| atoms.get(i, slot);
        if i > 0 {
            let prev = |slot: usize| atoms.get(i - 1, slot);
            if let (Some(a), Some(b), Some(c), Some(d)) =
                (prev(SLOT_CA), prev(SLOT_C), here(SLOT_N), here(SLOT_CA))
            {
                t.angles[OMEGA] = sin_cos(dihedral(&a, &b, &c, &d));
                t.mask[OMEGA] = true;
            }
            if let (Some(a), Some(b), Some(c), Some(d)) =
                (prev(SLOT_C), here(SLOT_N), here(SLOT_CA), here(SLOT_C))
            {
                t.angles[PHI] = sin_cos(dihedral(&a, &b, &c, &d));
                t.mask[PHI] = true;
            }
        }
        if let (Some(a), Some(b), Some(c), Some(d)) =
            (here(SLOT_N), here(SLOT_CA), here(SLOT_C), here(SLOT_O))
        {
            t.angles[PSI] = sin_cos(dihedral(&a, &b, &c, &d) + PI);
            t.mask[PSI] = true;
        }
        for (k, quad) in tmpl.chi_atoms.iter().enumerate() {
            if let (Some(a), Some(b), Some(c), Some(d)) =
                (here(quad[0]), here(quad[1]), here(quad[2]), here(quad[3]))
            {
                t.angles[CHI1 + k] = sin_cos(dihedral(&a, &b, &c, &d));
                t.mask[CHI1 + k] = true;
            }
        }
        out.push(t);
    }
    Ok(out)
}

/// Alternative ground truth: π-periodic side-chain torsions shifted by π.
pub fn alt_torsions(
    seq: &[ResidueType],
    torsions: &[TorsionAngles],
    templates: &RigidGroupTemplates,
) -> Vec<TorsionAngles> {
    seq.iter()
        .zip(torsions)
        .map(|(&r, t)| {
            let mut alt = *t;
            for &k in &templates.get(r).symmetric_chi {
                let a = &mut alt.angles[CHI1 + k];
                *a = [-a[0], -a[1]];
            }
            alt
        })
        .collect()
}

/// Per-residue torsion masks for a chain: type-defined angles, with ω and φ
/// cleared on the first residue.
pub fn chain_torsion_masks(
    seq: &[ResidueType],
    templates: &RigidGroupTemplates,
) -> Vec<[bool; NUM_TORSIONS]> {
    seq.iter()
        .enumerate()
        .map(|(i, &r)| {
            let mut m = templates.get(r).torsion_mask();
            if i == 0 {
                m[OMEGA] = false;
                m[PHI] = false;
            }
            m
        })
        .collect()
}

/// Places `d` from `a, b, c` with bond |cd|, angle ∠bcd and dihedral abcd.
pub fn place_atom(a: &Vec3, b: &Vec3, c: &Vec3, bond: f64, angle: f64, torsion: f64) -> Vec3 {
    let bc = (c - b).normalize();
    let n = (b - a).cross(&bc).normalize();
    let m = n.cross(&bc);
    let d2 = Vec3::new(
        -bond * angle.cos(),
        bond * angle.sin() * torsion.cos(),
        bond * angle.sin() * torsion.sin(),
    );
    c + bc * d2.x + m * d2.y + n * d2.z
}

fn template_backbone(r: ResidueType, templates: &RigidGroupTemplates) -> (Vec3, Vec3) {
    let bb = templates.get(r).group(0).expect("backbone group");
    let find = |slot| bb.atoms.iter().find(|(s, _)| *s == slot).unwrap().1;
    (find(SLOT_N), find(SLOT_C))
}

/// Backbone frames of an idealized chain with the given torsions (radians).
/// Residue 0 sits at the identity frame; `phi[0]` and `omega[0]` are unused.
pub fn chain_frames(
    seq: &[ResidueType],
    phi: &[f64],
    psi: &[f64],
    omega: &[f64],
    templates: &RigidGroupTemplates,
) -> Result<Vec<Rigid>> {
    let n = seq.len();
    if phi.len() != n || psi.len() != n || omega.len() != n {
        return Err(Error::Shape("torsion arrays must match sequence length".into()));
    }
    let mut frames = Vec::with_capacity(n);
    if n == 0 {
        return Ok(frames);
    }
    frames.push(Rigid::identity());
    for i in 1..n {
        let prev = frames[i - 1];
        let (pn, pc) = template_backbone(seq[i - 1], templates);
        let n_prev = prev.apply(&pn);
        let ca_prev = prev.trans;
        let c_prev = prev.apply(&pc);
        let (tn, tc) = template_backbone(seq[i], templates);
        let n_ca = tn.norm();
        let ca_c = tc.norm();
        let n_ca_c = (tn.dot(&tc) / (n_ca * ca_c)).acos();
        let n_i = place_atom(&n_prev, &ca_prev, &c_prev, BOND_C_N, ANGLE_CA_C_N, psi[i - 1]);
        let ca_i = place_atom(&ca_prev, &c_prev, &n_i, n_ca, ANGLE_C_N_CA, omega[i]);
        let c_i = place_atom(&c_prev, &n_i, &ca_i, ca_c, n_ca_c, phi[i]);
        frames.push(frames_from_backbone(&n_i, &ca_i, &c_i)?);
    }
    Ok(frames)
}

/// Idealized chain state with per-residue torsions in radians. `chi[i]` holds
/// up to four side-chain angles; extra entries are ignored.
pub fn build_state(
    seq: &[ResidueType],
    phi: &[f64],
    psi: &[f64],
    omega: &[f64],
    chi: &[[f64; 4]],
    templates: &RigidGroupTemplates,
) -> Result<ProteinState> {
    let frames = chain_frames(seq, phi, psi, omega, templates)?;
    let masks = chain_torsion_masks(seq, templates);
    let torsions = (0..seq.len())
        .map(|i| {
            let mut vals = [omega[i], phi[i], psi[i], 0.0, 0.0, 0.0, 0.0];
            vals[CHI1..].copy_from_slice(&chi[i]);
            let mut t = TorsionAngles::from_radians(vals, masks[i]);
            for k in 0..NUM_TORSIONS {
                if !masks[i][k] {
                    t.angles[k] = [0.0, 1.0];
                }
            }
            t
        })
        .collect();
    ProteinState::new(seq.to_vec(), frames, torsions)
}

/// Atom slots that exist for a residue type.
pub fn atom_exists(r: ResidueType, templates: &RigidGroupTemplates) -> [bool; ATOMS_PER_RESIDUE] {
    let mut m = [false; ATOMS_PER_RESIDUE];
    for k in 0..templates.get(r).num_atoms() {
        m[k] = true;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{exp_so3, quat_to_rot};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn templates() -> &'static RigidGroupTemplates {
        RigidGroupTemplates::standard()
    }

    fn random_rigid(rng: &mut impl Rng) -> Rigid {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        Rigid::new(
            quat_to_rot(q[0], q[1], q[2], q[3]).unwrap(),
            Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            ),
        )
    }

    #[test]
    fn template_backbone_is_identity_frame() {
        let (n, c) = template_backbone(ResidueType::Ala, templates());
        let f = frames_from_backbone(&n, &Vec3::zeros(), &c).unwrap();
        assert!((f.rot.matrix() - Matrix3::identity()).abs().max() < 1e-12);
        assert_eq!(f.trans, Vec3::zeros());
        let shift = Vec3::new(5.0, 0.0, 0.0);
        let g = frames_from_backbone(&(n + shift), &shift, &(c + shift)).unwrap();
        assert!((g.rot.matrix() - f.rot.matrix()).abs().max() < 1e-12);
        assert_eq!(g.trans, shift);
    }

    #[test]
    fn collinear_backbone_is_degenerate() {
        let r = frames_from_backbone(
            &Vec3::new(-1.0, 0.0, 0.0),
            &Vec3::zeros(),
            &Vec3::new(1.0, 0.0, 0.0),
        );
        assert!(matches!(r, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn frame_construction_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, c) = template_backbone(ResidueType::Leu, templates());
        let base = random_rigid(&mut rng);
        let (n0, ca0, c0) = (base.apply(&n), base.trans, base.apply(&c));
        let f0 = frames_from_backbone(&n0, &ca0, &c0).unwrap();
        for _ in 0..1000 {
            let g = random_rigid(&mut rng);
            let f = frames_from_backbone(&g.apply(&n0), &g.apply(&ca0), &g.apply(&c0)).unwrap();
            let expect = g.compose(&f0);
            assert!((f.rot.matrix() - expect.rot.matrix()).abs().max() < 1e-8);
            assert!((f.trans - expect.trans).norm() < 1e-8);
        }
    }

    #[test]
    fn glycine_has_only_backbone_atoms() {
        let t = TorsionAngles::default();
        let atoms =
            atoms_from_frames_and_torsions(&[ResidueType::Gly], &[Rigid::identity()], &[t], templates())
                .unwrap();
        let present: Vec<usize> = (0..ATOMS_PER_RESIDUE).filter(|&k| atoms.exists[0][k]).collect();
        assert_eq!(present, vec![0, 1, 2, 3]);
        assert!(templates().get(ResidueType::Gly).torsion_mask()[CHI1..].iter().all(|m| !m));
    }

    #[test]
    fn default_torsions_reproduce_direct_template_chaining() {
        // Oracle: compose the stored default frames directly.
        for res in templates().iter() {
            let t = TorsionAngles::default();
            let atoms =
                atoms_from_frames_and_torsions(&[res.residue], &[Rigid::identity()], &[t], templates())
                    .unwrap();
            for g in &res.groups {
                let mut chain = vec![g];
                while let Some(p) = chain.last().unwrap().parent {
                    chain.push(res.group(p).unwrap());
                }
                for (slot, pos) in &g.atoms {
                    let mut p = *pos;
                    for link in &chain {
                        p = link.default_frame.rot.matrix() * p + link.default_frame.trans;
                    }
                    assert!((atoms.coords[0][*slot] - p).norm() < 1e-12, "{} slot {slot}", res.residue);
                }
            }
        }
    }

    fn random_state(rng: &mut impl Rng, seq: &[ResidueType]) -> ProteinState {
        let n = seq.len();
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
        let psi: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
        let omega: Vec<f64> = (0..n).map(|_| PI + rng.random_range(-0.2..0.2)).collect();
        let chi: Vec<[f64; 4]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-PI..PI)))
            .collect();
        let mut s = build_state(seq, &phi, &psi, &omega, &chi, templates()).unwrap();
        let g = random_rigid(rng);
        for f in s.frames.iter_mut() {
            *f = g.compose(f);
        }
        s
    }

    #[test]
    fn round_trip_all_residue_types() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let seq: Vec<ResidueType> = ResidueType::ALL.to_vec();
        for _ in 0..5 {
            let s = random_state(&mut rng, &seq);
            let atoms = state_atoms(&s, templates()).unwrap();
            for i in 0..seq.len() {
                let f = frames_from_backbone(
                    &atoms.coords[i][SLOT_N],
                    &atoms.coords[i][SLOT_CA],
                    &atoms.coords[i][SLOT_C],
                )
                .unwrap();
                assert!((f.rot.matrix() - s.frames[i].rot.matrix()).abs().max() < 1e-6);
                assert!((f.trans - s.frames[i].trans).norm() < 1e-6);
            }
            let back = torsions_from_atoms(&seq, &atoms, templates()).unwrap();
            for i in 0..seq.len() {
                assert_eq!(back[i].mask, s.torsions[i].mask, "residue {i}");
                for k in 0..NUM_TORSIONS {
                    if back[i].mask[k] {
                        let d = back[i].angle(k) - s.torsions[i].angle(k);
                        let d = (d + PI).rem_euclid(2.0 * PI) - PI;
                        assert!(d.abs() < 1e-6, "residue {i} torsion {k}: {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn chi1_recovered() {
        let seq = [ResidueType::Ser];
        let mut t = TorsionAngles::from_radians([0.0; 7], templates().get(ResidueType::Ser).torsion_mask());
        t.set_angle(CHI1, PI / 3.0);
        let f = Rigid::new(exp_so3(&Vec3::new(0.3, -0.2, 0.9)), Vec3::new(1.0, 2.0, 3.0));
        let atoms = atoms_from_frames_and_torsions(&seq, &[f], &[t], templates()).unwrap();
        let back = torsions_from_atoms(&seq, &atoms, templates()).unwrap();
        assert!((back[0].angle(CHI1) - PI / 3.0).abs() < 1e-6);
    }

    #[test]
    fn trans_peptide_omega_is_pi() {
        let seq = [ResidueType::Ala, ResidueType::Gly];
        let s = build_state(
            &seq,
            &[0.0, -1.0],
            &[2.0, 0.5],
            &[PI, PI],
            &[[0.0; 4]; 2],
            templates(),
        )
        .unwrap();
        let atoms = state_atoms(&s, templates()).unwrap();
        let t = torsions_from_atoms(&seq, &atoms, templates()).unwrap();
        assert!(t[1].mask[OMEGA]);
        let w = t[1].angle(OMEGA).abs();
        assert!((w - PI).abs() < 1e-4);
        assert!(!t[0].mask[OMEGA]);
    }

    #[test]
    fn missing_side_chain_clears_chi_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let seq = [ResidueType::Ala, ResidueType::Lys, ResidueType::Val];
        let s = random_state(&mut rng, &seq);
        let mut atoms = state_atoms(&s, templates()).unwrap();
        for k in 4..ATOMS_PER_RESIDUE {
            atoms.exists[1][k] = false;
        }
        let t = torsions_from_atoms(&seq, &atoms, templates()).unwrap();
        assert!(t[1].mask[CHI1..].iter().all(|m| !m));
        assert!(t[1].mask[OMEGA] && t[1].mask[PHI] && t[1].mask[PSI]);
        assert!(t[2].mask[CHI1]);
    }

    #[test]
    fn alt_torsions_identity_on_alanine_and_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let seq: Vec<ResidueType> = ResidueType::ALL.to_vec();
        let s = random_state(&mut rng, &seq);
        let alt = alt_torsions(&seq, &s.torsions, templates());
        assert_eq!(alt[0], s.torsions[0]);
        let twice = alt_torsions(&seq, &alt, templates());
        assert_eq!(twice, s.torsions);
    }

    #[test]
    fn alt_torsions_equivalent_up_to_renaming() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for r in [ResidueType::Asp, ResidueType::Glu, ResidueType::Phe, ResidueType::Tyr] {
            let s = random_state(&mut rng, &[r]);
            let alt = alt_torsions(&s.sequence, &s.torsions, templates());
            let a = state_atoms(&s, templates()).unwrap();
            let b = atoms_from_frames_and_torsions(&s.sequence, &s.frames, &alt, templates()).unwrap();
            let mut renamed = b.coords[0];
            for &(x, y) in &templates().get(r).renaming_swaps {
                renamed.swap(x, y);
            }
            for k in 0..templates().get(r).num_atoms() {
                assert!((renamed[k] - a.coords[0][k]).norm() < 1e-4, "{r} slot {k}");
            }
        }
        // Asp χ2 = 0.3 → 0.3 + π
        let mut t = TorsionAngles::from_radians([0.0; 7], templates().get(ResidueType::Asp).torsion_mask());
        t.set_angle(CHI1 + 1, 0.3);
        let alt = alt_torsions(&[ResidueType::Asp], &[t], templates());
        let d = alt[0].angle(CHI1 + 1) - (0.3 - PI);
        assert!(d.abs() < 1e-12);
    }
}
