use nalgebra::{Matrix3, SVD};

use crate::error::{Error, Result};
use crate::geom::{Rigid, Rotation, Vec3};
use crate::protein::ProteinState;

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().sum::<Vec3>() / p.len() as f64
}

/// Least-squares rigid transform taking `p` onto `q`. Reflections are
/// excluded by flipping the smallest singular direction when needed.
pub fn kabsch(p: &[Vec3], q: &[Vec3]) -> Result<Rigid> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("{} points against {}", p.len(), q.len())));
    }
    if p.len() < 3 {
        return Err(Error::InvalidArgument("superposition needs at least 3 points".into()));
    }
    let (cp, cq) = (centroid(p), centroid(q));
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        let (a, b) = (a - cp, b - cq);
        h += a * b.transpose();
        spread += a * a.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > 1e-10 * sv[0].max(1e-300)) {
        return Err(Error::DegenerateGeometry("point set has rank below 2".into()));
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rot = Rotation::from_matrix_unchecked(r);
    Ok(Rigid::new(rot, cq - rot.apply(&cp)))
}

/// Root-mean-square deviation, optionally after superposing `p` onto `q`.
pub fn rmsd_points(p: &[Vec3], q: &[Vec3], align: bool) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Shape(format!("{} points against {}", p.len(), q.len())));
    }
    let moved: Vec<Vec3> = if align {
        let t = kabsch(p, q)?;
        p.iter().map(|x| t.apply(x)).collect()
    } else {
        p.to_vec()
    };
    let ss: f64 = moved.iter().zip(q).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((ss / p.len() as f64).sqrt())
}

/// Cα-RMSE in Å between two states of the same chain.
pub fn ca_rmse(pred: &ProteinState, gt: &ProteinState, align: bool) -> Result<f64> {
    if pred.sequence != gt.sequence {
        return Err(Error::SequenceMismatch(format!(
            "{} residues against {}",
            pred.len(),
            gt.len()
        )));
    }
    rmsd_points(&pred.ca_positions(), &gt.ca_positions(), align)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geom::{exp_so3, random_unit_vector, Rigid};
    use crate::protein::{parse_sequence, TorsionAngles};

    fn cloud(rng: &mut impl Rng, m: usize) -> Vec<Vec3> {
        (0..m)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect()
    }

    fn state_from(ca: &[Vec3]) -> ProteinState {
        let seq = parse_sequence(&"A".repeat(ca.len())).unwrap();
        ProteinState::new(
            seq,
            ca.iter().map(|&c| Rigid::from_translation(c)).collect(),
            vec![TorsionAngles::default(); ca.len()],
        )
        .unwrap()
    }

    #[test]
    fn identical_sets_give_identity() {
        let p = cloud(&mut ChaCha8Rng::seed_from_u64(1), 10);
        let t = kabsch(&p, &p).unwrap();
        assert!((t.rot.matrix() - Matrix3::identity()).abs().max() < 1e-10);
        assert!(t.trans.norm() < 1e-10);
    }

    #[test]
    fn recovers_quarter_turn_and_shift() {
        let p = cloud(&mut ChaCha8Rng::seed_from_u64(2), 12);
        let g = Rigid::new(exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2)), Vec3::new(1.0, 1.0, 1.0));
        let q: Vec<Vec3> = p.iter().map(|x| g.apply(x)).collect();
        let t = kabsch(&p, &q).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((t.apply(a) - b).norm() < 1e-8);
        }
    }

    #[test]
    fn mirror_images_are_not_reflected() {
        let p = cloud(&mut ChaCha8Rng::seed_from_u64(3), 15);
        let q: Vec<Vec3> = p.iter().map(|x| Vec3::new(-x.x, x.y, x.z)).collect();
        let t = kabsch(&p, &q).unwrap();
        assert!((t.rot.matrix().determinant() - 1.0).abs() < 1e-10);
        assert!(rmsd_points(&p, &q, true).unwrap() > 0.1);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let p: Vec<Vec3> = (0..5).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect();
        assert!(matches!(kabsch(&p, &p), Err(Error::DegenerateGeometry(_))));
        assert!(kabsch(&p[..2], &p[..2]).is_err());
    }

    #[test]
    fn displaced_residues_closed_form() {
        let ca: Vec<Vec3> = (0..10).map(|k| Vec3::new(3.8 * k as f64, 0.0, 0.0)).collect();
        let mut moved = ca.clone();
        moved[2].y += 1.0;
        moved[7].z += 3.0;
        let r = ca_rmse(&state_from(&moved), &state_from(&ca), false).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = state_from(&cloud(&mut ChaCha8Rng::seed_from_u64(4), 5));
        let b = state_from(&cloud(&mut ChaCha8Rng::seed_from_u64(4), 6));
        assert!(ca_rmse(&a, &b, true).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn rmse_invariances(seed: u64, angle in 0.0f64..3.1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, 9);
            let b = cloud(&mut rng, 9);
            let g = Rigid::new(exp_so3(&(random_unit_vector(&mut rng) * angle)), Vec3::new(4.0, -2.0, 7.0));
            let ga: Vec<Vec3> = a.iter().map(|x| g.apply(x)).collect();
            let (sa, sb, sga) = (state_from(&a), state_from(&b), state_from(&ga));
            prop_assert!(ca_rmse(&sa, &sa, true).unwrap() < 1e-9);
            prop_assert!(ca_rmse(&sga, &sa, true).unwrap() < 1e-8);
            let ab = ca_rmse(&sa, &sb, true).unwrap();
            prop_assert!((ab - ca_rmse(&sb, &sa, true).unwrap()).abs() < 1e-9);
            prop_assert!((ab - ca_rmse(&sga, &sb, true).unwrap()).abs() < 1e-9);
            prop_assert!(ab <= ca_rmse(&sa, &sb, false).unwrap() + 1e-12);
        }
    }
}
