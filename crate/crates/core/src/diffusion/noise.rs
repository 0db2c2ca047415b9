use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::geom::{rot_score_with, trans_score, FrameGrid, Rigid, TangentVector, Vec3, TRANSLATION_SCALE};

/// A noised frame grid with its conditional scores. Frames are in model
/// units (translations scaled); scores are stored in grid order.
#[derive(Clone, Debug)]
pub struct NoisedSample {
    pub t: f64,
    pub noisy: FrameGrid,
    pub clean: FrameGrid,
    pub rot_scores: Vec<TangentVector>,
    pub trans_scores: Vec<TangentVector>,
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "diffusion time must lie in (0, 1], got {t}"
        )));
    }
    Ok(())
}

pub(crate) fn standard_normal3(rng: &mut impl Rng) -> Vec3 {
    let mut z = || -> f64 { StandardNormal.sample(rng) };
    Vec3::new(z(), z(), z())
}

/// Scales translations of a grid given in Å into model units.
pub fn to_model_units(grid: &FrameGrid) -> FrameGrid {
    let frames = grid
        .frames()
        .iter()
        .map(|f| f.scale_translation(TRANSLATION_SCALE))
        .collect();
    FrameGrid::new(grid.s_count(), grid.n_count(), frames).expect("same shape")
}

pub fn to_angstrom(grid: &FrameGrid) -> FrameGrid {
    let frames = grid
        .frames()
        .iter()
        .map(|f| f.scale_translation(1.0 / TRANSLATION_SCALE))
        .collect();
    FrameGrid::new(grid.s_count(), grid.n_count(), frames).expect("same shape")
}

/// Noises clean frames given in Å. Rotations follow IGSO(3) with variance
/// `σ²(t)`; scaled translations follow the OU transition kernel.
pub fn forward_noise(
    clean: &FrameGrid,
    t: f64,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<NoisedSample> {
    check_t(t)?;
    let clean = to_model_units(clean);
    let kernel = sched.kernel(t)?;
    let decay = (-t / 2.0).exp();
    let std = (1.0 - (-t).exp()).sqrt();
    let count = clean.frames().len();
    let mut noisy = Vec::with_capacity(count);
    let mut rot_scores = Vec::with_capacity(count);
    let mut trans_scores = Vec::with_capacity(count);
    for f in clean.frames() {
        let rot = kernel.sample(&f.rot, rng);
        let trans = f.trans * decay + standard_normal3(rng) * std;
        rot_scores.push(rot_score_with(kernel.series(), &rot, &f.rot));
        trans_scores.push(trans_score(&trans, &f.trans, t)?);
        noisy.push(Rigid::new(rot, trans));
    }
    Ok(NoisedSample {
        t,
        noisy: FrameGrid::new(clean.s_count(), clean.n_count(), noisy)?,
        clean,
        rot_scores,
        trans_scores,
    })
}

/// Conditional scores of `noisy` as if `pred_clean` were the clean frames.
/// Both grids are in model units.
pub fn score_from_prediction(
    pred_clean: &FrameGrid,
    noisy: &FrameGrid,
    t: f64,
    sched: &DiffusionSchedule,
) -> Result<(Vec<TangentVector>, Vec<TangentVector>)> {
    check_t(t)?;
    if pred_clean.s_count() != noisy.s_count() || pred_clean.n_count() != noisy.n_count() {
        return Err(Error::Shape("prediction and noisy grids differ in shape".into()));
    }
    let series = sched.series(t)?;
    let mut rot = Vec::with_capacity(noisy.frames().len());
    let mut trans = Vec::with_capacity(noisy.frames().len());
    for (p, x) in pred_clean.frames().iter().zip(noisy.frames()) {
        rot.push(rot_score_with(&series, &x.rot, &p.rot));
        trans.push(trans_score(&x.trans, &p.trans, t)?);
    }
    Ok((rot, trans))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geom::{exp_so3, random_unit_vector, Igso3Series, RotationSchedule};

    fn schedule() -> DiffusionSchedule {
        DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.01, 4, 2000).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, s: usize, n: usize) -> FrameGrid {
        let frames = (0..s * n)
            .map(|_| {
                let w: f64 = rng.random::<f64>() * PI;
                Rigid::new(
                    exp_so3(&(random_unit_vector(rng) * w)),
                    standard_normal3(rng) * 10.0,
                )
            })
            .collect();
        FrameGrid::new(s, n, frames).unwrap()
    }

    #[test]
    fn rejects_non_positive_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = FrameGrid::identity(1, 2);
        assert!(forward_noise(&g, 0.0, &schedule(), &mut rng).is_err());
        assert!(forward_noise(&g, -0.5, &schedule(), &mut rng).is_err());
        assert!(score_from_prediction(&g, &g, 0.0, &schedule()).is_err());
    }

    #[test]
    fn tiny_time_leaves_frames_nearly_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sched = schedule();
        let clean = random_grid(&mut rng, 10, 10);
        let ns = forward_noise(&clean, 1e-6, &sched, &mut rng).unwrap();
        let scaled = to_model_units(&clean);
        for (a, b) in ns.noisy.frames().iter().zip(scaled.frames()) {
            let rel = b.rot.inverse().compose(&a.rot);
            assert!(rel.angle() < 0.01 + sched.rot.sigma_min * 5.0);
            assert!((a.trans - b.trans).norm() < 0.01);
        }
    }

    #[test]
    fn translation_moments_at_unit_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sched = schedule();
        let x0 = Vec3::new(12.0, -7.0, 3.0);
        let clean = FrameGrid::new(1, 1, vec![Rigid::from_translation(x0)]).unwrap();
        let m = 20_000;
        let mut xs = Vec::with_capacity(m);
        for _ in 0..m {
            xs.push(forward_noise(&clean, 1.0, &sched, &mut rng).unwrap().noisy.frames()[0].trans);
        }
        let var_true = 1.0 - (-1.0f64).exp();
        let mean_true = x0 * TRANSLATION_SCALE * (-0.5f64).exp();
        let stderr = (var_true / m as f64).sqrt();
        for c in 0..3 {
            let mean = xs.iter().map(|x| x[c]).sum::<f64>() / m as f64;
            let var = xs.iter().map(|x| (x[c] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            assert!((mean - mean_true[c]).abs() < 3.0 * stderr, "{mean} vs {}", mean_true[c]);
            assert!((var / var_true - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn rotation_marginal_at_unit_time_matches_angle_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sched = schedule();
        let clean = random_grid(&mut rng, 1, 1);
        let r0 = clean.frames()[0].rot;
        let m = 5000;
        let mut angles: Vec<f64> = (0..m)
            .map(|_| {
                let ns = forward_noise(&clean, 1.0, &sched, &mut rng).unwrap();
                r0.inverse().compose(&ns.noisy.frames()[0].rot).angle()
            })
            .collect();
        angles.sort_by(f64::total_cmp);
        // Oracle CDF by trapezoid quadrature of the σ² = 2.25 angle density.
        let series = Igso3Series::new(2.25, 1000).unwrap();
        let cdf = |w: f64| {
            let n = 2000;
            let h = w / n as f64;
            (0..n)
                .map(|k| {
                    let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
                    0.5 * h * (series.angle_density(a) + series.angle_density(b))
                })
                .sum::<f64>()
        };
        let mut ks: f64 = 0.0;
        for (k, w) in angles.iter().enumerate().step_by(25) {
            let f = cdf(*w);
            ks = ks.max((f - k as f64 / m as f64).abs());
            ks = ks.max((f - (k + 1) as f64 / m as f64).abs());
        }
        assert!(ks < 0.03, "KS {ks}");
    }

    #[test]
    fn attached_scores_match_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sched = schedule();
        let clean = random_grid(&mut rng, 3, 5);
        for &t in &[0.05, 0.4, 1.0] {
            let ns = forward_noise(&clean, t, &sched, &mut rng).unwrap();
            let (r, x) = score_from_prediction(&ns.clean, &ns.noisy, t, &sched).unwrap();
            for k in 0..r.len() {
                assert!((r[k] - ns.rot_scores[k]).norm() < 1e-10);
                assert!((x[k] - ns.trans_scores[k]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn clean_prediction_scores_give_zero_dsm_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sched = schedule();
        let clean = random_grid(&mut rng, 2, 4);
        let ns = forward_noise(&clean, 0.37, &sched, &mut rng).unwrap();
        let (r, x) = score_from_prediction(&ns.clean, &ns.noisy, 0.37, &sched).unwrap();
        let (lr, lx) =
            crate::diffusion::dsm_loss((&r, &x), (&ns.rot_scores, &ns.trans_scores), 0.37, &sched)
                .unwrap();
        assert_eq!((lr, lx), (0.0, 0.0));
    }

    #[test]
    fn identity_prediction_gives_zero_rotation_score() {
        let g = FrameGrid::identity(2, 3);
        let (r, _) = score_from_prediction(&g, &g, 0.3, &schedule()).unwrap();
        assert!(r.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn unit_conversion_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_grid(&mut rng, 2, 2);
        let back = to_angstrom(&to_model_units(&g));
        for (a, b) in g.frames().iter().zip(back.frames()) {
            assert!((a.trans - b.trans).norm() < 1e-12);
        }
    }
}
