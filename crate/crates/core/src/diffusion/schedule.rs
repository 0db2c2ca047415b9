use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{Igso3, Igso3Series, RotationSchedule};

/// Seed for the Monte Carlo estimate of the rotation loss weights, so that
/// every build of the same schedule yields the same table.
const LAMBDA_SEED: u64 = 0x4466_4c61_6d62_6461;

/// Noise schedules for both processes plus the cached rotation loss weights.
#[derive(Clone, Debug)]
pub struct DiffusionSchedule {
    pub rot: RotationSchedule,
    pub t_min: f64,
    grid_t: Vec<f64>,
    /// `E‖∇log p_{t|0}‖²` at each grid time.
    expected_sq_score: Vec<f64>,
}

impl DiffusionSchedule {
    pub const DEFAULT_T_MIN: f64 = 0.01;
    pub const GRID_POINTS: usize = 64;
    pub const MC_SAMPLES: usize = 100_000;

    pub fn new(rot: RotationSchedule) -> Result<Self> {
        Self::with_estimate(rot, Self::DEFAULT_T_MIN, Self::GRID_POINTS, Self::MC_SAMPLES)
    }

    pub fn with_estimate(
        rot: RotationSchedule,
        t_min: f64,
        grid_points: usize,
        samples: usize,
    ) -> Result<Self> {
        rot.validate()?;
        if !(t_min > 0.0 && t_min < 1.0) {
            return Err(Error::InvalidArgument(format!("t_min = {t_min} outside (0, 1)")));
        }
        if grid_points < 2 || samples == 0 {
            return Err(Error::InvalidArgument("empty weight estimate".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(LAMBDA_SEED);
        let grid_t: Vec<f64> = (0..grid_points)
            .map(|k| t_min + (1.0 - t_min) * k as f64 / (grid_points - 1) as f64)
            .collect();
        let mut expected_sq_score = Vec::with_capacity(grid_points);
        for &t in &grid_t {
            let kernel = Igso3::new(rot.sigma2(t)?, &rot)?;
            // The score norm is |g(ω)|, so tabulate g² once per time.
            let table = SquaredScoreTable::new(kernel.series(), 4096);
            let mut acc = 0.0;
            for _ in 0..samples {
                acc += table.at(kernel.sample_angle(&mut rng));
            }
            expected_sq_score.push(acc / samples as f64);
        }
        Ok(DiffusionSchedule {
            rot,
            t_min,
            grid_t,
            expected_sq_score,
        })
    }

    fn check_t(t: f64) -> Result<()> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidArgument(format!("t = {t} outside (0, 1]")));
        }
        Ok(())
    }

    pub fn sigma2(&self, t: f64) -> Result<f64> {
        self.rot.sigma2(t)
    }

    pub fn series(&self, t: f64) -> Result<Igso3Series> {
        Igso3Series::new(self.sigma2(t)?, self.rot.series_terms)
    }

    pub fn kernel(&self, t: f64) -> Result<Igso3> {
        Igso3::new(self.sigma2(t)?, &self.rot)
    }

    /// Monte Carlo `E‖∇log p_{t|0}‖²`, linearly interpolated on the grid and
    /// clamped at its ends.
    pub fn expected_sq_rot_score(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        let g = &self.grid_t;
        let n = g.len();
        if t <= g[0] {
            return Ok(self.expected_sq_score[0]);
        }
        if t >= g[n - 1] {
            return Ok(self.expected_sq_score[n - 1]);
        }
        let k = g.partition_point(|&x| x <= t) - 1;
        let frac = (t - g[k]) / (g[k + 1] - g[k]);
        Ok(self.expected_sq_score[k] * (1.0 - frac) + self.expected_sq_score[k + 1] * frac)
    }

    pub fn lambda_rot(&self, t: f64) -> Result<f64> {
        Ok(1.0 / self.expected_sq_rot_score(t)?)
    }

    /// `(1 − e^{−t}) / e^{−t/2}`.
    pub fn lambda_trans(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok((1.0 - (-t).exp()) / (-t / 2.0).exp())
    }
}

struct SquaredScoreTable {
    values: Vec<f64>,
}

impl SquaredScoreTable {
    fn new(series: &Igso3Series, n: usize) -> Self {
        let values = (0..n)
            .map(|k| {
                let w = PI * k as f64 / (n - 1) as f64;
                series.log_density_derivs(w).0.powi(2)
            })
            .collect();
        SquaredScoreTable { values }
    }

    fn at(&self, omega: f64) -> f64 {
        let n = self.values.len();
        let pos = (omega / PI * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let k = (pos.floor() as usize).min(n - 2);
        let frac = pos - k as f64;
        self.values[k] * (1.0 - frac) + self.values[k + 1] * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadrature_expected_sq(sigma2: f64) -> f64 {
        // Independent oracle: Simpson over the angle law with the raw series.
        let series = Igso3Series::new(sigma2, 2000).unwrap();
        let n = 4000;
        let h = PI / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=n {
            let w = k as f64 * h;
            let wt = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let p = series.angle_density(w).max(0.0);
            let g = if w > 0.0 { series.log_density_derivs(w).0 } else { 0.0 };
            num += wt * p * g * g;
            den += wt * p;
        }
        num / den
    }

    #[test]
    fn monte_carlo_weights_match_quadrature() {
        let sched = DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.01, 5, 20_000)
            .unwrap();
        for &t in &[0.01, 0.505, 1.0] {
            let mc = sched.expected_sq_rot_score(t).unwrap();
            let q = quadrature_expected_sq(sched.sigma2(t).unwrap());
            assert!((mc - q).abs() < 0.03 * q, "t={t}: {mc} vs {q}");
        }
    }

    #[test]
    fn small_variance_weight_tracks_gaussian_limit() {
        // For small σ the tangent law is N(0, σ² I), so E‖score‖² ≈ 3/σ².
        let sched = DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.01, 2, 50_000)
            .unwrap();
        let s2 = sched.sigma2(0.01).unwrap();
        let e = sched.expected_sq_rot_score(0.01).unwrap();
        assert!((e * s2 / 3.0 - 1.0).abs() < 0.05, "{e} vs {}", 3.0 / s2);
    }

    #[test]
    fn translation_weight_closed_form() {
        let sched = DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.01, 2, 10)
            .unwrap();
        let l = sched.lambda_trans(1.0).unwrap();
        assert!((l - (1.0 - (-1.0f64).exp()) / (-0.5f64).exp()).abs() < 1e-15);
        assert!((l - 1.0422).abs() < 1e-4);
        assert!(sched.lambda_trans(0.0).is_err());
    }

    #[test]
    fn interpolation_is_piecewise_linear() {
        let sched = DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.1, 3, 2000)
            .unwrap();
        let (a, b) = (
            sched.expected_sq_rot_score(0.1).unwrap(),
            sched.expected_sq_rot_score(0.55).unwrap(),
        );
        let mid = sched.expected_sq_rot_score(0.325).unwrap();
        assert!((mid - 0.5 * (a + b)).abs() < 1e-12);
        assert_eq!(sched.expected_sq_rot_score(0.05).unwrap(), a);
    }

    #[test]
    fn build_is_deterministic() {
        let a = DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.01, 4, 1000).unwrap();
        let b = DiffusionSchedule::with_estimate(RotationSchedule::default(), 0.01, 4, 1000).unwrap();
        assert_eq!(a.expected_sq_score, b.expected_sq_score);
    }
}
