//! Isotropic Gaussian on SO(3): the heat kernel of Brownian motion on the
//! rotation group, parameterized by the accumulated variance `σ²`.
//!
//! The density over the rotation angle ω is taken with respect to the Haar
//! angle measure `(1 − cos ω)/π`:
//!
//! `f(ω; σ²) = Σ_l (2l+1) exp(−l(l+1)σ²/2) χ_l(ω)`, with the character
//! `χ_l(ω) = sin((l+½)ω)/sin(ω/2) = 1 + 2 Σ_{m=1..l} cos(mω)`.
//!
//! The cosine-sum form is evaluated incrementally, which removes the 0/0 at
//! ω = 0 and yields the first two ω-derivatives at no extra cost.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::rigid::{exp_so3, log_so3, Rotation, TangentVector, Vec3};
use crate::error::{Error, Result};

/// Geometric variance schedule for the rotation process.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RotationSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub series_terms: usize,
    pub cdf_grid_size: usize,
}

impl Default for RotationSchedule {
    fn default() -> Self {
        RotationSchedule {
            sigma_min: 0.1,
            sigma_max: 1.5,
            series_terms: 1000,
            cdf_grid_size: 2048,
        }
    }
}

impl RotationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < sigma_min < sigma_max, got {} / {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.series_terms < 500 {
            return Err(Error::InvalidArgument(
                "series_terms must be at least 500".into(),
            ));
        }
        if self.cdf_grid_size < 2 {
            return Err(Error::InvalidArgument("cdf grid too small".into()));
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        sigma_of_t(t, self)
    }

    pub fn sigma2(&self, t: f64) -> Result<f64> {
        Ok(sigma_of_t(t, self)?.powi(2))
    }
}

/// `σ(t) = σ_min^{1−t} σ_max^t`.
pub fn sigma_of_t(t: f64, sched: &RotationSchedule) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(sched.sigma_min);
    }
    if t == 1.0 {
        return Ok(sched.sigma_max);
    }
    Ok(sched.sigma_min.powf(1.0 - t) * sched.sigma_max.powf(t))
}

/// Series truncated once the Gaussian factor underflows relative to double
/// precision, or at `terms`, whichever comes first.
#[derive(Clone, Debug)]
pub struct Igso3Series {
    sigma2: f64,
    weights: Vec<f64>,
}

impl Igso3Series {
    pub fn new(sigma2: f64, terms: usize) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        let mut weights = Vec::with_capacity(terms + 1);
        for l in 0..=terms {
            let lf = l as f64;
            let e = (-lf * (lf + 1.0) * sigma2 / 2.0).exp();
            if l > 0 && e < 1e-30 {
                break;
            }
            weights.push((2.0 * lf + 1.0) * e);
        }
        Ok(Igso3Series { sigma2, weights })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `(f, f', f'')` at ω.
    pub fn eval(&self, omega: f64) -> (f64, f64, f64) {
        let (c1, s1) = (omega.cos(), omega.sin());
        let (mut cm, mut sm) = (1.0, 0.0);
        let (mut chi, mut dchi, mut d2chi) = (1.0, 0.0, 0.0);
        let (mut f, mut f1, mut f2) = (self.weights[0], 0.0, 0.0);
        for (l, w) in self.weights.iter().enumerate().skip(1) {
            let m = l as f64;
            let c = cm * c1 - sm * s1;
            let s = sm * c1 + cm * s1;
            cm = c;
            sm = s;
            chi += 2.0 * c;
            dchi -= 2.0 * m * s;
            d2chi -= 2.0 * m * m * c;
            f += w * chi;
            f1 += w * dchi;
            f2 += w * d2chi;
        }
        (f, f1, f2)
    }

    pub fn density(&self, omega: f64) -> f64 {
        self.eval(omega).0
    }

    /// `g = d/dω log f` and its derivative `g'`.
    ///
    /// For small variance the series cancels catastrophically in the tails,
    /// so the equivalent sum over images of the S³ heat kernel is used:
    /// `f ∝ Σ_k (−1)^k a_k exp(−a_k²/2σ²) / sin(ω/2)` with `a_k = ω + 2πk`,
    /// odd `k` coming from the antipodal quaternion.
    pub fn log_density_derivs(&self, omega: f64) -> (f64, f64) {
        if self.sigma2 < IMAGE_SUM_SIGMA2 && omega > 1e-3 {
            return image_sum_log_derivs(omega, self.sigma2);
        }
        let (f, f1, f2) = self.eval(omega);
        let g = f1 / f;
        (g, f2 / f - g * g)
    }

    /// Density of the angle itself on [0, π]: `f(ω)(1 − cos ω)/π`.
    pub fn angle_density(&self, omega: f64) -> f64 {
        self.density(omega) * (1.0 - omega.cos()) / PI
    }
}

const IMAGE_SUM_SIGMA2: f64 = 1.0;

fn image_sum_log_derivs(omega: f64, sigma2: f64) -> (f64, f64) {
    let (mut h, mut h1, mut h2) = (0.0, 0.0, 0.0);
    // Exponents are shifted by the k = 0 term so nothing underflows.
    let e0 = omega * omega / (2.0 * sigma2);
    for k in -3i32..=3 {
        let a = omega + 2.0 * PI * k as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let e = sign * (e0 - a * a / (2.0 * sigma2)).exp();
        h += a * e;
        h1 += e * (1.0 - a * a / sigma2);
        h2 += e * (a * a * a / (sigma2 * sigma2) - 3.0 * a / sigma2);
    }
    let half = omega / 2.0;
    let r = h1 / h;
    let g = r - 0.5 * half.cos() / half.sin();
    let dg = h2 / h - r * r + 0.25 / half.sin().powi(2);
    (g, dg)
}

/// IGSO(3) density over the rotation angle, relative to the Haar angle measure.
pub fn igso3_density(omega: f64, sigma2: f64, terms: usize) -> Result<f64> {
    if !(0.0..=PI).contains(&omega) {
        return Err(Error::InvalidArgument(format!(
            "omega = {omega} outside [0, π]"
        )));
    }
    Ok(Igso3Series::new(sigma2, terms)?.density(omega))
}

/// Below this variance the truncated series is not converged; sampling falls
/// back to a tangent-space Gaussian, which is exact to leading order there.
const SMALL_SIGMA2: f64 = 1e-4;

/// Inverse-CDF sampler for the IGSO(3) angle on a fixed grid over [0, π].
#[derive(Clone, Debug)]
pub struct Igso3 {
    series: Igso3Series,
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl Igso3 {
    pub fn new(sigma2: f64, sched: &RotationSchedule) -> Result<Self> {
        Self::with_sizes(sigma2, sched.series_terms, sched.cdf_grid_size)
    }

    pub fn with_sizes(sigma2: f64, terms: usize, grid_size: usize) -> Result<Self> {
        let series = Igso3Series::new(sigma2, terms)?;
        let n = grid_size.max(2);
        let grid: Vec<f64> = (0..n).map(|k| PI * k as f64 / (n - 1) as f64).collect();
        let pdf: Vec<f64> = grid
            .iter()
            .map(|&w| series.angle_density(w).max(0.0))
            .collect();
        let mut cdf = vec![0.0; n];
        for k in 1..n {
            cdf[k] = cdf[k - 1] + 0.5 * (pdf[k] + pdf[k - 1]) * (grid[k] - grid[k - 1]);
        }
        let total = cdf[n - 1];
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Ok(Igso3 { series, grid, cdf })
    }

    pub fn series(&self) -> &Igso3Series {
        &self.series
    }

    pub fn sigma2(&self) -> f64 {
        self.series.sigma2
    }

    /// Grid CDF of the angle, linearly interpolated.
    pub fn angle_cdf(&self, omega: f64) -> f64 {
        let n = self.grid.len();
        let pos = (omega / PI * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let k = (pos.floor() as usize).min(n - 2);
        let frac = pos - k as f64;
        self.cdf[k] * (1.0 - frac) + self.cdf[k + 1] * frac
    }

    /// Angle from a uniform variate.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.grid[k - 1] + frac * (self.grid[k] - self.grid[k - 1])
    }

    pub fn sample_angle(&self, rng: &mut impl Rng) -> f64 {
        self.inverse_cdf(rng.random::<f64>())
    }

    /// Axis-angle vector with IGSO(3)-distributed angle and uniform axis.
    pub fn sample_tangent(&self, rng: &mut impl Rng) -> TangentVector {
        if self.series.sigma2 < SMALL_SIGMA2 {
            let s = self.series.sigma2.sqrt();
            return Vec3::new(
                s * { let z: f64 = StandardNormal.sample(rng); z },
                s * { let z: f64 = StandardNormal.sample(rng); z },
                s * { let z: f64 = StandardNormal.sample(rng); z },
            );
        }
        let omega = self.sample_angle(rng);
        random_unit_vector(rng) * omega
    }

    pub fn sample(&self, r0: &Rotation, rng: &mut impl Rng) -> Rotation {
        r0.compose(&exp_so3(&self.sample_tangent(rng)))
    }

    /// Conditional score at `r_t` for a kernel centred at `r_0`.
    pub fn score(&self, r_t: &Rotation, r_0: &Rotation) -> TangentVector {
        rot_score_with(&self.series, r_t, r_0)
    }
}

pub fn random_unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Draws `r0 · exp(ω u)` with the default grid and series sizes.
pub fn sample_igso3(r0: &Rotation, sigma2: f64, rng: &mut impl Rng) -> Result<Rotation> {
    Ok(Igso3::new(sigma2, &RotationSchedule::default())?.sample(r0, rng))
}

/// Riemannian gradient of `log p(r_t | r_0)` in body coordinates at `r_t`.
pub fn rot_score(r_t: &Rotation, r_0: &Rotation, sigma2: f64) -> Result<TangentVector> {
    let series = Igso3Series::new(sigma2, RotationSchedule::default().series_terms)?;
    Ok(rot_score_with(&series, r_t, r_0))
}

pub fn rot_score_with(series: &Igso3Series, r_t: &Rotation, r_0: &Rotation) -> TangentVector {
    let v = log_so3(&r_0.inverse().compose(r_t));
    let omega = v.norm();
    if omega < 1e-12 {
        return Vec3::zeros();
    }
    let (g, _) = series.log_density_derivs(omega);
    v * (g / omega)
}

/// OU conditional score `−(x_t − e^{−t/2} x_0)/(1 − e^{−t})`.
pub fn trans_score(x_t: &Vec3, x_0: &Vec3, t: f64) -> Result<TangentVector> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "translation score undefined at t = {t}"
        )));
    }
    let mean = x_0 * (-t / 2.0).exp();
    Ok(-(x_t - mean) / (1.0 - (-t).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rigid::quat_to_rot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson quadrature, independent of the sampler's trapezoid grid.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 1 { n + 1 } else { n };
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            let x = a + k as f64 * h;
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        quat_to_rot(q[0], q[1], q[2], q[3]).unwrap()
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = RotationSchedule::default();
        assert_eq!(sigma_of_t(0.0, &s).unwrap(), 0.1);
        assert_eq!(sigma_of_t(1.0, &s).unwrap(), 1.5);
        assert!((sigma_of_t(0.5, &s).unwrap() - (0.15f64).sqrt()).abs() < 1e-12);
        assert!((sigma_of_t(0.5, &s).unwrap() - 0.3873).abs() < 1e-4);
        assert!(sigma_of_t(1.2, &s).is_err());
        let mut prev = 0.0;
        for k in 0..=100 {
            let v = sigma_of_t(k as f64 / 100.0, &s).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn density_normalized() {
        for &s2 in &[0.01, 0.04, 0.25, 1.0, 2.25, 4.0] {
            let series = Igso3Series::new(s2, 1000).unwrap();
            let z = simpson(|w| series.angle_density(w), 0.0, PI, 20000);
            assert!((z - 1.0).abs() < 1e-4, "sigma2 {s2}: {z}");
        }
    }

    #[test]
    fn density_is_haar_at_large_variance() {
        for k in 0..=100 {
            let w = PI * k as f64 / 100.0;
            let f = igso3_density(w, 25.0, 1000).unwrap();
            assert!((f - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn density_concentrates_at_small_variance() {
        let series = Igso3Series::new(1e-4, 1000).unwrap();
        let mass = simpson(|w| series.angle_density(w), 0.0, 0.1, 20000);
        assert!(mass > 0.99, "{mass}");
    }

    #[test]
    fn density_rejects_bad_arguments() {
        assert!(igso3_density(0.5, 0.0, 1000).is_err());
        assert!(igso3_density(4.0, 1.0, 1000).is_err());
    }

    #[test]
    fn tiny_variance_sample_stays_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r0 = random_rotation(&mut rng);
        for _ in 0..100 {
            let r = sample_igso3(&r0, 1e-8, &mut rng).unwrap();
            assert!(r0.inverse().compose(&r).angle() < 1e-3);
        }
    }

    #[test]
    fn zero_score_at_centre() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_rotation(&mut rng);
        assert_eq!(rot_score(&r, &r, 0.49).unwrap(), Vec3::zeros());
        assert!(rot_score(&r, &r, -1.0).is_err());
    }

    #[test]
    fn rot_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let series = Igso3Series::new(0.49, 1000).unwrap();
        let logp = |r: &Rotation, r0: &Rotation| {
            let w = log_so3(&r0.inverse().compose(r)).norm();
            series.density(w).ln()
        };
        for _ in 0..50 {
            let r0 = random_rotation(&mut rng);
            let rt = random_rotation(&mut rng);
            let w = log_so3(&r0.inverse().compose(&rt)).norm();
            if w > PI - 0.05 || w < 0.05 {
                continue;
            }
            let score = rot_score(&rt, &r0, 0.49).unwrap();
            let h = 1e-5;
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = h;
                let fd = (logp(&rt.compose(&exp_so3(&e)), &r0)
                    - logp(&rt.compose(&exp_so3(&-e)), &r0))
                    / (2.0 * h);
                let scale = score.norm().max(1e-8);
                assert!((fd - score[k]).abs() / scale < 1e-3, "{fd} vs {}", score[k]);
            }
        }
    }

    #[test]
    fn rot_score_norm_depends_on_angle_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r0a = random_rotation(&mut rng);
        let r0b = random_rotation(&mut rng);
        let angle = 1.3;
        let va = random_unit_vector(&mut rng) * angle;
        let vb = random_unit_vector(&mut rng) * angle;
        let sa = rot_score(&r0a.compose(&exp_so3(&va)), &r0a, 0.49).unwrap();
        let sb = rot_score(&r0b.compose(&exp_so3(&vb)), &r0b, 0.49).unwrap();
        assert!((sa.norm() - sb.norm()).abs() < 1e-8);
    }

    #[test]
    fn image_sum_agrees_with_series_where_both_converge() {
        for &sigma2 in &[0.05, 0.3, 0.9] {
            let series = Igso3Series::new(sigma2, 2000).unwrap();
            for k in 1..30 {
                let w = 0.1 * k as f64;
                if series.density(w) < 1e-6 * series.density(0.0) {
                    continue;
                }
                let (f, f1, f2) = series.eval(w);
                let g = f1 / f;
                let dg = f2 / f - g * g;
                let (gi, dgi) = image_sum_log_derivs(w, sigma2);
                assert!((g - gi).abs() < 1e-6 * (1.0 + g.abs()), "{sigma2} {w}: {g} vs {gi}");
                assert!((dg - dgi).abs() < 1e-5 * (1.0 + dg.abs()), "{sigma2} {w}: {dg} vs {dgi}");
            }
        }
    }

    #[test]
    fn small_variance_score_stays_finite_in_the_tail() {
        let series = Igso3Series::new(0.01, 1000).unwrap();
        for k in 1..=31 {
            let w = 0.1 * k as f64;
            let (g, dg) = series.log_density_derivs(w.min(PI - 1e-6));
            assert!(g.is_finite() && dg.is_finite());
            assert!(g < 0.0);
            // Gaussian-like drift −ω/σ² dominates away from the antipode.
            if w < 2.5 {
                assert!((g + w / 0.01).abs() < 0.1 * w / 0.01);
            }
        }
    }

    #[test]
    fn trans_score_closed_form_and_zero_at_mean() {
        let x0 = Vec3::new(0.3, -1.0, 2.0);
        let t = 0.4;
        let mean = x0 * (-t / 2.0f64).exp();
        assert!(trans_score(&mean, &x0, t).unwrap().norm() < 1e-15);
        let s = trans_score(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), 1.0).unwrap();
        assert!((s.x + 1.0 / (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((s.x + 1.5820).abs() < 1e-4);
        assert!(trans_score(&x0, &x0, 0.0).is_err());
    }

    #[test]
    fn trans_score_matches_gaussian_finite_differences() {
        let x0 = Vec3::new(0.7, -0.2, 1.1);
        let xt = Vec3::new(-0.4, 0.9, 0.5);
        for &t in &[0.1, 0.5, 1.0] {
            let var = 1.0 - (-t as f64).exp();
            let mean = x0 * (-t / 2.0f64).exp();
            let logp = |x: &Vec3| -(x - mean).norm_squared() / (2.0 * var);
            let s = trans_score(&xt, &x0, t).unwrap();
            for k in 0..3 {
                let h = 1e-5;
                let mut e = Vec3::zeros();
                e[k] = h;
                let fd = (logp(&(xt + e)) - logp(&(xt - e))) / (2.0 * h);
                assert!((fd - s[k]).abs() / s[k].abs() < 1e-6);
            }
        }
    }
}
