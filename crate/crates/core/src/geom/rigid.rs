//! Rotations and rigid transforms.
//!
//! Tangent vectors on SO(3) are axis-angle vectors in the body frame
//! (left-invariant): a step `v` taken at `r` lands on `r * exp(v)`. Scores,
//! losses and the sampler all use this convention.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Axis-angle tangent vector (radians times unit axis for rotations).
pub type TangentVector = Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Projects an arbitrary matrix to the nearest rotation (polar decomposition).
    pub fn from_matrix_orthonormalized(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * vt)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.0 * p
    }

    /// Max deviation of `mᵀm` from identity and of `det m` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Matrix3::identity()).abs().max();
        e.max((self.0.determinant() - 1.0).abs())
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        log_so3(self).norm()
    }

    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn to_quat(&self) -> [f64; 4] {
        let m = &self.0;
        let tr = m.trace();
        let (w, x, y, z);
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        [sign * w / n, sign * x / n, sign * y / n, sign * z / n]
    }
}

/// Rotation matrix of the quaternion `(a, b, c, d)` (real part first),
/// normalized before conversion.
pub fn quat_to_rot(a: f64, b: f64, c: f64, d: f64) -> Result<Rotation> {
    let n2 = a * a + b * b + c * c + d * d;
    if !(n2 > 0.0) || !n2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "quaternion ({a}, {b}, {c}, {d}) cannot be normalized"
        )));
    }
    let n = n2.sqrt();
    let (a, b, c, d) = (a / n, b / n, c / n, d / n);
    Ok(Rotation(Matrix3::new(
        a * a + b * b - c * c - d * d,
        2.0 * (b * c - a * d),
        2.0 * (b * d + a * c),
        2.0 * (b * c + a * d),
        a * a - b * b + c * c - d * d,
        2.0 * (c * d - a * b),
        2.0 * (b * d - a * c),
        2.0 * (c * d + a * b),
        a * a - b * b - c * c + d * d,
    )))
}

pub fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn exp_so3(v: &TangentVector) -> Rotation {
    let theta2 = v.norm_squared();
    let k = hat(v);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Principal logarithm, `‖result‖ ∈ [0, π]`.
pub fn log_so3(r: &Rotation) -> TangentVector {
    let m = &r.0;
    let skew = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5 * skew.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-6 {
        return skew * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if PI - theta > 1e-3 {
        return skew * (theta / (2.0 * sin));
    }
    // Near π the antisymmetric part vanishes; the axis is the eigenvector of
    // the symmetric part with eigenvalue 1.
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut best = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] > eig.eigenvalues[best] {
            best = k;
        }
    }
    let mut axis: Vec3 = eig.eigenvectors.column(best).into_owned().normalize();
    let dot = axis.dot(&skew);
    if dot < 0.0 {
        axis = -axis;
    } else if dot == 0.0 {
        // exactly π: first nonzero component positive
        let first = axis.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
        if first < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Element of SE(3): `x ↦ rot·x + trans`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Rigid {
    pub rot: Rotation,
    pub trans: Vec3,
}

impl Rigid {
    pub fn new(rot: Rotation, trans: Vec3) -> Self {
        Rigid { rot, trans }
    }

    pub fn identity() -> Self {
        Rigid {
            rot: Rotation::identity(),
            trans: Vec3::zeros(),
        }
    }

    pub fn from_translation(trans: Vec3) -> Self {
        Rigid {
            rot: Rotation::identity(),
            trans,
        }
    }

    pub fn compose(&self, other: &Rigid) -> Rigid {
        compose(self, other)
    }

    pub fn inverse(&self) -> Rigid {
        invert(self)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        apply(self, p)
    }

    pub fn scale_translation(&self, factor: f64) -> Rigid {
        Rigid {
            rot: self.rot,
            trans: self.trans * factor,
        }
    }
}

pub fn compose(t1: &Rigid, t2: &Rigid) -> Rigid {
    Rigid {
        rot: t1.rot.compose(&t2.rot),
        trans: t1.rot.apply(&t2.trans) + t1.trans,
    }
}

pub fn invert(t: &Rigid) -> Rigid {
    let rinv = t.rot.inverse();
    Rigid {
        rot: rinv,
        trans: -(rinv.apply(&t.trans)),
    }
}

pub fn apply(t: &Rigid, p: &Vec3) -> Vec3 {
    t.rot.apply(p) + t.trans
}

/// Frames over `s_count` time steps and `n_count` residues, step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGrid {
    frames: Vec<Rigid>,
    s_count: usize,
    n_count: usize,
}

impl FrameGrid {
    pub fn new(s_count: usize, n_count: usize, frames: Vec<Rigid>) -> Result<Self> {
        if s_count == 0 || n_count == 0 {
            return Err(Error::InvalidArgument(
                "frame grid dimensions must be positive".into(),
            ));
        }
        if frames.len() != s_count * n_count {
            return Err(Error::Shape(format!(
                "expected {}x{} frames, got {}",
                s_count,
                n_count,
                frames.len()
            )));
        }
        Ok(FrameGrid {
            frames,
            s_count,
            n_count,
        })
    }

    pub fn identity(s_count: usize, n_count: usize) -> Self {
        FrameGrid {
            frames: vec![Rigid::identity(); s_count * n_count],
            s_count,
            n_count,
        }
    }

    pub fn from_rows(rows: Vec<Vec<Rigid>>) -> Result<Self> {
        let s = rows.len();
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged frame rows".into()));
        }
        FrameGrid::new(s, n, rows.into_iter().flatten().collect())
    }

    pub fn s_count(&self) -> usize {
        self.s_count
    }

    pub fn n_count(&self) -> usize {
        self.n_count
    }

    pub fn get(&self, s: usize, i: usize) -> &Rigid {
        &self.frames[s * self.n_count + i]
    }

    pub fn get_mut(&mut self, s: usize, i: usize) -> &mut Rigid {
        &mut self.frames[s * self.n_count + i]
    }

    pub fn row(&self, s: usize) -> &[Rigid] {
        &self.frames[s * self.n_count..(s + 1) * self.n_count]
    }

    pub fn frames(&self) -> &[Rigid] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Rigid] {
        &mut self.frames
    }

    pub fn map(&self, f: impl Fn(&Rigid) -> Rigid) -> FrameGrid {
        FrameGrid {
            frames: self.frames.iter().map(f).collect(),
            s_count: self.s_count,
            n_count: self.n_count,
        }
    }

    pub fn max_orthonormality_error(&self) -> f64 {
        self.frames
            .iter()
            .map(|f| f.rot.orthonormality_error())
            .fold(0.0, f64::max)
    }
}

/// Serializable frame: unit quaternion (w, x, y, z) and translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuatFrame(pub [f64; 4], pub [f64; 3]);

impl From<&Rigid> for QuatFrame {
    fn from(r: &Rigid) -> Self {
        QuatFrame(r.rot.to_quat(), [r.trans.x, r.trans.y, r.trans.z])
    }
}

impl QuatFrame {
    pub fn to_rigid(&self) -> Result<Rigid> {
        let [a, b, c, d] = self.0;
        Ok(Rigid::new(
            quat_to_rot(a, b, c, d)?,
            Vec3::new(self.1[0], self.1[1], self.1[2]),
        ))
    }
}
