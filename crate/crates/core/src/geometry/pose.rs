//! Rigid poses parameterised by a unit quaternion and a translation.

use nalgebra::Matrix3;

use super::Vec3;
use crate::error::{Error, Result};

/// Rotation matrix of `q = (w, x, y, z)`. The quaternion is normalised first.
pub fn quat_to_rotation(q: &[f64; 4]) -> Result<Matrix3<f64>> {
    let norm = quat_norm(q);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    let [w, x, y, z] = q.map(|c| c / norm);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Pulls a gradient with respect to the rotation matrix back onto the raw
/// (not necessarily unit) quaternion, including the normalisation step.
pub fn quat_rotation_grad(q: &[f64; 4], d_rot: &Matrix3<f64>) -> [f64; 4] {
    let norm = quat_norm(q);
    if norm == 0.0 {
        return [0.0; 4];
    }
    let [w, x, y, z] = q.map(|c| c / norm);
    let g = |r: usize, c: usize| d_rot[(r, c)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let unit = [w, x, y, z];
    let grad = [dw, dx, dy, dz];
    let radial: f64 = unit.iter().zip(&grad).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (grad[k] - unit[k] * radial) / norm;
    }
    out
}

/// Canonical-to-object rigid transform `x -> R(q) x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    /// Quaternion `(w, x, y, z)`, kept at unit norm.
    pub q: [f64; 4],
    pub t: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            q: [1.0, 0.0, 0.0, 0.0],
            t: Vec3::zeros(),
        }
    }

    pub fn new(q: [f64; 4], t: Vec3) -> Result<Self> {
        let mut pose = Pose { q, t };
        pose.normalize()?;
        Ok(pose)
    }

    pub fn translation(t: Vec3) -> Self {
        Pose { t, ..Self::identity() }
    }

    /// Rotation by `angle` radians about `axis`, followed by translation `t`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, t: Vec3) -> Result<Self> {
        let n = axis.norm();
        if n == 0.0 {
            return Err(Error::DegenerateRotation);
        }
        let s = (0.5 * angle).sin() / n;
        Pose::new(
            [(0.5 * angle).cos(), axis.x * s, axis.y * s, axis.z * s],
            t,
        )
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = quat_norm(&self.q);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        self.q = self.q.map(|c| c / n);
        Ok(())
    }

    /// Rotation matrix; a zero quaternion (never produced by [`Pose::new`])
    /// maps to the identity.
    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_rotation(&self.q).unwrap_or_else(|_| Matrix3::identity())
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation() * x + self.t
    }

    pub fn inverse_apply(&self, y: &Vec3) -> Vec3 {
        self.rotation().transpose() * (y - self.t)
    }

    /// Composition `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let [w1, x1, y1, z1] = self.q;
        let [w2, x2, y2, z2] = other.q;
        let q = [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ];
        Pose {
            q,
            t: self.rotation() * other.t + self.t,
        }
    }
}

/// Reverse-mode accumulator for one pose: gradient with respect to the
/// rotation matrix and the translation.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGrad {
    pub d_rot: Matrix3<f64>,
    pub d_t: Vec3,
}

impl Default for PoseGrad {
    fn default() -> Self {
        PoseGrad {
            d_rot: Matrix3::zeros(),
            d_t: Vec3::zeros(),
        }
    }
}

impl PoseGrad {
    /// Backward of `y = R x + t` given `g = dL/dy`. Returns `dL/dx`.
    pub fn apply_backward(&mut self, rot: &Matrix3<f64>, x: &Vec3, g: &Vec3) -> Vec3 {
        self.d_rot += g * x.transpose();
        self.d_t += g;
        rot.transpose() * g
    }

    /// Backward of `x = Rᵀ (y - t)` given `g = dL/dx`, where `offset = y - t`.
    /// Returns `dL/dy`.
    pub fn inverse_backward(&mut self, rot: &Matrix3<f64>, offset: &Vec3, g: &Vec3) -> Vec3 {
        self.d_rot += offset * g.transpose();
        let dy = rot * g;
        self.d_t -= dy;
        dy
    }

    pub fn quaternion(&self, q: &[f64; 4]) -> [f64; 4] {
        quat_rotation_grad(q, &self.d_rot)
    }
}
