//! Pinhole intrinsics and rigid camera motion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};

/// Pinhole camera; pixel `(u, v)` is the image of `(fx·x/z + cx, fy·y/z + cy)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, focal length equal to the image width, centred principal point.
    pub fn nominal(width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx: width as f64,
            fy: width as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::config(format!("focal lengths must be positive: {self:?}")));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::config(format!("principal point outside the image: {self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
    }

    /// Ray through pixel `(u, v)` scaled to unit z.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        linalg::scale(self.ray(u, v), depth)
    }

    /// Pixel of a camera-frame point; `None` when `z ≤ 0`.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        if p[2] <= 0.0 {
            return None;
        }
        Some((self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy))
    }
}

/// Rigid motion taking camera-1 coordinates to camera-2 coordinates: `X₂ = R·X₁ + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: linalg::IDENTITY3,
            translation: [0.0; 3],
        }
    }

    /// Checks that `rotation` is orthonormal with determinant +1 to 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let rtr = linalg::mat_mul(&linalg::transpose(&rotation), &rotation);
        let off = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (rtr[i][j] - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        if off > 1e-9 || (linalg::det(&rotation) - 1.0).abs() > 1e-9 {
            return Err(Error::config("rotation matrix is not a proper rotation"));
        }
        Ok(PoseSE3 { rotation, translation })
    }

    pub fn transform(&self, p: Vec3) -> Vec3 {
        linalg::add(linalg::mat_vec(&self.rotation, p), self.translation)
    }

    pub fn translation_norm(&self) -> f64 {
        linalg::norm(self.translation)
    }

    /// Conjugate by the diagonal reflection/rotation `s`: `R' = S·R·S`, `t' = S·t`.
    pub(crate) fn conjugate_diag(&self, s: Vec3) -> Self {
        let mut r = self.rotation;
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= s[i] * s[j];
            }
        }
        PoseSE3 {
            rotation: r,
            translation: [self.translation[0] * s[0], self.translation[1] * s[1], self.translation[2] * s[2]],
        }
    }

    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        rotation_to_quaternion(&self.rotation)
    }
}

/// Rotation matrix of a (not necessarily unit) quaternion `(w, x, y, z)`.
pub fn quaternion_to_rotation(q: [f64; 4]) -> Result<Mat3> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n >= 1e-8) {
        return Err(Error::Degenerate(format!("quaternion norm {n:e} too small")));
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Ok([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

pub fn rotation_to_quaternion(r: &Mat3) -> [f64; 4] {
    let tr = r[0][0] + r[1][1] + r[2][2];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s]
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        [(r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s]
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        [(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s]
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        [(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s]
    };
    if q[0] < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_backproject_round_trip() {
        let k = CameraIntrinsics::new(100.0, 90.0, 32.0, 24.0, 64, 48).unwrap();
        let p = k.backproject(10.5, 40.25, 3.0);
        let (u, v) = k.project(p).unwrap();
        assert!((u - 10.5).abs() < 1e-12 && (v - 40.25).abs() < 1e-12);
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn quaternion_round_trip() {
        let r = linalg::axis_angle([0.3, -0.5, 0.8], 2.1);
        let q = rotation_to_quaternion(&r);
        let r2 = quaternion_to_rotation(q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - r2[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pose_rejects_reflection() {
        let s = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(PoseSE3::new(s, [0.0; 3]).is_err());
    }
}
