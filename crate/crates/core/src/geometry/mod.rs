//! Classical two-view geometry: projection, linear (Rayleigh-quotient)
//! triangulation, dense depth from flow, and pose error angles.

mod eigen;
mod triangulate;

pub use eigen::jacobi_eigen_symmetric;
pub use triangulate::{
    dehomogenize, linear_triangulate, triangulate_depth_map, triangulate_point, triangulation_matrix, PixelStatus,
    TriangulatedDepth, TriangulationMatrix,
};

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};

/// `P = K·[R | t]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionMatrix(pub [[f64; 4]; 3]);

impl ProjectionMatrix {
    pub fn from_camera(k: &CameraIntrinsics, pose: &PoseSE3) -> Self {
        let km = k.matrix();
        let mut p = [[0.0; 4]; 3];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().take(3).enumerate() {
                *v = (0..3).map(|l| km[i][l] * pose.rotation[l][j]).sum();
            }
            row[3] = linalg::dot(km[i], pose.translation);
        }
        ProjectionMatrix(p)
    }

    /// `K·[I | 0]`.
    pub fn reference(k: &CameraIntrinsics) -> Self {
        Self::from_camera(k, &PoseSE3::identity())
    }
}

/// Pixel coordinates of `m` under `p`, plus the projective scale `λ`.
pub fn project(p: &ProjectionMatrix, m: Vec3) -> Result<(f64, f64, f64)> {
    let h = [m[0], m[1], m[2], 1.0];
    let row = |i: usize| (0..4).map(|j| p.0[i][j] * h[j]).sum::<f64>();
    let lambda = row(2);
    if lambda.abs() < 1e-12 {
        return Err(Error::PointAtInfinity);
    }
    Ok((row(0) / lambda, row(1) / lambda, lambda))
}

/// Skew matrix `[u]×` with `[u]×·v = u × v`.
pub fn cross_matrix(u: Vec3) -> Mat3 {
    [[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]]
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Geodesic angle between two rotations, degrees.
pub fn rotation_angle_error(r_est: &Mat3, r_gt: &Mat3) -> f64 {
    let m = linalg::mat_mul(&linalg::transpose(r_est), r_gt);
    let tr = m[0][0] + m[1][1] + m[2][2];
    clamp_unit((tr - 1.0) / 2.0).acos().to_degrees()
}

/// Angle between two translation directions, degrees.
pub fn translation_angle_error(t_est: Vec3, t_gt: Vec3) -> Result<f64> {
    let (a, b) = (linalg::norm(t_est), linalg::norm(t_gt));
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Degenerate("zero-length translation".into()));
    }
    Ok(clamp_unit(linalg::dot(t_est, t_gt) / (a * b)).acos().to_degrees())
}
