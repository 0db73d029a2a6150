use serde::{Deserialize, Serialize};

use super::{cross_matrix, jacobi_eigen_symmetric, ProjectionMatrix};
use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::raster::Raster;

/// Stacked `[m1]×·P1` over `[m2]×·P2`.
pub type TriangulationMatrix = [[f64; 4]; 6];

/// Relative gap below which the two smallest eigenvalues count as equal.
const DEGENERATE_GAP: f64 = 1e-10;
const INFINITY_EPS: f64 = 1e-12;

pub fn triangulation_matrix(p1: &ProjectionMatrix, p2: &ProjectionMatrix, m1: Vec3, m2: Vec3) -> TriangulationMatrix {
    let mut a = [[0.0; 4]; 6];
    for (block, (p, m)) in [(p1, m1), (p2, m2)].into_iter().enumerate() {
        let c = cross_matrix(m);
        for i in 0..3 {
            for j in 0..4 {
                a[3 * block + i][j] = (0..3).map(|l| c[i][l] * p.0[l][j]).sum();
            }
        }
    }
    a
}

/// Unit-norm minimiser of `‖A·M‖ / ‖M‖`: the eigenvector of `AᵀA` with the
/// smallest eigenvalue. The sign is fixed so that the last nonzero
/// component is positive.
///
/// Fails with [`Error::Degenerate`] when the smallest eigenvalue is not
/// simple, i.e. the gap to the next one is within `1e-10` of the largest.
pub fn linear_triangulate(a: &TriangulationMatrix) -> Result<[f64; 4]> {
    if a.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Usage("triangulation matrix is not finite".into()));
    }
    let mut ata = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let s: f64 = a.iter().map(|row| row[i] * row[j]).sum();
            ata[i][j] = s;
            ata[j][i] = s;
        }
    }
    let (vals, vecs) = jacobi_eigen_symmetric(ata);
    let scale = vals[3].abs();
    if !(scale > 0.0) || vals[1] - vals[0] <= DEGENERATE_GAP * scale {
        return Err(Error::Degenerate("smallest eigenvalue of AᵀA is not simple".into()));
    }
    let mut m = [vecs[0][0], vecs[1][0], vecs[2][0], vecs[3][0]];
    let pivot = if m[3] != 0.0 { m[3] } else { m[2] };
    if pivot < 0.0 {
        m.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(m)
}

/// Euclidean point of a homogeneous 4-vector.
pub fn dehomogenize(m: [f64; 4]) -> Result<Vec3> {
    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(m[3].abs() > INFINITY_EPS * norm) {
        return Err(Error::PointAtInfinity);
    }
    Ok([m[0] / m[3], m[1] / m[3], m[2] / m[3]])
}

/// Triangulate one pixel correspondence `(u1, v1) ↔ (u2, v2)`.
pub fn triangulate_point(p1: &ProjectionMatrix, p2: &ProjectionMatrix, m1: [f64; 2], m2: [f64; 2]) -> Result<Vec3> {
    let a = triangulation_matrix(p1, p2, [m1[0], m1[1], 1.0], [m2[0], m2[1], 1.0]);
    dehomogenize(linear_triangulate(&a)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelStatus {
    Ok,
    Degenerate,
    AtInfinity,
    BehindCamera,
}

/// Dense triangulation result in camera-1 coordinates.
#[derive(Clone, Debug)]
pub struct TriangulatedDepth {
    pub width: usize,
    pub height: usize,
    /// Signed inverse depth `M₄/M₃`; zero where degenerate.
    ///
    /// Finite for every status, so per-pixel errors against ground truth
    /// stay meaningful even for points pushed behind the camera.
    pub inv_depth: Vec<f64>,
    pub status: Vec<PixelStatus>,
}

impl TriangulatedDepth {
    pub fn valid(&self) -> Vec<bool> {
        self.status.iter().map(|s| *s == PixelStatus::Ok).collect()
    }

    pub fn count(&self, status: PixelStatus) -> usize {
        self.status.iter().filter(|s| **s == status).count()
    }

    /// Depth `1/max(inv, floor)` for every pixel, the same guard applied to
    /// network output.
    pub fn depth_raster(&self, floor: f64) -> Raster {
        let data = self.inv_depth.iter().map(|z| 1.0 / z.max(floor)).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn inv_depth_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.inv_depth.clone(),
        }
    }
}

/// Triangulate every pixel `p` against `p + flow(p)`.
///
/// Per-pixel failures are recorded in `status`; the map itself only fails
/// when the inputs are inconsistent or `|t| ≠ 1`.
pub fn triangulate_depth_map(
    flow: &Raster,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    pose: &PoseSE3,
) -> Result<TriangulatedDepth> {
    if flow.channels != 2 {
        return Err(Error::Usage(format!("flow must have 2 channels, got {}", flow.channels)));
    }
    let tn = pose.translation_norm();
    if (tn - 1.0).abs() > 1e-6 {
        return Err(Error::Usage(format!("pose translation must be unit length, got {tn}")));
    }
    let p1 = ProjectionMatrix::reference(k1);
    let p2 = ProjectionMatrix::from_camera(k2, pose);
    let (w, h) = (flow.width, flow.height);
    let mut inv_depth = vec![0.0; w * h];
    let mut status = vec![PixelStatus::Ok; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (u1, v1) = (x as f64, y as f64);
            let m2 = [u1 + flow.get(0, x, y), v1 + flow.get(1, x, y), 1.0];
            let a = triangulation_matrix(&p1, &p2, [u1, v1, 1.0], m2);
            let m = match linear_triangulate(&a) {
                Ok(m) => m,
                Err(_) => {
                    status[i] = PixelStatus::Degenerate;
                    continue;
                }
            };
            inv_depth[i] = if m[2] != 0.0 { m[3] / m[2] } else { 0.0 };
            status[i] = match dehomogenize(m) {
                Err(_) => PixelStatus::AtInfinity,
                Ok(point) => {
                    let z2 = pose.transform(point)[2];
                    if point[2] <= 0.0 || z2 <= 0.0 {
                        PixelStatus::BehindCamera
                    } else {
                        PixelStatus::Ok
                    }
                }
            };
        }
    }
    Ok(TriangulatedDepth {
        width: w,
        height: h,
        inv_depth,
        status,
    })
}
