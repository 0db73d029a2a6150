use super::RenderedPair;
use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::linalg;
use crate::raster::Raster;

/// Analytic flow from camera 1 to camera 2.
///
/// Each pixel is back-projected with `k1` at its depth, moved by `pose` and
/// projected with `k2`. A pixel is flagged occluded when its point lands
/// behind camera 2, outside image 2, or (when `depth2` is supplied) farther
/// than the camera-2 depth at the landing pixel by more than the relative
/// tolerance `tau`. Occluded pixels still carry their geometric flow when it
/// is defined and zero flow otherwise.
pub fn compute_flow(
    depth1: &Raster,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    pose: &PoseSE3,
    depth2: Option<&Raster>,
    tau: f64,
) -> Result<(Raster, Vec<bool>)> {
    let (w, h) = (depth1.width, depth1.height);
    let mut flow = Raster::filled(w, h, 2, 0.0);
    let mut occluded = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = depth1.get(0, x, y);
            if !(d > 0.0) {
                return Err(Error::config(format!("non-positive depth {d} at ({x}, {y})")));
            }
            let p2 = pose.transform(k1.backproject(x as f64, y as f64, d));
            let i = y * w + x;
            let Some((u2, v2)) = k2.project(p2) else {
                occluded[i] = true;
                continue;
            };
            flow.set(0, x, y, u2 - x as f64);
            flow.set(1, x, y, v2 - y as f64);
            let (rx, ry) = (u2.round(), v2.round());
            if rx < 0.0 || ry < 0.0 || rx >= k2.width as f64 || ry >= k2.height as f64 {
                occluded[i] = true;
                continue;
            }
            if let Some(d2) = depth2 {
                let visible = d2.get(0, rx as usize, ry as usize);
                if p2[2] > visible * (1.0 + tau) {
                    occluded[i] = true;
                }
            }
        }
    }
    Ok((flow, occluded))
}

/// Scale depth and translation jointly so that |t| = 1. Flow is unchanged.
pub fn normalize_pair(pair: &RenderedPair) -> Result<RenderedPair> {
    const EPS_T: f64 = 1e-6;
    let norm = pair.pose.translation_norm();
    if !(norm >= EPS_T) {
        return Err(Error::DegenerateMotion { norm });
    }
    let mut out = pair.clone();
    if norm == 1.0 {
        return Ok(out);
    }
    out.depth1.data.iter_mut().for_each(|d| *d /= norm);
    out.pose.translation = linalg::scale(pair.pose.translation, 1.0 / norm);
    Ok(out)
}

/// Largest distance between `pixel + flow` and the reprojection of the
/// pixel's 3-D point, over non-occluded pixels.
pub fn reprojection_error(pair: &RenderedPair) -> f64 {
    let (w, h) = (pair.width(), pair.height());
    let mut worst: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            if pair.occlusion[y * w + x] {
                continue;
            }
            let p = pair.intrinsics1.backproject(x as f64, y as f64, pair.depth1.get(0, x, y));
            match pair.intrinsics2.project(pair.pose.transform(p)) {
                Some((u, v)) => {
                    let du = u - (x as f64 + pair.flow.get(0, x, y));
                    let dv = v - (y as f64 + pair.flow.get(1, x, y));
                    worst = worst.max(du.hypot(dv));
                }
                None => return f64::INFINITY,
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_motion_gives_zero_flow() {
        let k = CameraIntrinsics::nominal(10, 8);
        let depth = Raster::filled(10, 8, 1, 3.0);
        let (flow, occ) = compute_flow(&depth, &k, &k, &PoseSE3::identity(), None, 0.01).unwrap();
        assert!(flow.data.iter().all(|v| v.abs() < 1e-12));
        assert!(occ.iter().all(|o| !o));
    }

    #[test]
    fn lateral_translation_on_axis_point() {
        // fx = 100 centred; the point on the optical axis at depth 2 moves by fx·(−1)/2.
        let k = CameraIntrinsics::new(100.0, 100.0, 5.0, 5.0, 11, 11).unwrap();
        let depth = Raster::filled(11, 11, 1, 2.0);
        let pose = PoseSE3::new(linalg::IDENTITY3, [-1.0, 0.0, 0.0]).unwrap();
        let (flow, _) = compute_flow(&depth, &k, &k, &pose, None, 0.01).unwrap();
        assert!((flow.get(0, 5, 5) + 50.0).abs() < 1e-12);
        assert!(flow.get(1, 5, 5).abs() < 1e-12);
    }

    #[test]
    fn half_turn_about_optical_axis_reflects_through_principal_point() {
        let k = CameraIntrinsics::new(20.0, 20.0, 4.0, 3.0, 9, 7).unwrap();
        let depth = Raster::filled(9, 7, 1, 2.5);
        let r = linalg::axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI);
        let pose = PoseSE3::new(r, [0.0; 3]).unwrap();
        let (flow, _) = compute_flow(&depth, &k, &k, &pose, None, 0.01).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                let (u2, v2) = (x as f64 + flow.get(0, x, y), y as f64 + flow.get(1, x, y));
                assert!((u2 - (2.0 * 4.0 - x as f64)).abs() < 1e-9);
                assert!((v2 - (2.0 * 3.0 - y as f64)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn point_behind_second_camera_is_occluded_not_nan() {
        let k = CameraIntrinsics::nominal(6, 6);
        let depth = Raster::filled(6, 6, 1, 1.0);
        let pose = PoseSE3::new(linalg::IDENTITY3, [0.0, 0.0, -3.0]).unwrap();
        let (flow, occ) = compute_flow(&depth, &k, &k, &pose, None, 0.01).unwrap();
        assert!(occ.iter().all(|o| *o));
        assert!(flow.data.iter().all(|v| v.is_finite()));
    }
}
