use super::{Patch, PlanarScene, Texture};
use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::raster::Raster;

fn hash(seed: u64, x: i64, y: i64) -> f64 {
    // splitmix64 over the packed lattice coordinates
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash(seed, ix, iy);
    let b = hash(seed, ix + 1, iy);
    let c = hash(seed, ix, iy + 1);
    let d = hash(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

impl Texture {
    /// Intensity in `[0, 1]` at in-plane coordinates `(u, v)` for `channel`.
    pub fn eval(&self, u: f64, v: f64, channel: usize) -> f64 {
        let seed = self.seed.wrapping_add(channel as u64 * 0x1000_0000_01B3);
        let (nu, nv) = (u / self.noise_scale, v / self.noise_scale);
        let noise = 0.65 * value_noise(seed, nu, nv) + 0.35 * value_noise(seed ^ 0xA5A5, 2.0 * nu, 2.0 * nv);
        let cell = (u / self.checker_size).floor() as i64 + (v / self.checker_size).floor() as i64;
        let checker = if cell.rem_euclid(2) == 0 { 1.0 } else { 0.0 };
        let t = (1.0 - self.checker_mix) * noise + self.checker_mix * checker;
        (self.base + self.contrast * (t - 0.5)).clamp(0.0, 1.0)
    }
}

impl Patch {
    /// Ray parameter `s` of the intersection of `origin + s·dir` with this
    /// patch, honouring its polygon and the scene's depth slab.
    pub(crate) fn intersect(&self, origin: Vec3, dir: Vec3, slab: Option<(f64, f64)>) -> Option<(f64, Vec3)> {
        let denom = linalg::dot(self.normal, dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = (self.offset - linalg::dot(self.normal, origin)) / denom;
        if !(s > 0.0) {
            return None;
        }
        let p = linalg::add(origin, linalg::scale(dir, s));
        if let Some((lo, hi)) = slab {
            if p[2] < lo || p[2] > hi {
                return None;
            }
        }
        if !self.polygon.is_empty() {
            let (u, v) = self.plane_coords(p);
            if !point_in_polygon(&self.polygon, u, v) {
                return None;
            }
        }
        Some((s, p))
    }

    pub(crate) fn plane_coords(&self, p: Vec3) -> (f64, f64) {
        let d = linalg::sub(p, self.center);
        (linalg::dot(d, self.axis_u), linalg::dot(d, self.axis_v))
    }

    pub(crate) fn shade(&self, p: Vec3, channel: usize) -> f64 {
        let (u, v) = self.plane_coords(p);
        self.texture.eval(u, v, channel)
    }
}

fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl PlanarScene {
    /// Nearest surface hit along a ray given in camera-1 coordinates.
    pub(crate) fn cast(&self, origin: Vec3, dir: Vec3) -> Option<(f64, &Patch, Vec3)> {
        let slab = Some((self.depth_min, self.depth_max));
        let mut best = self.background.intersect(origin, dir, None).map(|(s, p)| (s, &self.background, p));
        for patch in &self.patches {
            if let Some((s, p)) = patch.intersect(origin, dir, slab) {
                if best.as_ref().is_none_or(|b| s < b.0) {
                    best = Some((s, patch, p));
                }
            }
        }
        best
    }
}

/// Ray-cast the scene from a camera with intrinsics `k` placed at `pose`
/// relative to camera 1. Returns the image (`channels` planes) and the depth
/// (z coordinate in that camera's frame).
pub fn render_view(scene: &PlanarScene, k: &CameraIntrinsics, pose: &PoseSE3, channels: usize) -> Result<(Raster, Raster)> {
    let (w, h) = (k.width, k.height);
    let rt = linalg::transpose(&pose.rotation);
    // camera centre in camera-1 coordinates: -Rᵀt
    let origin = linalg::scale(linalg::mat_vec(&rt, pose.translation), -1.0);
    let mut image = Raster::filled(w, h, channels, 0.0);
    let mut depth = Raster::filled(w, h, 1, 0.0);
    for y in 0..h {
        for x in 0..w {
            // ray with unit z in the rendering camera, expressed in camera-1 axes;
            // the ray parameter is then exactly the rendering camera's depth
            let dir = linalg::mat_vec(&rt, k.ray(x as f64, y as f64));
            let (s, patch, p) = scene.cast(origin, dir).ok_or_else(|| {
                Error::config(format!("pixel ({x}, {y}) sees no surface; the background plane must cover the view"))
            })?;
            depth.set(0, x, y, s);
            for c in 0..channels {
                image.set(c, x, y, patch.shade(p, c));
            }
        }
    }
    Ok((image, depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_texture() -> Texture {
        Texture {
            seed: 1,
            noise_scale: 0.3,
            checker_size: 0.2,
            checker_mix: 0.3,
            base: 0.5,
            contrast: 0.8,
        }
    }

    fn plane_scene(normal: Vec3, offset: f64) -> PlanarScene {
        PlanarScene {
            patches: vec![],
            background: Patch {
                normal,
                offset,
                center: [0.0, 0.0, offset],
                axis_u: [1.0, 0.0, 0.0],
                axis_v: [0.0, 1.0, 0.0],
                polygon: vec![],
                texture: flat_texture(),
            },
            depth_min: 0.1,
            depth_max: 100.0,
        }
    }

    #[test]
    fn fronto_parallel_plane_has_constant_depth() {
        let scene = plane_scene([0.0, 0.0, 1.0], 2.0);
        let k = CameraIntrinsics::new(37.0, 41.0, 10.0, 7.0, 20, 15).unwrap();
        let (_, depth) = render_view(&scene, &k, &PoseSE3::identity(), 1).unwrap();
        assert!(depth.data.iter().all(|d| (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn slanted_plane_matches_closed_form() {
        let s = std::f64::consts::SQRT_2;
        let n = [1.0 / s, 0.0, 1.0 / s];
        let scene = plane_scene(n, s);
        let k = CameraIntrinsics::nominal(16, 12);
        let (_, depth) = render_view(&scene, &k, &PoseSE3::identity(), 1).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                let r = k.ray(x as f64, y as f64);
                let expect = s / linalg::dot(n, r);
                assert!((depth.get(0, x, y) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_pose_renders_identically_twice() {
        let scene = plane_scene([0.1, 0.0, 1.0], 3.0);
        let k = CameraIntrinsics::nominal(16, 12);
        let a = render_view(&scene, &k, &PoseSE3::identity(), 2).unwrap();
        let b = render_view(&scene, &k, &PoseSE3::identity(), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plane_behind_camera_is_an_error() {
        let scene = plane_scene([0.0, 0.0, 1.0], -2.0);
        let k = CameraIntrinsics::nominal(8, 6);
        assert!(matches!(render_view(&scene, &k, &PoseSE3::identity(), 1), Err(Error::Config(_))));
    }

    #[test]
    fn texture_stays_in_unit_range() {
        let t = flat_texture();
        for i in 0..500 {
            let v = t.eval(i as f64 * 0.37 - 50.0, i as f64 * -0.11 + 3.0, i % 3);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn polygon_membership() {
        let square = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
        assert!(point_in_polygon(&square, 0.0, 0.0));
        assert!(!point_in_polygon(&square, 1.5, 0.0));
    }
}
