use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use super::{
    compute_flow, corrupt_flow, normalize_pair, perturb_intrinsics, render_view, sample_sparse_labels, AugmentOps,
    DataConfig, Patch, PlanarScene, RenderedPair, SparseLabelSet, Texture,
};
use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::error::{Error, Result};
use crate::linalg::{self, Vec3};
use crate::raster::Raster;

/// Independent random stream for sample `index` under `global_seed`.
pub fn stream_rng(global_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
    rng.set_stream(index);
    rng
}

fn random_texture(rng: &mut impl Rng) -> Texture {
    Texture {
        seed: rng.next_u64(),
        noise_scale: rng.random_range(0.05..0.3),
        checker_size: rng.random_range(0.1..0.5),
        checker_mix: rng.random_range(0.0..0.6),
        base: rng.random_range(0.3..0.7),
        contrast: rng.random_range(0.4..1.0),
    }
}

fn plane_basis(n: Vec3) -> (Vec3, Vec3) {
    let helper = if n[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
    let a = linalg::cross(helper, n);
    let a = linalg::scale(a, 1.0 / linalg::norm(a));
    (a, linalg::cross(n, a))
}

fn nominal_intrinsics(cfg: &DataConfig) -> CameraIntrinsics {
    let mut k = CameraIntrinsics::nominal(cfg.width, cfg.height);
    k.fx = cfg.focal_factor * cfg.width as f64;
    k.fy = k.fx;
    k
}

/// Random piecewise-planar scene in front of camera 1.
///
/// The background is an unbounded, slightly tilted plane whose camera-1
/// depth stays inside `[depth_min, depth_max]` over the whole image; patches
/// are random polygons clipped to the same depth slab.
pub fn sample_scene(seed: u64, cfg: &DataConfig) -> Result<PlanarScene> {
    if !(cfg.depth_min > 0.0 && cfg.depth_min < cfg.depth_max) {
        return Err(Error::field("data.depth_max", "need 0 < depth_min < depth_max"));
    }
    if cfg.patches_min > cfg.patches_max {
        return Err(Error::field("data.patches_max", "patches_min exceeds patches_max"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = nominal_intrinsics(cfg);
    let (w, h) = (cfg.width as f64 - 1.0, cfg.height as f64 - 1.0);
    let corners = [k.ray(0.0, 0.0), k.ray(w, 0.0), k.ray(0.0, h), k.ray(w, h)];

    let far = cfg.depth_max * rng.random_range(0.8..1.0);
    let (mut a, mut b) = (rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25));
    let (normal, offset) = loop {
        let n = [a, b, 1.0];
        let n = linalg::scale(n, 1.0 / linalg::norm(n));
        let q: Vec<f64> = corners.iter().map(|r| linalg::dot(n, *r)).collect();
        let (qmin, qmax) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let offset = far * qmin;
        if qmin > 0.0 && offset / qmax >= cfg.depth_min {
            break (n, offset);
        }
        a *= 0.5;
        b *= 0.5;
        if a.abs() < 1e-9 {
            break ([0.0, 0.0, 1.0], far);
        }
    };
    let (axis_u, axis_v) = plane_basis(normal);
    let background = Patch {
        normal,
        offset,
        center: linalg::scale(normal, offset),
        axis_u,
        axis_v,
        polygon: vec![],
        texture: random_texture(&mut rng),
    };

    let n_patches = rng.random_range(cfg.patches_min..=cfg.patches_max);
    let near_inv = 1.0 / cfg.depth_min;
    let far_inv = 1.0 / (0.9 * cfg.depth_max * 0.8);
    let mut patches = Vec::with_capacity(n_patches);
    for _ in 0..n_patches {
        let u = rng.random_range(-0.1 * w..1.1 * w);
        let v = rng.random_range(-0.1 * h..1.1 * h);
        let depth = 1.0 / rng.random_range(far_inv.min(near_inv)..near_inv);
        let center = k.backproject(u, v, depth);
        let tilt = rng.random_range(0.0..=cfg.max_patch_tilt_deg).to_radians();
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let normal = [tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos()];
        let (axis_u, axis_v) = plane_basis(normal);
        let radius = depth * rng.random_range(0.15..0.45);
        let n_vertices = rng.random_range(3..=6);
        let mut angles: Vec<f64> = (0..n_vertices).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let polygon = angles
            .iter()
            .map(|t| {
                let r = radius * rng.random_range(0.5..1.0);
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        patches.push(Patch {
            normal,
            offset: linalg::dot(normal, center),
            center,
            axis_u,
            axis_v,
            polygon,
            texture: random_texture(&mut rng),
        });
    }
    Ok(PlanarScene {
        patches,
        background,
        depth_min: cfg.depth_min,
        depth_max: cfg.depth_max,
    })
}

/// Random rotation (each Euler angle within ±`max_rotation_deg`) and a
/// translation of uniformly random direction with norm in
/// `[translation_min, translation_max]`.
pub fn sample_motion(rng: &mut impl Rng, cfg: &DataConfig) -> PoseSE3 {
    let m = cfg.max_rotation_deg.to_radians();
    let mut angle = || if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let (ax, ay, az) = (angle(), angle(), angle());
    let r = linalg::mat_mul(
        &linalg::axis_angle([0.0, 0.0, 1.0], az),
        &linalg::mat_mul(&linalg::axis_angle([0.0, 1.0, 0.0], ay), &linalg::axis_angle([1.0, 0.0, 0.0], ax)),
    );
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let norm = rng.random_range(cfg.translation_min..=cfg.translation_max);
    PoseSE3 {
        rotation: r,
        translation: linalg::scale(dir, norm),
    }
}

/// One generated training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub pair: RenderedPair,
    pub labels: SparseLabelSet,
    /// Intrinsics the data nominally claims (before any perturbation).
    pub nominal_intrinsics: CameraIntrinsics,
    /// Flow the model consumes: the exact flow, possibly corrupted.
    pub flow_input: Raster,
    /// Per-pixel magnitude of the corruption in `flow_input`, pixels.
    pub flow_error: Vec<f64>,
}

impl Sample {
    /// Apply mirror / rotate-180 to every field, consistently.
    pub fn transformed(&self, ops: AugmentOps) -> Sample {
        let mut out = self.clone();
        let (w, h) = (self.pair.width(), self.pair.height());
        if ops.mirror {
            let (p, l) = super::mirror(&out.pair, &out.labels);
            out.pair = p;
            out.labels = l;
            out.flow_input = out.flow_input.mirrored(&[0]);
            let err = Raster::new(w, h, 1, out.flow_error).expect("error map").mirrored(&[]);
            out.flow_error = err.data;
        }
        if ops.rotate {
            let (p, l) = super::rotate180(&out.pair, &out.labels);
            out.pair = p;
            out.labels = l;
            out.flow_input = out.flow_input.rotated180(&[0, 1]);
            let err = Raster::new(w, h, 1, out.flow_error).expect("error map").rotated180(&[]);
            out.flow_error = err.data;
        }
        out
    }

    pub fn augmented(&self, seed: u64) -> Sample {
        self.transformed(AugmentOps::draw(seed))
    }
}

/// Deterministically generate sample `index` of the stream `global_seed`.
///
/// The scene, motion, intrinsics perturbation, labels and flow corruption
/// each draw from their own sub-seed, so changing e.g. the label count leaves
/// the scene and motion untouched.
pub fn generate_sample(cfg: &DataConfig, global_seed: u64, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = stream_rng(global_seed, index as u64);
    let scene_seed = rng.next_u64();
    let motion_seed = rng.next_u64();
    let k1_seed = rng.next_u64();
    let k2_seed = rng.next_u64();
    let label_seed = rng.next_u64();
    let corrupt_seed = rng.next_u64();

    let scene = sample_scene(scene_seed, cfg)?;
    let nominal = nominal_intrinsics(cfg);
    let k1 = perturb_intrinsics(&nominal, k1_seed, cfg.intrinsics_perturbation);
    let k2 = perturb_intrinsics(&nominal, k2_seed, cfg.intrinsics_perturbation);
    let pose = sample_motion(&mut ChaCha8Rng::seed_from_u64(motion_seed), cfg);

    let (image1, depth1) = render_view(&scene, &k1, &PoseSE3::identity(), cfg.channels)?;
    let (image2, depth2) = render_view(&scene, &k2, &pose, cfg.channels)?;
    let (flow, occlusion) = compute_flow(&depth1, &k1, &k2, &pose, Some(&depth2), cfg.occlusion_tolerance)?;
    let mut pair = RenderedPair {
        image1,
        image2,
        depth1,
        flow,
        occlusion,
        intrinsics1: k1,
        intrinsics2: k2,
        pose,
    };
    if cfg.normalize {
        pair = normalize_pair(&pair)?;
    }
    let labels = sample_sparse_labels(
        &pair.depth1,
        cfg.labels,
        cfg.label_mode,
        &mut ChaCha8Rng::seed_from_u64(label_seed),
    )?;
    let (flow_input, flow_error) = if cfg.flow_corruption.is_identity() {
        (pair.flow.clone(), vec![0.0; pair.depth1.pixels()])
    } else {
        let c = corrupt_flow(&pair.flow, corrupt_seed, &cfg.flow_corruption)?;
        (c.flow, c.magnitude)
    };
    Ok(Sample {
        index,
        pair,
        labels,
        nominal_intrinsics: nominal,
        flow_input,
        flow_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::reprojection_error;

    fn small() -> DataConfig {
        DataConfig {
            width: 32,
            height: 24,
            ..DataConfig::default()
        }
    }

    #[test]
    fn zero_patches_gives_background_only() {
        let cfg = DataConfig {
            patches_min: 0,
            patches_max: 0,
            ..small()
        };
        let s = sample_scene(7, &cfg).unwrap();
        assert!(s.patches.is_empty());
    }

    #[test]
    fn scene_sampling_is_deterministic() {
        assert_eq!(sample_scene(3, &small()).unwrap(), sample_scene(3, &small()).unwrap());
    }

    #[test]
    fn infeasible_depth_range_rejected() {
        let cfg = DataConfig {
            depth_min: 5.0,
            depth_max: 5.0,
            ..small()
        };
        assert!(sample_scene(1, &cfg).is_err());
    }

    #[test]
    fn generated_sample_is_consistent_and_reproducible() {
        let cfg = small();
        let a = generate_sample(&cfg, 11, 4).unwrap();
        let b = generate_sample(&cfg, 11, 4).unwrap();
        assert_eq!(a, b);
        assert!((a.pair.pose.translation_norm() - 1.0).abs() < 1e-12);
        assert!(a.pair.depth1.data.iter().all(|d| *d > 0.0));
        assert!(reprojection_error(&a.pair) < 1e-6);
        let c = generate_sample(&cfg, 11, 5).unwrap();
        assert_ne!(a.pair.image1, c.pair.image1);
    }

    #[test]
    fn label_count_does_not_change_scene() {
        let a = generate_sample(&small(), 2, 0).unwrap();
        let dense = DataConfig {
            labels: crate::scene::LabelCount::Dense,
            ..small()
        };
        let b = generate_sample(&dense, 2, 0).unwrap();
        assert_eq!(a.pair, b.pair);
        assert_eq!(b.labels.len(), 32 * 24);
    }
}
