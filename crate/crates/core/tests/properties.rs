//! Invariants checked on random inputs.
#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparse_depth::camera::{quaternion_to_rotation, rotation_to_quaternion, CameraIntrinsics, PoseSE3};
use sparse_depth::config::RunConfig;
use sparse_depth::geometry::{cross_matrix, project, triangulate_point, ProjectionMatrix};
use sparse_depth::metrics::{abs_inv, abs_rel, s_rmse};
use sparse_depth::scene::{generate_sample, mirror, normalize_pair, reprojection_error, rotate180, sample_sparse_labels, DataConfig, LabelCount, LabelMode};
use sparse_depth::Raster;

fn depths(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (prop::collection::vec(0.2f64..20.0, n), prop::collection::vec(0.2f64..20.0, n)))
}

fn unit_quaternion() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("non-degenerate", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
        .prop_map(|q| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.map(|v| v / n)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn s_rmse_ignores_global_scale((d, d_hat) in depths(1..200), c in 1e-3f64..1e3) {
        let scaled: Vec<f64> = d_hat.iter().map(|v| c * v).collect();
        let a = s_rmse(&d, &d_hat, None).unwrap();
        let b = s_rmse(&d, &scaled, None).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn abs_rel_ignores_joint_scale((d, d_hat) in depths(1..200), c in 1e-2f64..1e2) {
        let ds: Vec<f64> = d.iter().map(|v| c * v).collect();
        let hs: Vec<f64> = d_hat.iter().map(|v| c * v).collect();
        let a = abs_rel(&d, &d_hat, None).unwrap();
        let b = abs_rel(&ds, &hs, None).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn metrics_ignore_pixel_order((d, d_hat) in depths(2..100), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pd: Vec<f64> = order.iter().map(|&i| d[i]).collect();
        let ph: Vec<f64> = order.iter().map(|&i| d_hat[i]).collect();
        for f in [abs_inv, abs_rel, s_rmse] {
            let (a, b) = (f(&d, &d_hat, None).unwrap(), f(&pd, &ph, None).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_vanish_on_exact_prediction((d, _) in depths(1..100)) {
        prop_assert_eq!(abs_inv(&d, &d, None).unwrap(), 0.0);
        prop_assert_eq!(abs_rel(&d, &d, None).unwrap(), 0.0);
        prop_assert!(s_rmse(&d, &d, None).unwrap() < 1e-12);
    }

    #[test]
    fn cross_matrix_is_the_cross_product(u in prop::array::uniform3(-10.0f64..10.0), v in prop::array::uniform3(-10.0f64..10.0)) {
        let m = cross_matrix(u);
        let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        for i in 0..3 {
            let mv: f64 = (0..3).map(|j| m[i][j] * v[j]).sum();
            prop_assert!((mv - cross[i]).abs() < 1e-12);
            prop_assert_eq!(m[i][i], 0.0);
            for j in 0..3 {
                prop_assert_eq!(m[i][j], -m[j][i]);
            }
        }
    }

    #[test]
    fn quaternion_round_trip_up_to_sign(q in unit_quaternion()) {
        let r = quaternion_to_rotation(q).unwrap();
        let back = rotation_to_quaternion(&r);
        let dot: f64 = q.iter().zip(&back).map(|(a, b)| a * b).sum();
        prop_assert!((dot.abs() - 1.0).abs() < 1e-10, "{q:?} -> {back:?}");
    }

    #[test]
    fn triangulation_inverts_projection(
        q in unit_quaternion(),
        t in prop::array::uniform3(-1.0f64..1.0),
        m in (-1.5f64..1.5, -1.5f64..1.5, 2.0f64..8.0),
        f in 30.0f64..300.0,
    ) {
        let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(tn > 0.1);
        // keep the rotation small enough for the point to stay in front of both cameras
        let q = [q[0].abs().max(0.95), q[1] * 0.2, q[2] * 0.2, q[3] * 0.2];
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pose = PoseSE3::new(quaternion_to_rotation(q.map(|v| v / qn)).unwrap(), t.map(|v| v / tn)).unwrap();
        let k = CameraIntrinsics::new(f, f, 32.0, 24.0, 64, 48).unwrap();
        let (p1, p2) = (ProjectionMatrix::reference(&k), ProjectionMatrix::from_camera(&k, &pose));
        let point = [m.0, m.1, m.2];
        let (u1, v1, l1) = project(&p1, point).unwrap();
        let (u2, v2, l2) = project(&p2, point).unwrap();
        prop_assume!(l1 > 0.5 && l2 > 0.5);
        // the baseline must not be (nearly) parallel to the viewing ray
        let dir = [point[0] / point[2], point[1] / point[2], 1.0];
        let tr = pose.translation;
        let c = [dir[1] * tr[2] - dir[2] * tr[1], dir[2] * tr[0] - dir[0] * tr[2], dir[0] * tr[1] - dir[1] * tr[0]];
        prop_assume!(c.iter().map(|v| v * v).sum::<f64>().sqrt() > 0.1);
        let est = triangulate_point(&p1, &p2, [u1, v1], [u2, v2]).unwrap();
        for i in 0..3 {
            prop_assert!((est[i] - point[i]).abs() < 1e-7, "{est:?} vs {point:?}");
        }
    }

    #[test]
    fn labels_are_distinct_in_bounds_and_exact(seed in any::<u64>(), n in 1usize..60, center in any::<bool>()) {
        let (w, h) = (9, 7);
        let depth = Raster::new(w, h, 1, (0..w * h).map(|i| 1.0 + i as f64 * 0.1).collect()).unwrap();
        let mode = if center { LabelMode::Center } else { LabelMode::Uniform };
        let l = sample_sparse_labels(&depth, LabelCount::Count(n), mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(l.points.len(), n);
        let mut seen = std::collections::HashSet::new();
        for p in &l.points {
            prop_assert!(p.x < w && p.y < h);
            prop_assert!(seen.insert((p.x, p.y)));
            prop_assert_eq!(p.inv_depth, 1.0 / depth.data[p.y * w + p.x]);
        }
    }

    #[test]
    fn config_survives_canonical_round_trip(lr in 1e-6f64..1e-1, seed in any::<u64>(), w in 1usize..8) {
        let mut cfg = RunConfig::default();
        cfg.train.lr = lr;
        cfg.train.seed = seed;
        cfg.data.width = 16 * w;
        let text = cfg.canonical_json().unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(back.canonical_json().unwrap(), text);
        prop_assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }
}

proptest! {
    // rendering is the slow part; fewer cases
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rendered_pairs_satisfy_their_invariants(seed in any::<u64>(), index in 0usize..1000) {
        let data = DataConfig { width: 24, height: 16, normalize: false, ..DataConfig::default() };
        let s = generate_sample(&data, seed, index).unwrap();
        let p = &s.pair;
        prop_assert!(p.depth1.data.iter().all(|d| *d > 0.0));
        prop_assert!(reprojection_error(p) < 1e-6);

        let once = normalize_pair(p).unwrap();
        let twice = normalize_pair(&once).unwrap();
        prop_assert!((once.pose.translation_norm() - 1.0).abs() < 1e-12);
        let close = |a: &[f64], b: &[f64], tol: f64| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0));
        prop_assert!(close(&p.flow.data, &once.flow.data, 1e-9));
        prop_assert!(close(&once.depth1.data, &twice.depth1.data, 1e-9));
        prop_assert!(close(&once.pose.translation, &twice.pose.translation, 1e-12));
        prop_assert!(reprojection_error(&once) < 1e-6);
    }

    #[test]
    fn flips_are_involutions(seed in any::<u64>()) {
        let data = DataConfig { width: 24, height: 16, labels: LabelCount::Count(5), ..DataConfig::default() };
        let s = generate_sample(&data, seed, 0).unwrap();
        let (m, ml) = mirror(&s.pair, &s.labels);
        let (mm, mml) = mirror(&m, &ml);
        prop_assert_eq!(&mm.flow, &s.pair.flow);
        prop_assert_eq!(&mm.depth1, &s.pair.depth1);
        prop_assert_eq!(&mml, &s.labels);
        let (r, rl) = rotate180(&s.pair, &s.labels);
        let (rr, rrl) = rotate180(&r, &rl);
        prop_assert_eq!(&rr.image1, &s.pair.image1);
        prop_assert_eq!(&rr.flow, &s.pair.flow);
        prop_assert_eq!(&rrl, &s.labels);
    }
}
