use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;

fn normal_input(seed: u64, c: usize, h: usize, w: usize) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |ch: usize| {
        let data = (0..ch * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::new(vec![ch, h, w], data).unwrap()
    };
    ModelInput {
        image1: t(c),
        image2: t(c),
        flow: t(2),
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn zero_all(model: &mut Model) {
    for t in model.params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
}

fn set(model: &mut Model, name: &str, f: impl Fn(usize) -> f64) {
    let i = model.params.position(name).unwrap();
    model.params.tensors_mut()[i].data_mut().iter_mut().enumerate().for_each(|(j, v)| *v = f(j));
}

#[test]
fn filter_bank_arithmetic() {
    let cfg = ModelConfig::default();
    assert_eq!(filter_bank_len(&cfg), 740 + 1810 + 1820);
    let no_coord = ModelConfig {
        variant: Variant::NoCoordconv,
        ..ModelConfig::default()
    };
    assert_eq!(filter_bank_len(&no_coord), (2 * 9 + 1) * 20 + 1810 + 1820);
    let m = Model::init(cfg, 0).unwrap();
    assert_eq!(m.params.get("local.perceptron.weight").unwrap().shape(), &[4370, 6]);
}

#[test]
fn coordinate_channels() {
    let c = coord_channels(5, 7);
    let d = c.data();
    let plane = 35;
    assert_eq!((d[0], d[6], d[plane], d[plane + 34]), (-1.0, 1.0, -1.0, 1.0));
    assert_eq!(d[2 * 7 + 3], 0.0);
    assert_eq!(d[plane + 2 * 7 + 3], 0.0);
    for ch in 0..2 {
        let mean: f64 = d[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64;
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn global_vector_has_fixed_length_at_any_resolution() {
    let m = Model::init(ModelConfig::default(), 3).unwrap();
    for (h, w) in [(16, 16), (32, 48), (48, 64)] {
        let input = normal_input(1, 1, h, w);
        assert_eq!(m.global_params(&input).unwrap().len(), 6);
        assert_eq!(m.predict(&input).unwrap().len(), h * w);
    }
    assert!(matches!(m.predict(&normal_input(1, 1, 20, 16)), Err(Error::Config(_))));
}

#[test]
fn zero_weights_give_bias_determined_outputs() {
    let mut m = Model::init(ModelConfig::default(), 3).unwrap();
    zero_all(&mut m);
    set(&mut m, "global.out.bias", |j| j as f64 * 0.5);
    let a = m.global_params(&normal_input(1, 1, 16, 16)).unwrap();
    let b = m.global_params(&normal_input(2, 1, 16, 16)).unwrap();
    assert_eq!(a, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
    assert_eq!(a, b);

    // g = 0 makes the banks equal to the perceptron bias
    set(&mut m, "global.out.bias", |_| 0.0);
    set(&mut m, "local.perceptron.bias", |j| (j as f64).sin());
    let banks = m.filter_banks(&normal_input(4, 1, 16, 16)).unwrap();
    assert!(banks.iter().enumerate().all(|(j, v)| *v == (j as f64).sin()));

    set(&mut m, "local.perceptron.bias", |_| 0.0);
    set(&mut m, "local.head.bias", |_| 0.75);
    assert!(m.predict(&normal_input(5, 1, 16, 16)).unwrap().iter().all(|v| *v == 0.75));
}

#[test]
fn perturbing_g_changes_every_bank() {
    let m = Model::init(ModelConfig::default(), 11).unwrap();
    let w = m.params.get("local.perceptron.weight").unwrap();
    // with a dense perceptron, any g-direction moves all N_F outputs
    for row in w.data().chunks(6) {
        assert!(row.iter().any(|v| *v != 0.0));
    }
    let a = m.filter_banks(&normal_input(1, 1, 16, 16)).unwrap();
    let b = m.filter_banks(&normal_input(2, 1, 16, 16)).unwrap();
    assert_eq!(a, m.filter_banks(&normal_input(1, 1, 16, 16)).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x != y));
}

#[test]
fn local_network_receptive_field_is_nine_by_nine() {
    let cfg = ModelConfig {
        variant: Variant::NoGlobalModule,
        ..ModelConfig::default()
    };
    let m = Model::init(cfg, 5).unwrap();
    let (h, w) = (32, 32);
    let base = normal_input(7, 1, h, w);
    let mut poked = base.clone();
    let (px, py) = (13, 17);
    poked.flow.data_mut()[py * w + px] += 1.0;
    let a = m.predict(&base).unwrap();
    let b = m.predict(&poked).unwrap();
    for y in 0..h {
        for x in 0..w {
            let inside = x.abs_diff(px) <= 4 && y.abs_diff(py) <= 4;
            let changed = a[y * w + x] != b[y * w + x];
            assert!(!changed || inside, "change outside the receptive field at ({x},{y})");
        }
    }
    assert_ne!(a[py * w + px], b[py * w + px]);
}

#[test]
fn images_reach_the_output_through_the_global_module() {
    let m = Model::init(ModelConfig::default(), 2).unwrap();
    let a = normal_input(1, 1, 16, 16);
    let mut b = a.clone();
    b.image1 = normal_input(9, 1, 16, 16).image1;
    assert_ne!(m.predict(&a).unwrap(), m.predict(&b).unwrap());
}

#[test]
fn init_is_seeded_and_well_scaled() {
    for cfg in [ModelConfig::default(), ModelConfig::small_encdec()] {
        let a = Model::init(cfg.clone(), 1).unwrap();
        assert_eq!(a, Model::init(cfg.clone(), 1).unwrap());
        assert_ne!(a, Model::init(cfg.clone(), 2).unwrap());
        for (name, t) in a.params.iter() {
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|v| *v == 0.0), "{name}");
            }
        }
        let input = normal_input(3, 1, 48, 64);
        let mut tape = Tape::new();
        let vars = a.bind(&mut tape, |_| false);
        let out = a.forward(&mut tape, &vars, &input).unwrap();
        assert!(tape.value(out.inv_depth).is_finite());
        for (name, v) in &out.layers {
            let s = std_dev(tape.value(*v).data());
            assert!((0.1..=10.0).contains(&s), "{:?} layer {name}: std {s}", cfg.kind);
        }
    }
}

#[test]
fn baseline_size_is_comparable() {
    let gl = Model::init(ModelConfig::default(), 0).unwrap();
    let ed = Model::init(ModelConfig::small_encdec(), 0).unwrap();
    let (a, b) = (gl.param_count() as f64, ed.param_count() as f64);
    assert!(a / b <= 2.0 && b / a <= 2.0, "{a} vs {b}");
    let out = ed.predict(&normal_input(0, 1, 48, 64)).unwrap();
    assert_eq!(out.len(), 48 * 64);
}

#[test]
fn every_variant_runs() {
    for v in Variant::ALL {
        let cfg = ModelConfig {
            variant: v,
            ..ModelConfig::default()
        };
        let m = Model::init(cfg, 0).unwrap();
        let out = m.predict(&normal_input(0, 1, 16, 32)).unwrap();
        assert_eq!(out.len(), 16 * 32);
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    let bad = ModelConfig {
        variant: Variant::NoFlow,
        ..ModelConfig::small_encdec()
    };
    assert!(matches!(bad.validate(), Err(Error::Field { ref field, .. }) if field == "model.variant"));
}

#[test]
fn static_banks_ignore_the_input() {
    let cfg = ModelConfig {
        variant: Variant::NoGlobalModule,
        ..ModelConfig::default()
    };
    let m = Model::init(cfg, 0).unwrap();
    let a = m.filter_banks(&normal_input(1, 1, 16, 16)).unwrap();
    let b = m.filter_banks(&normal_input(2, 1, 16, 16)).unwrap();
    assert_eq!(a, b);
    assert!(m.global_params(&normal_input(1, 1, 16, 16)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let m = Model::init(ModelConfig::default(), 8).unwrap();
    let ck = Checkpoint {
        config_hash: "abc123".into(),
        step: 42,
        model: m.clone(),
    };
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    let input = normal_input(0, 1, 16, 16);
    let (p, q) = (m.predict(&input).unwrap(), back.model.predict(&input).unwrap());
    assert!(p.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ck");
    save_checkpoint(&path, &ck).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ck);
    assert!(matches!(load_checkpoint(&dir.path().join("nope")), Err(Error::MissingFile(_))));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    let mut v2 = bytes;
    v2[8] = 2;
    assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Format(_))));
}
