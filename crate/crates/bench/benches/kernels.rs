use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sparse_depth::geometry::triangulate_depth_map;
use sparse_depth::model::{Model, ModelConfig, ModelInput};
use sparse_depth::scene::{generate_sample, DataConfig};
use sparse_depth::{Tape, Tensor};

fn ramp(shape: &[usize], step: f64) -> Tensor {
    let n = shape.iter().product::<usize>();
    Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 37 % 101) as f64 - 50.0) * step).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_fwd_bwd");
    for (ch, size) in [(16usize, 32usize), (32, 16), (64, 8)] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{ch}x{size}x{size}")), &(ch, size), |b, &(ch, size)| {
            let x = ramp(&[ch, size, size], 1e-2);
            let f = ramp(&[ch, ch, 3, 3], 1e-3);
            let bias = ramp(&[ch], 1e-3);
            b.iter(|| {
                let mut t = Tape::new();
                let (xv, fv, bv) = (t.leaf(x.clone()), t.leaf(f.clone()), t.leaf(bias.clone()));
                let y = t.conv2d(xv, fv, bv, 1).unwrap();
                let loss = t.sum(y);
                t.backward(loss).unwrap()
            })
        });
    }
    g.finish();
}

fn data(w: usize, h: usize) -> DataConfig {
    DataConfig {
        width: w,
        height: h,
        ..DataConfig::default()
    }
}

fn triangulation(c: &mut Criterion) {
    let s = generate_sample(&data(64, 48), 0, 0).unwrap();
    c.bench_function("triangulate_depth_map_64x48", |b| {
        b.iter(|| triangulate_depth_map(&s.pair.flow, &s.pair.intrinsics1, &s.pair.intrinsics2, &s.pair.pose).unwrap())
    });
}

fn scene(c: &mut Criterion) {
    let cfg = data(64, 48);
    let mut i = 0;
    c.bench_function("generate_sample_64x48", |b| {
        b.iter(|| {
            i += 1;
            generate_sample(&cfg, 0, i).unwrap()
        })
    });
}

fn forward(c: &mut Criterion) {
    let s = generate_sample(&data(32, 32), 0, 0).unwrap();
    let mut g = c.benchmark_group("model_predict_32x32");
    for config in [ModelConfig::default(), ModelConfig::small_encdec()] {
        let kind = config.kind;
        let model = Model::init(config, 0).unwrap();
        let input = ModelInput::from_sample(&s, &model.config).unwrap();
        g.bench_function(format!("{kind:?}"), |b| b.iter(|| model.predict(&input).unwrap()));
    }
    g.finish();
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = conv, triangulation, scene, forward
}
criterion_main!(kernels);
