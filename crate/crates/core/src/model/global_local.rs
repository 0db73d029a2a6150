use rand_chacha::ChaCha8Rng;

use super::{kaiming_bound, uniform_tensor, Forward, Model, ModelConfig, ModelInput, ParamStore, Variant};
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// One generated convolution: `[out, inp, 3, 3]` weights and `[out]` bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankShape {
    pub out: usize,
    pub inp: usize,
}

impl BankShape {
    pub fn weights(self) -> usize {
        self.out * self.inp * 9
    }

    /// Generated values: weights plus biases.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        self.weights() + self.out
    }
}

/// Channels entering the local network.
pub(crate) fn local_input_channels(cfg: &ModelConfig) -> usize {
    let base = match cfg.variant {
        Variant::NoFlow => 2 * cfg.image_channels,
        _ => 2,
    };
    base + if cfg.variant == Variant::NoCoordconv { 0 } else { 2 }
}

fn global_input_channels(cfg: &ModelConfig) -> usize {
    match cfg.variant {
        Variant::NoImagePair => 2,
        Variant::NoFlow => 2 * cfg.image_channels,
        _ => 2 * cfg.image_channels + 2,
    }
}

pub(crate) fn banks(cfg: &ModelConfig) -> Vec<BankShape> {
    let mut inp = local_input_channels(cfg);
    cfg.local_channels
        .iter()
        .map(|&out| {
            let b = BankShape { out, inp };
            inp = out;
            b
        })
        .collect()
}

/// Perceptron output size `N_F` for `cfg`.
pub fn filter_bank_len(cfg: &ModelConfig) -> usize {
    banks(cfg).iter().map(|b| b.len()).sum()
}

/// x and y coordinates spanning `[-1, 1]` across width and height.
pub fn coord_channels(height: usize, width: usize) -> Tensor {
    let lin = |i: usize, n: usize| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut data = Vec::with_capacity(2 * height * width);
    for _y in 0..height {
        data.extend((0..width).map(|x| lin(x, width)));
    }
    for y in 0..height {
        data.extend(std::iter::repeat_n(lin(y, height), width));
    }
    Tensor::new(vec![2, height, width], data).expect("coordinate shape")
}

pub(super) fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut p = ParamStore::default();
    let slope = cfg.leaky_slope;
    if cfg.variant != Variant::NoGlobalModule {
        let mut inp = global_input_channels(cfg);
        for (i, &out) in cfg.global_channels.iter().enumerate() {
            p.push(format!("global.conv{i}.weight"), uniform_tensor(rng, &[out, inp, 3, 3], kaiming_bound(inp * 9, slope)));
            p.push(format!("global.conv{i}.bias"), Tensor::zeros(&[out]));
            inp = out;
        }
        let d = cfg.global_dim;
        p.push("global.out.weight", uniform_tensor(rng, &[d, inp, 3, 3], kaiming_bound(inp * 9, 1.0)));
        p.push("global.out.bias", Tensor::zeros(&[d]));
    }
    let shapes = banks(cfg);
    let nf: usize = shapes.iter().map(|b| b.len()).sum();
    if cfg.variant == Variant::NoGlobalModule {
        // static banks drawn as an ordinary convolution stack would be
        let mut data = Vec::with_capacity(nf);
        for b in &shapes {
            data.extend(uniform_tensor(rng, &[b.weights()], kaiming_bound(b.inp * 9, slope)).into_data());
            data.extend(std::iter::repeat_n(0.0, b.out));
        }
        p.push("local.banks", Tensor::vector(data));
    } else {
        // Each generated weight is a sum over the global_dim entries of g, so
        // the perceptron row for a bank with fan-in n gets the bound of a
        // layer with fan-in n·global_dim (hyper-fan-in scaling).
        let d = cfg.global_dim;
        let mut w = Vec::with_capacity(nf * d);
        for b in &shapes {
            let bound = kaiming_bound(b.inp * 9 * d, slope);
            w.extend(uniform_tensor(rng, &[b.len() * d], bound).into_data());
        }
        p.push("local.perceptron.weight", Tensor::new(vec![nf, d], w).expect("perceptron shape"));
        p.push("local.perceptron.bias", Tensor::zeros(&[nf]));
    }
    let last = *cfg.local_channels.last().expect("validated non-empty");
    p.push("local.head.weight", uniform_tensor(rng, &[1, last, 3, 3], kaiming_bound(last * 9, 1.0)));
    p.push("local.head.bias", Tensor::zeros(&[1]));
    p
}

/// Global pooling shrinks `g` well below unit scale, which would leave the
/// generated banks far smaller than their fan-in calls for. Measure the RMS
/// of `g` on a unit-variance calibration input and divide the perceptron
/// weights by it.
pub(super) fn calibrate_perceptron(model: &mut Model, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = &model.config;
    let side = 2 * cfg.resolution_multiple().max(16);
    let c = global_input_channels(cfg);
    let probe = uniform_tensor(rng, &[c, side, side], 3f64.sqrt());
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, |_| false);
    let mut parts = probe.data().chunks(side * side);
    let mut take = |n: usize| {
        let d: Vec<f64> = parts.by_ref().take(n).flatten().copied().collect();
        Tensor::new(vec![n, side, side], d).expect("calibration shape")
    };
    let ic = cfg.image_channels;
    let input = match cfg.variant {
        Variant::NoImagePair => ModelInput {
            image1: Tensor::zeros(&[ic, side, side]),
            image2: Tensor::zeros(&[ic, side, side]),
            flow: take(2),
        },
        Variant::NoFlow => ModelInput {
            image1: take(ic),
            image2: take(ic),
            flow: Tensor::zeros(&[2, side, side]),
        },
        _ => ModelInput {
            image1: take(ic),
            image2: take(ic),
            flow: take(2),
        },
    };
    let g = global_forward(model, &mut tape, &vars, &input, &mut Vec::new())?;
    let gv = tape.value(g).data();
    let rms = (gv.iter().map(|x| x * x).sum::<f64>() / gv.len() as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        let i = model.params.position("local.perceptron.weight").expect("global-local layout");
        model.params.tensors_mut()[i].data_mut().iter_mut().for_each(|w| *w /= rms);
    }
    Ok(())
}

pub(super) fn global_forward(
    model: &Model,
    tape: &mut Tape,
    vars: &[Var],
    input: &ModelInput,
    layers: &mut Vec<(String, Var)>,
) -> Result<Var> {
    let cfg = &model.config;
    let i1 = tape.constant(input.image1.clone());
    let i2 = tape.constant(input.image2.clone());
    let fl = tape.constant(input.flow.clone());
    let parts = match cfg.variant {
        Variant::NoImagePair => vec![fl],
        Variant::NoFlow => vec![i1, i2],
        _ => vec![i1, i2, fl],
    };
    let mut x = tape.concat_channels(&parts)?;
    let n = cfg.global_channels.len();
    for i in 0..n {
        let stride = if i + 1 < n { 2 } else { 1 };
        let w = model.var(vars, &format!("global.conv{i}.weight"))?;
        let b = model.var(vars, &format!("global.conv{i}.bias"))?;
        let c = tape.conv2d(x, w, b, stride)?;
        x = tape.leaky_relu(c, cfg.leaky_slope);
        layers.push((format!("global.conv{i}"), x));
    }
    let w = model.var(vars, "global.out.weight")?;
    let b = model.var(vars, "global.out.bias")?;
    let o = tape.conv2d(x, w, b, 1)?;
    layers.push(("global.out".into(), o));
    tape.global_avg_pool(o)
}

pub(super) fn forward(model: &Model, tape: &mut Tape, vars: &[Var], input: &ModelInput) -> Result<Forward> {
    let cfg = &model.config;
    let mut layers = Vec::new();
    let (global, banks_var) = if cfg.variant == Variant::NoGlobalModule {
        (None, model.var(vars, "local.banks")?)
    } else {
        let g = global_forward(model, tape, vars, input, &mut layers)?;
        let w = model.var(vars, "local.perceptron.weight")?;
        let b = model.var(vars, "local.perceptron.bias")?;
        (Some(g), tape.linear(g, w, b)?)
    };

    let (h, w) = (input.height(), input.width());
    let mut parts = match cfg.variant {
        Variant::NoFlow => vec![tape.constant(input.image1.clone()), tape.constant(input.image2.clone())],
        _ => vec![tape.constant(input.flow.clone())],
    };
    if cfg.variant != Variant::NoCoordconv {
        parts.push(tape.constant(coord_channels(h, w)));
    }
    let mut x = tape.concat_channels(&parts)?;
    let mut offset = 0;
    for (i, b) in banks(cfg).into_iter().enumerate() {
        let wv = tape.slice(banks_var, offset, &[b.out, b.inp, 3, 3])?;
        offset += b.weights();
        let bv = tape.slice(banks_var, offset, &[b.out])?;
        offset += b.out;
        let c = tape.conv2d(x, wv, bv, 1)?;
        x = tape.leaky_relu(c, cfg.leaky_slope);
        layers.push((format!("local.bank{}", i + 1), x));
    }
    let hw = model.var(vars, "local.head.weight")?;
    let hb = model.var(vars, "local.head.bias")?;
    let z = tape.conv2d(x, hw, hb, 1)?;
    Ok(Forward {
        inv_depth: z,
        global,
        banks: Some(banks_var),
        layers,
    })
}
