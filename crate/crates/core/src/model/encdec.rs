//! Small encoder-decoder baseline with skip connections.

use rand_chacha::ChaCha8Rng;

use super::{kaiming_bound, uniform_tensor, Forward, Model, ModelConfig, ModelInput, ParamStore};
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

fn input_channels(cfg: &ModelConfig) -> usize {
    2 * cfg.image_channels + 2
}

/// `(in, out, kernel)` of every convolution, encoder first.
fn layers(cfg: &ModelConfig) -> Vec<(String, usize, usize, usize)> {
    let cin = input_channels(cfg);
    let enc = &cfg.encdec_channels;
    let mut out = Vec::new();
    let mut inp = cin;
    for (i, (&c, &k)) in enc.iter().zip(&cfg.encdec_kernels).enumerate() {
        out.push((format!("enc{i}"), inp, c, k));
        inp = c;
    }
    // decoder mirrors the encoder widths; each stage upsamples, concatenates
    // the encoder output (or the raw input) at that resolution, then convolves
    let n = enc.len();
    for j in 0..n {
        let width = enc[n - 1 - j];
        let skip = if j + 1 < n { enc[n - 2 - j] } else { cin };
        out.push((format!("dec{j}"), inp + skip, width, 3));
        inp = width;
    }
    out.push(("out".into(), inp, 1, 3));
    out
}

pub(super) fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut p = ParamStore::default();
    for (name, inp, out, k) in layers(cfg) {
        let slope = if name == "out" { 1.0 } else { cfg.leaky_slope };
        p.push(format!("{name}.weight"), uniform_tensor(rng, &[out, inp, k, k], kaiming_bound(inp * k * k, slope)));
        p.push(format!("{name}.bias"), Tensor::zeros(&[out]));
    }
    p
}

pub(super) fn forward(model: &Model, tape: &mut Tape, vars: &[Var], input: &ModelInput) -> Result<Forward> {
    let cfg = &model.config;
    let i1 = tape.constant(input.image1.clone());
    let i2 = tape.constant(input.image2.clone());
    let fl = tape.constant(input.flow.clone());
    let x0 = tape.concat_channels(&[i1, i2, fl])?;
    let conv = |tape: &mut Tape, name: &str, x: Var, stride: usize| -> Result<Var> {
        let w = model.var(vars, &format!("{name}.weight"))?;
        let b = model.var(vars, &format!("{name}.bias"))?;
        tape.conv2d(x, w, b, stride)
    };
    let mut trace = Vec::new();
    let mut skips = vec![x0];
    let mut x = x0;
    let n = cfg.encdec_channels.len();
    for i in 0..n {
        let c = conv(tape, &format!("enc{i}"), x, 2)?;
        x = tape.leaky_relu(c, cfg.leaky_slope);
        trace.push((format!("enc{i}"), x));
        skips.push(x);
    }
    skips.pop();
    for j in 0..n {
        let skip = skips.pop().expect("one skip per decoder stage");
        let (_, sh, sw) = tape.value(skip).dims3()?;
        let up = tape.upsample2x(x, sh, sw)?;
        let cat = tape.concat_channels(&[up, skip])?;
        let c = conv(tape, &format!("dec{j}"), cat, 1)?;
        x = tape.leaky_relu(c, cfg.leaky_slope);
        trace.push((format!("dec{j}"), x));
    }
    let z = conv(tape, "out", x, 1)?;
    Ok(Forward {
        inv_depth: z,
        global: None,
        banks: None,
        layers: trace,
    })
}
