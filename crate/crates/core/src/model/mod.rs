//! The global-local depth network and the Small Enc-Dec baseline.
//!
//! Both models keep their weights in a [`ParamStore`] of named tensors. A
//! forward pass first binds the store onto a [`Tape`] (as trainable leaves
//! or constants) and then records the network on that tape, so the same code
//! serves inference, training and gradient checks.

mod checkpoint;
mod encdec;
mod global_local;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use global_local::{coord_channels, filter_bank_len, BankShape};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scene::Sample;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    GlobalLocal,
    SmallEncDec,
}

/// Ablations of the global-local model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// The global module sees only the flow.
    NoImagePair,
    /// No coordinate channels in the local network input.
    NoCoordconv,
    /// Filter banks are learned directly instead of generated.
    NoGlobalModule,
    /// Images replace the flow everywhere.
    NoFlow,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoImagePair,
        Variant::NoCoordconv,
        Variant::NoGlobalModule,
        Variant::NoFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoImagePair => "no-image-pair",
            Variant::NoCoordconv => "no-coordconv",
            Variant::NoGlobalModule => "no-global-module",
            Variant::NoFlow => "no-flow",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub variant: Variant,
    /// Channels per image; must match the data.
    pub image_channels: usize,
    pub leaky_slope: f64,
    /// Global encoder widths; every layer but the last has stride 2.
    pub global_channels: Vec<usize>,
    pub global_dim: usize,
    /// Output channels of the generated filter banks.
    pub local_channels: Vec<usize>,
    pub encdec_channels: Vec<usize>,
    pub encdec_kernels: Vec<usize>,
    /// Flow enters the network divided by the image width (so in units of
    /// the nominal focal length) and then multiplied by this.
    pub flow_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::GlobalLocal,
            variant: Variant::Full,
            image_channels: 1,
            leaky_slope: 0.1,
            global_channels: vec![16, 32, 64, 128, 256],
            global_dim: 6,
            local_channels: vec![20, 10, 20],
            encdec_channels: vec![16, 32, 64, 128],
            encdec_kernels: vec![7, 5, 3, 3],
            flow_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn small_encdec() -> Self {
        ModelConfig {
            kind: ModelKind::SmallEncDec,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, msg: &str| Err(Error::field(format!("model.{name}"), msg));
        if self.image_channels == 0 {
            return f("image_channels", "must be at least 1");
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return f("leaky_slope", "must lie in [0, 1)");
        }
        if self.global_channels.is_empty() || self.global_channels.contains(&0) {
            return f("global_channels", "needs at least one positive width");
        }
        if self.global_dim == 0 {
            return f("global_dim", "must be positive");
        }
        if self.local_channels.is_empty() || self.local_channels.contains(&0) {
            return f("local_channels", "needs at least one positive width");
        }
        if self.encdec_channels.is_empty() || self.encdec_channels.contains(&0) {
            return f("encdec_channels", "needs at least one positive width");
        }
        if self.encdec_kernels.len() != self.encdec_channels.len() || self.encdec_kernels.iter().any(|k| k % 2 == 0) {
            return f("encdec_kernels", "one odd kernel size per encoder layer");
        }
        if !(self.flow_scale.is_finite() && self.flow_scale != 0.0) {
            return f("flow_scale", "must be finite and nonzero");
        }
        if self.kind == ModelKind::SmallEncDec && self.variant != Variant::Full {
            return f("variant", "ablations apply to the global-local model only");
        }
        Ok(())
    }

    /// Spatial dimensions must be divisible by this.
    pub fn resolution_multiple(&self) -> usize {
        match self.kind {
            ModelKind::GlobalLocal => 1 << (self.global_channels.len() - 1),
            ModelKind::SmallEncDec => 1 << self.encdec_channels.len(),
        }
    }

    pub fn check_resolution(&self, width: usize, height: usize) -> Result<()> {
        let m = self.resolution_multiple();
        if !width.is_multiple_of(m) || !height.is_multiple_of(m) || width == 0 || height == 0 {
            return Err(Error::config(format!(
                "resolution {width}x{height} is not divisible by {m}"
            )));
        }
        Ok(())
    }
}

/// Ordered, named weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Mutable tensors together with their names.
    pub fn split_mut(&mut self) -> (&mut [Tensor], &[String]) {
        (&mut self.tensors, &self.names)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// Inputs to either model, already converted to tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub image1: Tensor,
    pub image2: Tensor,
    /// `[2, H, W]` flow divided by the width, times the model's flow scale.
    pub flow: Tensor,
}

impl ModelInput {
    pub fn new(image1: &Raster, image2: &Raster, flow: &Raster, flow_scale: f64) -> Result<Self> {
        if flow.channels != 2 {
            return Err(Error::Usage("flow raster must have 2 channels".into()));
        }
        let same = |r: &Raster| r.width == flow.width && r.height == flow.height;
        if !same(image1) || !same(image2) || image1.channels != image2.channels {
            return Err(Error::Usage("images and flow must share one resolution".into()));
        }
        let k = flow_scale / flow.width as f64;
        let mut f = flow.to_tensor();
        f.data_mut().iter_mut().for_each(|v| *v *= k);
        Ok(ModelInput {
            image1: image1.to_tensor(),
            image2: image2.to_tensor(),
            flow: f,
        })
    }

    /// Images of the pair and the (possibly corrupted) flow the sample carries.
    pub fn from_sample(sample: &Sample, cfg: &ModelConfig) -> Result<Self> {
        Self::new(&sample.pair.image1, &sample.pair.image2, &sample.flow_input, cfg.flow_scale)
    }

    pub fn height(&self) -> usize {
        self.flow.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.flow.shape()[2]
    }
}

/// Nodes recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[1, H, W]` inverse depth.
    pub inv_depth: Var,
    /// The global parameter vector, when the model has one.
    pub global: Option<Var>,
    /// Flattened filter banks of the local network.
    pub banks: Option<Var>,
    /// Every hidden layer output, in order, for diagnostics.
    pub layers: Vec<(String, Var)>,
}

/// A depth network: config plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Kaiming-uniform bound for `fan_in` inputs followed by a leaky ReLU.
pub(crate) fn kaiming_bound(fan_in: usize, slope: f64) -> f64 {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    gain * (3.0 / fan_in as f64).sqrt()
}

pub(crate) fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

impl Model {
    /// Fresh weights: Kaiming-uniform fan-in scaling, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match config.kind {
            ModelKind::GlobalLocal => global_local::init(&config, &mut rng),
            ModelKind::SmallEncDec => encdec::init(&config, &mut rng),
        };
        let mut model = Model { config, params };
        if model.config.kind == ModelKind::GlobalLocal && model.config.variant != Variant::NoGlobalModule {
            global_local::calibrate_perceptron(&mut model, &mut rng)?;
        }
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Put every parameter on the tape; `trainable` decides leaf vs constant.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(name, t)| {
                if trainable(name) {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub(crate) fn var(&self, vars: &[Var], name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| vars[i])
            .ok_or_else(|| Error::config(format!("model has no parameter `{name}`")))
    }

    /// Record the network on `tape` with weights `vars` (from [`Model::bind`]).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: &ModelInput) -> Result<Forward> {
        self.config.check_resolution(input.width(), input.height())?;
        if input.image1.shape()[0] != self.config.image_channels {
            return Err(Error::config(format!(
                "model expects {} image channels, input has {}",
                self.config.image_channels,
                input.image1.shape()[0]
            )));
        }
        match self.config.kind {
            ModelKind::GlobalLocal => global_local::forward(self, tape, vars, input),
            ModelKind::SmallEncDec => encdec::forward(self, tape, vars, input),
        }
    }

    /// Only the global module, for the pose probe. Fails on models without one.
    pub fn global_forward(&self, tape: &mut Tape, vars: &[Var], input: &ModelInput) -> Result<Var> {
        if self.config.kind != ModelKind::GlobalLocal || self.config.variant == Variant::NoGlobalModule {
            return Err(Error::config("model has no global module"));
        }
        self.config.check_resolution(input.width(), input.height())?;
        global_local::global_forward(self, tape, vars, input, &mut Vec::new())
    }

    /// Inverse-depth prediction, row-major `H·W`.
    pub fn predict(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, |_| false);
        let out = self.forward(&mut tape, &vars, input)?;
        Ok(tape.value(out.inv_depth).data().to_vec())
    }

    pub fn global_params(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, |_| false);
        let g = self.global_forward(&mut tape, &vars, input)?;
        Ok(tape.value(g).data().to_vec())
    }

    /// Flattened filter banks the local network uses for `input`, in the
    /// order w1, b1, w2, b2, w3, b3.
    pub fn filter_banks(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, |_| false);
        let out = self.forward(&mut tape, &vars, input)?;
        let banks = out.banks.ok_or_else(|| Error::config("model has no filter banks"))?;
        Ok(tape.value(banks).data().to_vec())
    }

    /// Shapes of the local network's convolutions (generated or static).
    pub fn bank_shapes(&self) -> Vec<BankShape> {
        global_local::banks(&self.config)
    }

    /// Names of global-module parameters (frozen in probe mlp-only regimes).
    pub fn is_global_param(name: &str) -> bool {
        name.starts_with("global.")
    }
}

#[cfg(test)]
mod tests;
