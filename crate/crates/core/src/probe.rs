//! Supervised camera-motion readout from the global parameters `g`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{quaternion_to_rotation, PoseSE3};
use crate::error::{Error, Result};
use crate::geometry::{rotation_angle_error, translation_angle_error};
use crate::linalg;
use crate::model::{kaiming_bound, uniform_tensor, Model, ModelConfig, ModelInput, ParamStore};
use crate::scene::Sample;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::training::{env_threads, ordered_map, thread_pool, EpochIter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeInit {
    Scratch,
    Pretrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeScope {
    /// Global module frozen; only the MLP learns.
    MlpOnly,
    /// Global module and MLP learn together.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProbeRegime {
    pub init: ProbeInit,
    pub scope: ProbeScope,
}

impl ProbeRegime {
    pub const ALL: [ProbeRegime; 4] = [
        ProbeRegime::new(ProbeInit::Scratch, ProbeScope::MlpOnly),
        ProbeRegime::new(ProbeInit::Pretrained, ProbeScope::MlpOnly),
        ProbeRegime::new(ProbeInit::Scratch, ProbeScope::Full),
        ProbeRegime::new(ProbeInit::Pretrained, ProbeScope::Full),
    ];

    pub const fn new(init: ProbeInit, scope: ProbeScope) -> Self {
        ProbeRegime { init, scope }
    }

    pub fn name(self) -> &'static str {
        match (self.init, self.scope) {
            (ProbeInit::Scratch, ProbeScope::MlpOnly) => "scratch-mlp",
            (ProbeInit::Pretrained, ProbeScope::MlpOnly) => "pretrained-mlp",
            (ProbeInit::Scratch, ProbeScope::Full) => "scratch-full",
            (ProbeInit::Pretrained, ProbeScope::Full) => "pretrained-full",
        }
    }
}

impl fmt::Display for ProbeRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProbeRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeRegime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown probe regime `{s}`")))
    }
}

impl Serialize for ProbeRegime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ProbeRegime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Width of both hidden layers (256, or 20 for the small variant).
    pub hidden: usize,
    pub iterations: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub leaky_slope: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 256,
            iterations: 2000,
            lr: 1e-3,
            batch_size: 16,
            leaky_slope: 0.1,
            seed: 0,
            threads: 1,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, msg: &str| Err(Error::field(format!("experiment.probe.{name}"), msg));
        if self.hidden == 0 {
            return f("hidden", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return f("lr", "must be positive and finite");
        }
        if self.batch_size == 0 {
            return f("batch_size", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return f("leaky_slope", "must lie in [0, 1)");
        }
        if self.threads == 0 {
            return f("threads", "must be at least 1");
        }
        Ok(())
    }
}

/// MLP `g → 7`: quaternion `(w, x, y, z)` then translation direction.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseProbe {
    pub leaky_slope: f64,
    pub params: ParamStore,
}

const LAYERS: usize = 3;

impl PoseProbe {
    pub fn init(input_dim: usize, hidden: usize, leaky_slope: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let dims = [input_dim, hidden, hidden, 7];
        for i in 0..LAYERS {
            let (inp, out) = (dims[i], dims[i + 1]);
            let slope = if i + 1 == LAYERS { 1.0 } else { leaky_slope };
            params.push(format!("probe.fc{i}.weight"), uniform_tensor(&mut rng, &[out, inp], kaiming_bound(inp, slope)));
            params.push(format!("probe.fc{i}.bias"), Tensor::zeros(&[out]));
        }
        PoseProbe { leaky_slope, params }
    }

    pub fn hidden(&self) -> usize {
        self.params.tensors()[0].shape()[0]
    }

    /// Record the MLP on `tape`; `vars` are the bound probe parameters.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], g: Var) -> Result<Var> {
        let mut x = g;
        for i in 0..LAYERS {
            x = tape.linear(x, vars[2 * i], vars[2 * i + 1])?;
            if i + 1 < LAYERS {
                x = tape.leaky_relu(x, self.leaky_slope);
            }
        }
        Ok(x)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    pub fn predict(&self, g: &[f64]) -> Result<[f64; 7]> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let gv = tape.constant(Tensor::vector(g.to_vec()));
        let out = self.forward(&mut tape, &vars, gv)?;
        let d = tape.value(out).data();
        Ok(std::array::from_fn(|i| d[i]))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeFile {
    leaky_slope: f64,
    params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl PoseProbe {
    pub fn to_json(&self) -> Result<String> {
        let params = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().to_vec()))
            .collect();
        Ok(serde_json::to_string(&ProbeFile {
            leaky_slope: self.leaky_slope,
            params,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ProbeFile = serde_json::from_str(text)?;
        if f.params.len() != 2 * LAYERS {
            return Err(Error::Format(format!("probe file has {} tensors, expected {}", f.params.len(), 2 * LAYERS)));
        }
        let mut params = ParamStore::default();
        for (name, shape, data) in f.params {
            params.push(name, Tensor::new(shape, data)?);
        }
        let out = params.tensors()[2 * LAYERS - 2].shape();
        if out.len() != 2 || out[0] != 7 {
            return Err(Error::Format("probe output layer must have 7 rows".into()));
        }
        Ok(PoseProbe {
            leaky_slope: f.leaky_slope,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Normalized pose from a raw probe output.
pub fn probe_to_pose(out: &[f64; 7]) -> Result<PoseSE3> {
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("non-finite probe output".into()));
    }
    let rotation = quaternion_to_rotation([out[0], out[1], out[2], out[3]])?;
    let t = [out[4], out[5], out[6]];
    let n = linalg::norm(t);
    if !(n >= 1e-8) {
        return Err(Error::Degenerate(format!("translation norm {n:e} too small")));
    }
    Ok(PoseSE3 {
        rotation,
        translation: linalg::scale(t, 1.0 / n),
    })
}

/// Regression target `(q, t/|t|)` with `q` on the hemisphere of `q_pred`.
pub fn pose_target(pose: &PoseSE3, q_pred: [f64; 4]) -> Result<[f64; 7]> {
    let mut q = pose.quaternion();
    if q.iter().zip(&q_pred).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        q = q.map(|v| -v);
    }
    let n = pose.translation_norm();
    if !(n > 0.0) {
        return Err(Error::DegenerateMotion { norm: n });
    }
    let t = linalg::scale(pose.translation, 1.0 / n);
    Ok([q[0], q[1], q[2], q[3], t[0], t[1], t[2]])
}

/// The global module a regime starts from: fresh weights for scratch,
/// the depth-task checkpoint for pretrained.
pub fn starting_model(regime: ProbeRegime, config: &ModelConfig, pretrained: Option<&Model>, seed: u64) -> Result<Model> {
    match regime.init {
        ProbeInit::Scratch => Model::init(config.clone(), seed),
        ProbeInit::Pretrained => pretrained
            .cloned()
            .ok_or_else(|| Error::config(format!("probe regime {regime} needs a depth-task checkpoint"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub rot_deg: f64,
    pub trans_deg: f64,
}

struct ProbeGrad {
    probe: Vec<Vec<f64>>,
    global: Vec<Vec<f64>>,
}

fn probe_gradient(probe: &PoseProbe, model: Option<(&Model, &[usize])>, g_fixed: Option<&[f64]>, sample: &Sample) -> Result<ProbeGrad> {
    let mut tape = Tape::new();
    let pvars = probe.bind(&mut tape, true);
    let (g, mvars) = match (model, g_fixed) {
        (_, Some(g)) => (tape.constant(Tensor::vector(g.to_vec())), None),
        (Some((m, _)), None) => {
            let vars = m.bind(&mut tape, Model::is_global_param);
            let input = ModelInput::from_sample(sample, &m.config)?;
            (m.global_forward(&mut tape, &vars, &input)?, Some(vars))
        }
        (None, None) => return Err(Error::Usage("probe gradient needs g or a model".into())),
    };
    let out = probe.forward(&mut tape, &pvars, g)?;
    let v = tape.value(out).data();
    let target = pose_target(&sample.pair.pose, [v[0], v[1], v[2], v[3]])?;
    let loss = tape.l1_to(out, target.to_vec())?;
    let mut grads = tape.backward(loss)?;
    let take = |grads: &mut crate::tensor::Gradients, vars: &[Var], ts: &[&Tensor]| -> Vec<Vec<f64>> {
        vars.iter().zip(ts).map(|(v, t)| grads.take(*v).unwrap_or_else(|| vec![0.0; t.len()])).collect()
    };
    let pt: Vec<&Tensor> = probe.params.tensors().iter().collect();
    let probe_g = take(&mut grads, &pvars, &pt);
    let global_g = match (model, mvars) {
        (Some((m, idx)), Some(vars)) => {
            let sel: Vec<Var> = idx.iter().map(|&i| vars[i]).collect();
            let ts: Vec<&Tensor> = idx.iter().map(|&i| &m.params.tensors()[i]).collect();
            take(&mut grads, &sel, &ts)
        }
        _ => Vec::new(),
    };
    Ok(ProbeGrad {
        probe: probe_g,
        global: global_g,
    })
}

fn mean_grads<'a>(parts: impl Iterator<Item = &'a Vec<Vec<f64>>>, n: usize) -> Vec<Vec<f64>> {
    let mut acc: Vec<Vec<f64>> = Vec::new();
    for g in parts {
        if acc.is_empty() {
            acc = g.clone();
        } else {
            for (a, b) in acc.iter_mut().zip(g) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().flatten().for_each(|x| *x *= inv);
    acc
}

/// Train a fresh probe on `g` of `model` with an L1 pose loss. In the full
/// scope the global-module weights of `model` are updated as well; in the
/// mlp-only scope `model` is left untouched.
pub fn train_pose_probe(model: &mut Model, regime: ProbeRegime, train_set: &[Sample], cfg: &ProbeConfig) -> Result<PoseProbe> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("empty probe training set".into()));
    }
    let mut probe = PoseProbe::init(model.config.global_dim, cfg.hidden, cfg.leaky_slope, cfg.seed);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut probe_adam = AdamState::new(adam_cfg, probe.params.tensors().iter().map(|t| t.len()));
    let global_idx: Vec<usize> = (0..model.params.len()).filter(|&i| Model::is_global_param(&model.params.names()[i])).collect();
    let global_names: Vec<String> = global_idx.iter().map(|&i| model.params.names()[i].clone()).collect();
    let mut global_adam = AdamState::new(adam_cfg, global_idx.iter().map(|&i| model.params.tensors()[i].len()));
    let pool = thread_pool(env_threads(cfg.threads))?;
    // frozen scope: g never changes, so compute it once
    let cached: Option<Vec<Vec<f64>>> = match regime.scope {
        ProbeScope::MlpOnly => Some(ordered_map(&pool, train_set, |s| model.global_params(&ModelInput::from_sample(s, &model.config)?))?),
        ProbeScope::Full => None,
    };
    let mut batches = EpochIter::new(train_set.len(), cfg.seed);
    for _ in 0..cfg.iterations {
        let idx = batches.batch(cfg.batch_size);
        let m: &Model = model;
        let results = ordered_map(&pool, &idx, |&i| match &cached {
            Some(gs) => probe_gradient(&probe, None, Some(&gs[i]), &train_set[i]),
            None => probe_gradient(&probe, Some((m, &global_idx)), None, &train_set[i]),
        })?;
        let n = results.len();
        let pg = mean_grads(results.iter().map(|r| &r.probe), n);
        let (tensors, names) = probe.params.split_mut();
        probe_adam.step(tensors, &pg, names)?;
        if regime.scope == ProbeScope::Full {
            let gg = mean_grads(results.iter().map(|r| &r.global), n);
            let mut ts: Vec<Tensor> = global_idx.iter().map(|&i| model.params.tensors()[i].clone()).collect();
            global_adam.step(&mut ts, &gg, &global_names)?;
            for (&i, t) in global_idx.iter().zip(ts) {
                model.params.tensors_mut()[i] = t;
            }
        }
    }
    Ok(probe)
}

/// Pose predicted for `sample` by `probe` on top of `model`'s global module.
pub fn predict_pose(probe: &PoseProbe, model: &Model, sample: &Sample) -> Result<PoseSE3> {
    let g = model.global_params(&ModelInput::from_sample(sample, &model.config)?)?;
    probe_to_pose(&probe.predict(&g)?)
}

/// Mean rotation and translation-direction errors, in degrees.
pub fn eval_pose_probe(probe: &PoseProbe, model: &Model, test_set: &[Sample]) -> Result<PoseErrors> {
    let poses = test_set.iter().map(|s| predict_pose(probe, model, s)).collect::<Result<Vec<_>>>()?;
    pose_errors(&poses, test_set)
}

pub fn pose_errors(predicted: &[PoseSE3], test_set: &[Sample]) -> Result<PoseErrors> {
    if test_set.is_empty() || predicted.len() != test_set.len() {
        return Err(Error::Usage("pose evaluation needs one prediction per test sample".into()));
    }
    let (mut r, mut t) = (0.0, 0.0);
    for (p, s) in predicted.iter().zip(test_set) {
        r += rotation_angle_error(&p.rotation, &s.pair.pose.rotation);
        t += translation_angle_error(p.translation, s.pair.pose.translation)?;
    }
    let n = test_set.len() as f64;
    Ok(PoseErrors {
        rot_deg: r / n,
        trans_deg: t / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DataConfig;
    use crate::training::generate_set;

    fn data() -> DataConfig {
        DataConfig {
            width: 16,
            height: 16,
            ..DataConfig::default()
        }
    }

    #[test]
    fn regime_names_round_trip() {
        for r in ProbeRegime::ALL {
            assert_eq!(r.name().parse::<ProbeRegime>().unwrap(), r);
        }
        assert!("pretrained".parse::<ProbeRegime>().is_err());
        let json = serde_json::to_string(&ProbeRegime::ALL[1]).unwrap();
        assert_eq!(json, "\"pretrained-mlp\"");
    }

    #[test]
    fn quaternion_outputs_map_to_rotations() {
        let id = probe_to_pose(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(id.rotation, linalg::IDENTITY3);
        assert_eq!(id.translation, [0.0, 0.0, 1.0]);
        let z = probe_to_pose(&[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let expect = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((z.rotation[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
        let q = [0.3, -0.2, 0.5, 0.1];
        let a = probe_to_pose(&[q[0], q[1], q[2], q[3], 1.0, 1.0, 1.0]).unwrap();
        let b = probe_to_pose(&[-q[0], -q[1], -q[2], -q[3], 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(a.rotation, b.rotation);
        assert!(matches!(probe_to_pose(&[1e-9, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn exact_and_rotated_predictions() {
        let set = generate_set(&data(), 5, 3).unwrap();
        let exact: Vec<PoseSE3> = set.iter().map(|s| s.pair.pose).collect();
        let e = pose_errors(&exact, &set).unwrap();
        assert!(e.rot_deg < 1e-6 && e.trans_deg < 1e-6);
        let off: Vec<PoseSE3> = set
            .iter()
            .map(|s| PoseSE3 {
                rotation: linalg::mat_mul(&linalg::axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2), &s.pair.pose.rotation),
                translation: s.pair.pose.translation,
            })
            .collect();
        let e = pose_errors(&off, &set).unwrap();
        assert!((e.rot_deg - 90.0).abs() < 1e-6, "{}", e.rot_deg);
    }

    #[test]
    fn pretrained_regime_needs_a_checkpoint() {
        let r = ProbeRegime::new(ProbeInit::Pretrained, ProbeScope::Full);
        assert!(matches!(starting_model(r, &ModelConfig::default(), None, 0), Err(Error::Config(_))));
        assert!(starting_model(ProbeRegime::ALL[0], &ModelConfig::default(), None, 0).is_ok());
    }

    #[test]
    fn zero_iterations_give_the_initial_probe() {
        let set = generate_set(&data(), 1, 2).unwrap();
        let mut m = Model::init(ModelConfig::default(), 0).unwrap();
        let cfg = ProbeConfig {
            iterations: 0,
            hidden: 20,
            ..ProbeConfig::default()
        };
        let p = train_pose_probe(&mut m, ProbeRegime::ALL[2], &set, &cfg).unwrap();
        assert_eq!(p, PoseProbe::init(6, 20, 0.1, 0));
        assert_eq!(PoseProbe::from_json(&p.to_json().unwrap()).unwrap(), p);
    }

    #[test]
    fn mlp_only_freezes_the_global_module() {
        let set = generate_set(&data(), 2, 4).unwrap();
        let mut m = Model::init(ModelConfig::default(), 3).unwrap();
        let before = m.clone();
        let g_before: Vec<Vec<f64>> = set.iter().map(|s| m.global_params(&ModelInput::from_sample(s, &m.config).unwrap()).unwrap()).collect();
        let cfg = ProbeConfig {
            iterations: 5,
            batch_size: 2,
            hidden: 20,
            ..ProbeConfig::default()
        };
        train_pose_probe(&mut m, ProbeRegime::ALL[1], &set, &cfg).unwrap();
        assert_eq!(m, before);
        let g_after: Vec<Vec<f64>> = set.iter().map(|s| m.global_params(&ModelInput::from_sample(s, &m.config).unwrap()).unwrap()).collect();
        assert_eq!(g_before, g_after);
        // the full scope does move the global weights, and only those
        train_pose_probe(&mut m, ProbeRegime::ALL[3], &set, &cfg).unwrap();
        for (name, t) in m.params.iter() {
            let changed = t != before.params.get(name).unwrap();
            assert_eq!(changed, Model::is_global_param(name), "{name}");
        }
    }

    #[test]
    fn constant_pose_is_learned_to_within_a_degree() {
        let mut set = generate_set(&data(), 4, 8).unwrap();
        let pose = set[0].pair.pose;
        set.iter_mut().for_each(|s| s.pair.pose = pose);
        let mut m = Model::init(ModelConfig::default(), 0).unwrap();
        let cfg = ProbeConfig {
            iterations: 400,
            batch_size: 4,
            hidden: 20,
            ..ProbeConfig::default()
        };
        let p = train_pose_probe(&mut m, ProbeRegime::ALL[0], &set, &cfg).unwrap();
        let e = eval_pose_probe(&p, &m, &set).unwrap();
        assert!(e.rot_deg < 1.0 && e.trans_deg < 1.0, "{e:?}");
    }
}
