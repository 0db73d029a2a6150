//! The comparative experiments: label sparsity, intrinsics perturbation,
//! flow outliers, ablations and the pose probe.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{triangulate_depth_map, TriangulatedDepth};
use crate::metrics::{abs_inv_per_pixel, MetricsRecord, MetricsRow, INV_DEPTH_FLOOR};
use crate::model::{Model, ModelConfig, ModelKind, Variant};
use crate::probe::{eval_pose_probe, predict_pose, starting_model, train_pose_probe, PoseProbe, ProbeConfig, ProbeInit, ProbeRegime};
use crate::scene::{DataConfig, FlowCorruption, LabelCount, Sample};
use crate::training::{generate_splits, mean_of_images, predict_depth, train, RunLog, TrainConfig, TrainContext};
use crate::PoseSE3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Every experiment repeats over these seeds.
    pub seeds: Vec<u64>,
    /// Label counts of the sparsity sweep.
    pub levels: Vec<LabelCount>,
    /// Maximum relative focal/principal-point perturbation.
    pub intrinsics_maxfrac: f64,
    /// Flow noise (pixels) in both conditions of the intrinsics experiment.
    pub intrinsics_flow_sigma: f64,
    /// Corruption used to train and test the flow-robustness model.
    pub flow_corruption: FlowCorruption,
    /// Equal-count bins of the error-vs-corruption curve.
    pub flow_bins: usize,
    pub variants: Vec<Variant>,
    pub regimes: Vec<ProbeRegime>,
    pub probe: ProbeConfig,
    /// Test samples whose depth maps are dumped as PFM.
    pub dump_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0, 1, 2],
            levels: vec![
                LabelCount::Count(1),
                LabelCount::Count(4),
                LabelCount::Count(16),
                LabelCount::Count(64),
                LabelCount::Dense,
            ],
            intrinsics_maxfrac: 0.2,
            intrinsics_flow_sigma: 0.25,
            flow_corruption: FlowCorruption {
                sigma: 0.0,
                outlier_frac: 0.1,
                outlier_mag: 8.0,
            },
            flow_bins: 10,
            variants: Variant::ALL.to_vec(),
            regimes: ProbeRegime::ALL.to_vec(),
            probe: ProbeConfig::default(),
            dump_samples: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, msg: &str| Err(Error::field(format!("experiment.{name}"), msg));
        if self.seeds.is_empty() {
            return f("seeds", "needs at least one seed");
        }
        if self.levels.is_empty() {
            return f("levels", "needs at least one level");
        }
        if !(0.0..1.0).contains(&self.intrinsics_maxfrac) {
            return f("intrinsics_maxfrac", "must lie in [0, 1)");
        }
        if !(self.intrinsics_flow_sigma >= 0.0) {
            return f("intrinsics_flow_sigma", "must be non-negative");
        }
        if self.flow_bins == 0 {
            return f("flow_bins", "must be at least 1");
        }
        self.flow_corruption.validate()?;
        self.probe.validate()
    }
}

/// A trained model with its log and final test metrics.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: Model,
    pub log: RunLog,
    pub test: MetricsRecord,
}

/// Memoizes training runs so that experiments sharing a configuration
/// (the full model of the ablation and the sparse level of the sweep, say)
/// train it once.
#[derive(Default)]
pub struct RunCache {
    runs: HashMap<String, Arc<TrainedRun>>,
    /// Forwarded to [`TrainContext::progress_every`].
    pub progress_every: usize,
}

impl RunCache {
    pub fn new(progress_every: usize) -> Self {
        RunCache {
            runs: HashMap::new(),
            progress_every,
        }
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Train `model` on the splits of `data`/`train` (model weights seeded
    /// by `train.seed`), or return the earlier identical run.
    pub fn trained(&mut self, data: &DataConfig, model: &ModelConfig, train_cfg: &TrainConfig) -> Result<Arc<TrainedRun>> {
        let key = serde_json::to_string(&(data, model, train_cfg))?;
        if let Some(run) = self.runs.get(&key) {
            return Ok(run.clone());
        }
        let (tr, te) = generate_splits(data, train_cfg)?;
        if te.is_empty() {
            return Err(Error::field("train.test_samples", "experiments need a test set"));
        }
        let mut m = Model::init(model.clone(), train_cfg.seed)?;
        if self.progress_every > 0 {
            eprintln!(
                "training {:?}/{} on {} labels, seed {}",
                model.kind,
                model.variant.name(),
                data.labels,
                train_cfg.seed
            );
        }
        let ctx = TrainContext {
            progress_every: self.progress_every,
            ..TrainContext::default()
        };
        let log = train(&mut m, &tr, &te, train_cfg, &ctx)?;
        let test = log.final_test.ok_or_else(|| Error::Evaluation("run produced no test metrics".into()))?;
        let run = Arc::new(TrainedRun { model: m, log, test });
        self.runs.insert(key, run.clone());
        Ok(run)
    }
}

fn seeded(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..train.clone()
    }
}

fn global_local(cfg: &ModelConfig) -> ModelConfig {
    ModelConfig {
        kind: ModelKind::GlobalLocal,
        ..cfg.clone()
    }
}

fn small_encdec(cfg: &ModelConfig) -> ModelConfig {
    ModelConfig {
        kind: ModelKind::SmallEncDec,
        variant: Variant::Full,
        ..cfg.clone()
    }
}

pub const GLOBAL_LOCAL: &str = "global-local";
pub const SMALL_ENCDEC: &str = "small-encdec";
pub const TRIANGULATION: &str = "triangulation";
pub const TRIANGULATION_GT: &str = "triangulation-gt-pose";
pub const TRIANGULATION_PROBE: &str = "triangulation-probe-pose";

/// Median, averaging the two middle values for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Evaluation("median of nothing".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

// ---------------------------------------------------------------- sparsity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub model: String,
    pub seed: u64,
    pub level: LabelCount,
    pub metrics: MetricsRecord,
}

/// Train the global-local model and the small encoder-decoder at every
/// label level, on the same scenes for every level of a seed.
pub fn sparsity_sweep(cfg: &RunConfig, cache: &mut RunCache) -> Result<Vec<SparsityRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.experiment.seeds {
        for (name, model) in [(GLOBAL_LOCAL, global_local(&cfg.model)), (SMALL_ENCDEC, small_encdec(&cfg.model))] {
            for &level in &cfg.experiment.levels {
                let data = DataConfig {
                    labels: level,
                    ..cfg.data.clone()
                };
                let run = cache.trained(&data, &model, &seeded(&cfg.train, seed))?;
                rows.push(SparsityRow {
                    model: name.into(),
                    seed,
                    level,
                    metrics: run.test,
                });
            }
        }
    }
    Ok(rows)
}

pub fn sparsity_metric_rows(rows: &[SparsityRow]) -> Vec<MetricsRow> {
    rows.iter()
        .map(|r| MetricsRow::new(format!("{}-seed{}", r.model, r.seed), "test", r.level, &r.metrics))
        .collect()
}

/// Median over seeds of `Abs-Inv(sparse) / Abs-Inv(dense)` for `model`.
pub fn degradation_ratio(rows: &[SparsityRow], model: &str, sparse: LabelCount, dense: LabelCount) -> Result<f64> {
    let find = |seed: u64, level: LabelCount| {
        rows.iter()
            .find(|r| r.model == model && r.seed == seed && r.level == level)
            .map(|r| r.metrics.abs_inv)
            .ok_or_else(|| Error::Evaluation(format!("no {model} row for seed {seed} at level {level}")))
    };
    let mut seeds: Vec<u64> = rows.iter().filter(|r| r.model == model).map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let ratios = seeds
        .iter()
        .map(|&s| Ok(find(s, sparse)? / find(s, dense)?))
        .collect::<Result<Vec<f64>>>()?;
    median(&ratios)
}

/// Median over seeds of the Abs-Inv of `model` at `level`.
pub fn median_abs_inv(rows: &[SparsityRow], model: &str, level: LabelCount) -> Result<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.model == model && r.level == level)
        .map(|r| r.metrics.abs_inv)
        .collect();
    median(&v)
}

// -------------------------------------------------------------- intrinsics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsRow {
    pub method: String,
    /// `reference` (true intrinsics) or `perturbed`.
    pub condition: String,
    pub seed: u64,
    pub metrics: MetricsRecord,
}

/// Dense triangulation of `sample.flow_input` under `pose`, assuming the
/// nominal intrinsics for both views.
pub fn triangulate_sample(sample: &Sample, pose: &PoseSE3) -> Result<TriangulatedDepth> {
    let k = &sample.nominal_intrinsics;
    triangulate_depth_map(&sample.flow_input, k, k, pose)
}

fn triangulation_metrics(test: &[Sample]) -> Result<MetricsRecord> {
    let per = test
        .iter()
        .map(|s| {
            let t = triangulate_sample(s, &s.pair.pose)?;
            MetricsRecord::compute(&s.pair.depth1.data, &t.depth_raster(INV_DEPTH_FLOOR).data, None)
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of_images(&per)
}

/// The global-local model (trained on data with the same perturbation) and
/// triangulation with the nominal intrinsics, with and without random
/// per-view intrinsics perturbation.
pub fn intrinsics_robustness(cfg: &RunConfig, cache: &mut RunCache) -> Result<Vec<IntrinsicsRow>> {
    let e = &cfg.experiment;
    let model = global_local(&cfg.model);
    let mut rows = Vec::new();
    for &seed in &e.seeds {
        for (condition, frac) in [("reference", 0.0), ("perturbed", e.intrinsics_maxfrac)] {
            let data = DataConfig {
                intrinsics_perturbation: frac,
                flow_corruption: FlowCorruption {
                    sigma: e.intrinsics_flow_sigma,
                    outlier_frac: 0.0,
                    outlier_mag: 0.0,
                },
                ..cfg.data.clone()
            };
            let train_cfg = seeded(&cfg.train, seed);
            let run = cache.trained(&data, &model, &train_cfg)?;
            let (_, test) = generate_splits(
                &data,
                &TrainConfig {
                    train_samples: 0,
                    ..train_cfg
                },
            )?;
            rows.push(IntrinsicsRow {
                method: GLOBAL_LOCAL.into(),
                condition: condition.into(),
                seed,
                metrics: run.test,
            });
            rows.push(IntrinsicsRow {
                method: TRIANGULATION.into(),
                condition: condition.into(),
                seed,
                metrics: triangulation_metrics(&test)?,
            });
        }
    }
    Ok(rows)
}

pub fn intrinsics_metric_rows(rows: &[IntrinsicsRow]) -> Vec<MetricsRow> {
    rows.iter()
        .map(|r| MetricsRow::new(format!("{}-seed{}", r.method, r.seed), &r.condition, "", &r.metrics))
        .collect()
}

/// Relative Abs-Inv increase `perturbed / reference − 1` of `method`, per seed.
pub fn relative_increase(rows: &[IntrinsicsRow], method: &str) -> Result<Vec<f64>> {
    let mut seeds: Vec<u64> = rows.iter().filter(|r| r.method == method).map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    seeds
        .iter()
        .map(|&s| {
            let get = |c: &str| {
                rows.iter()
                    .find(|r| r.method == method && r.seed == s && r.condition == c)
                    .map(|r| r.metrics.abs_inv)
                    .ok_or_else(|| Error::Evaluation(format!("no {c} row for {method}, seed {s}")))
            };
            Ok(get("perturbed")? / get("reference")? - 1.0)
        })
        .collect()
}

// -------------------------------------------------------------------- flow

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowBinRow {
    pub method: String,
    pub seed: u64,
    pub bin: usize,
    /// Mean corruption magnitude in the bin, pixels.
    pub flow_error_px: f64,
    /// The same, divided by the image width.
    pub flow_error_norm: f64,
    /// Mean per-pixel `|1/d − 1/d̂|`.
    pub abs_inv: f64,
    pub pixels: usize,
}

/// Per-pixel error pooled over a test set, with its corruption magnitude.
#[derive(Clone, Debug, Default)]
pub struct PixelErrors {
    pub flow_error: Vec<f64>,
    pub abs_inv: Vec<f64>,
}

impl PixelErrors {
    pub fn push(&mut self, sample: &Sample, d_hat: &[f64]) -> Result<()> {
        let e = abs_inv_per_pixel(&sample.pair.depth1.data, d_hat)?;
        self.flow_error.extend_from_slice(&sample.flow_error);
        self.abs_inv.extend(e);
        Ok(())
    }
}

/// `(mean corruption, mean error, count)` of `bins` equal-count bins in
/// order of increasing corruption; ties keep pixel order.
pub fn bin_by_flow_error(errors: &PixelErrors, bins: usize) -> Result<Vec<(f64, f64, usize)>> {
    let n = errors.abs_inv.len();
    if n < bins || bins == 0 || errors.flow_error.len() != n {
        return Err(Error::Evaluation(format!("cannot split {n} pixels into {bins} bins")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors.flow_error[a].total_cmp(&errors.flow_error[b]));
    Ok((0..bins)
        .map(|b| {
            let idx = &order[b * n / bins..(b + 1) * n / bins];
            let m = idx.len() as f64;
            let fe = idx.iter().map(|&i| errors.flow_error[i]).sum::<f64>() / m;
            let ae = idx.iter().map(|&i| errors.abs_inv[i]).sum::<f64>() / m;
            (fe, ae, idx.len())
        })
        .collect())
}

/// Error-vs-corruption curves of the global-local model trained on
/// corrupted flow, and of triangulation with the true pose and with the
/// pose read out by a pretrained-MLP probe.
pub fn flow_robustness(cfg: &RunConfig, cache: &mut RunCache) -> Result<Vec<FlowBinRow>> {
    let e = &cfg.experiment;
    let model_cfg = global_local(&cfg.model);
    let data = DataConfig {
        flow_corruption: e.flow_corruption,
        ..cfg.data.clone()
    };
    let mut rows = Vec::new();
    for &seed in &e.seeds {
        let train_cfg = seeded(&cfg.train, seed);
        let run = cache.trained(&data, &model_cfg, &train_cfg)?;
        let (train_set, test) = generate_splits(&data, &train_cfg)?;
        let mut depth_model = run.model.clone();
        let probe_cfg = ProbeConfig {
            seed,
            ..e.probe.clone()
        };
        let regime = ProbeRegime::ALL[1];
        let probe = train_pose_probe(&mut depth_model, regime, &train_set, &probe_cfg)?;
        drop(train_set);

        let mut errs: [PixelErrors; 3] = Default::default();
        for s in &test {
            errs[0].push(s, &predict_depth(&run.model, s)?)?;
            let gt = triangulate_sample(s, &s.pair.pose)?;
            errs[1].push(s, &gt.depth_raster(INV_DEPTH_FLOOR).data)?;
            let pose = predict_pose(&probe, &run.model, s)?;
            let est = triangulate_sample(s, &pose)?;
            errs[2].push(s, &est.depth_raster(INV_DEPTH_FLOOR).data)?;
        }
        for (method, err) in [GLOBAL_LOCAL, TRIANGULATION_GT, TRIANGULATION_PROBE].into_iter().zip(&errs) {
            for (bin, (fe, ae, count)) in bin_by_flow_error(err, e.flow_bins)?.into_iter().enumerate() {
                rows.push(FlowBinRow {
                    method: method.into(),
                    seed,
                    bin,
                    flow_error_px: fe,
                    flow_error_norm: fe / data.width as f64,
                    abs_inv: ae,
                    pixels: count,
                });
            }
        }
    }
    Ok(rows)
}

/// Median over seeds of the Abs-Inv of `method` in bin `bin`.
pub fn median_bin_error(rows: &[FlowBinRow], method: &str, bin: usize) -> Result<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.method == method && r.bin == bin).map(|r| r.abs_inv).collect();
    median(&v)
}

// ---------------------------------------------------------------- ablation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: MetricsRecord,
}

pub fn ablate(cfg: &RunConfig, cache: &mut RunCache) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.experiment.seeds {
        for &variant in &cfg.experiment.variants {
            let model = ModelConfig {
                variant,
                ..global_local(&cfg.model)
            };
            let run = cache.trained(&cfg.data, &model, &seeded(&cfg.train, seed))?;
            rows.push(AblationRow {
                variant,
                seed,
                metrics: run.test,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_metric_rows(rows: &[AblationRow], n_labels: LabelCount) -> Vec<MetricsRow> {
    rows.iter()
        .map(|r| MetricsRow::new(format!("{}-seed{}", r.variant.name(), r.seed), "test", n_labels, &r.metrics))
        .collect()
}

pub fn median_variant_abs_inv(rows: &[AblationRow], variant: Variant) -> Result<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.variant == variant).map(|r| r.metrics.abs_inv).collect();
    median(&v)
}

// ------------------------------------------------------------------- probe

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub regime: ProbeRegime,
    pub seed: u64,
    pub rot_deg: f64,
    pub trans_deg: f64,
}

/// A trained probe with the global module it reads from.
#[derive(Clone, Debug)]
pub struct ProbeRun {
    pub row: ProbeRow,
    pub probe: PoseProbe,
    pub model: Model,
}

/// Every configured probe regime; the pretrained ones start from
/// `pretrained` when given (e.g. a loaded checkpoint), otherwise from the
/// global-local depth model of the same seed.
pub fn probe_experiment(cfg: &RunConfig, cache: &mut RunCache, pretrained: Option<&Model>) -> Result<Vec<ProbeRun>> {
    let e = &cfg.experiment;
    let model_cfg = global_local(&cfg.model);
    let mut runs = Vec::new();
    for &seed in &e.seeds {
        let train_cfg = seeded(&cfg.train, seed);
        let needs_depth = e.regimes.iter().any(|r| r.init == ProbeInit::Pretrained);
        let depth_model = match pretrained {
            Some(m) => Some(m.clone()),
            None if needs_depth => Some(cache.trained(&cfg.data, &model_cfg, &train_cfg)?.model.clone()),
            None => None,
        };
        let (train_set, test) = generate_splits(&cfg.data, &train_cfg)?;
        for &regime in &e.regimes {
            let mut m = starting_model(regime, &model_cfg, depth_model.as_ref(), seed)?;
            let probe_cfg = ProbeConfig {
                seed,
                ..e.probe.clone()
            };
            let probe = train_pose_probe(&mut m, regime, &train_set, &probe_cfg)?;
            let err = eval_pose_probe(&probe, &m, &test)?;
            runs.push(ProbeRun {
                row: ProbeRow {
                    regime,
                    seed,
                    rot_deg: err.rot_deg,
                    trans_deg: err.trans_deg,
                },
                probe,
                model: m,
            });
        }
    }
    Ok(runs)
}

/// Median over seeds of (rotation, translation) error of `regime`.
pub fn median_probe_errors(rows: &[ProbeRow], regime: ProbeRegime) -> Result<(f64, f64)> {
    let sel: Vec<&ProbeRow> = rows.iter().filter(|r| r.regime == regime).collect();
    let r: Vec<f64> = sel.iter().map(|r| r.rot_deg).collect();
    let t: Vec<f64> = sel.iter().map(|r| r.trans_deg).collect();
    Ok((median(&r)?, median(&t)?))
}
