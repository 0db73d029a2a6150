//! Turns a config and an experiment kind into an artifacts directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::dataset::{load_dataset, load_sample, save_dataset};
use crate::error::{Error, Result};
use crate::experiments::{self as ex, RunCache};
use crate::metrics::{write_metrics_csv, MetricsRecord, MetricsRow};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelInput};
use crate::pfm::write_pfm;
use crate::probe::{predict_pose, PoseProbe, ProbeRegime};
use crate::raster::Raster;
use crate::scene::Sample;
use crate::training::{evaluate, generate_splits, predict_depth, train, RunLog, TrainContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Generate,
    Train,
    Eval,
    Sparsity,
    Intrinsics,
    Flow,
    Ablation,
    Probe,
    Triangulate,
    DumpFilters,
}

impl Kind {
    pub const ALL: [Kind; 10] = [
        Kind::Generate,
        Kind::Train,
        Kind::Eval,
        Kind::Sparsity,
        Kind::Intrinsics,
        Kind::Flow,
        Kind::Ablation,
        Kind::Probe,
        Kind::Triangulate,
        Kind::DumpFilters,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Generate => "generate",
            Kind::Train => "train",
            Kind::Eval => "eval",
            Kind::Sparsity => "sparsity",
            Kind::Intrinsics => "intrinsics",
            Kind::Flow => "flow",
            Kind::Ablation => "ablation",
            Kind::Probe => "probe",
            Kind::Triangulate => "triangulate",
            Kind::DumpFilters => "dump-filters",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown experiment kind `{s}`")))
    }
}

/// Which pose `triangulate` uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoseSource {
    #[default]
    GroundTruth,
    Probe,
}

impl FromStr for PoseSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(PoseSource::GroundTruth),
            "probe" => Ok(PoseSource::Probe),
            _ => Err(Error::Usage(format!("unknown pose source `{s}` (gt or probe)"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunRequest {
    pub config: RunConfig,
    /// Output directory; for `triangulate`, the depth PFM path.
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub regime: Option<ProbeRegime>,
    pub pair: Option<PathBuf>,
    pub pose: PoseSource,
    pub probe: Option<PathBuf>,
    /// Command-line overrides, recorded in the summary.
    pub overrides: Vec<String>,
    pub progress_every: usize,
}

pub const CONFIG_FILE: &str = "config.json";
pub const HASH_FILE: &str = "config.sha256";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";

fn csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_metrics_csv(fs::File::create(path)?, rows)
}

fn require<'a>(opt: &'a Option<PathBuf>, what: &str, kind: Kind) -> Result<&'a PathBuf> {
    opt.as_ref().ok_or_else(|| Error::Usage(format!("{kind} needs --{what}")))
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path)
}

#[derive(Serialize)]
struct LogRow {
    step: usize,
    loss: f64,
    loss_depth: f64,
    loss_smooth: f64,
    test_abs_inv: Option<f64>,
    test_abs_rel: Option<f64>,
    test_s_rmse: Option<f64>,
}

fn write_log(path: &Path, log: &RunLog) -> Result<()> {
    let rows: Vec<LogRow> = log
        .entries
        .iter()
        .map(|e| LogRow {
            step: e.step,
            loss: e.loss,
            loss_depth: e.loss_depth,
            loss_smooth: e.loss_smooth,
            test_abs_inv: e.test.map(|m| m.abs_inv),
            test_abs_rel: e.test.map(|m| m.abs_rel),
            test_s_rmse: e.test.map(|m| m.s_rmse),
        })
        .collect();
    csv_rows(path, &rows)
}

/// Predicted and ground-truth depth of the first `n` samples as PFM.
fn dump_depths(dir: &Path, model: &Model, samples: &[Sample], n: usize) -> Result<Vec<String>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir.join("depth"))?;
    let mut files = Vec::new();
    for s in samples.iter().take(n) {
        let (w, h) = (s.pair.width(), s.pair.height());
        let pred = Raster::new(w, h, 1, predict_depth(model, s)?)?;
        for (tag, r) in [("pred", &pred), ("gt", &s.pair.depth1)] {
            let name = format!("depth/{:05}_{tag}.pfm", s.index);
            fs::write(dir.join(&name), write_pfm(r)?)?;
            files.push(name);
        }
    }
    Ok(files)
}

/// Run `kind` and fill `req.out`. Returns the JSON summary that is also
/// written to `summary.json`.
pub fn run_experiment(kind: Kind, req: &RunRequest) -> Result<serde_json::Value> {
    let cfg = &req.config;
    cfg.validate()?;
    if kind == Kind::Triangulate {
        return triangulate(req);
    }
    let out = &req.out;
    fs::create_dir_all(out)?;
    let hash = cfg.hash()?;
    let pretty = serde_json::to_string_pretty(&serde_json::from_str::<serde_json::Value>(&cfg.canonical_json()?)?)?;
    fs::write(out.join(CONFIG_FILE), pretty + "\n")?;
    fs::write(out.join(HASH_FILE), format!("{hash}\n"))?;
    let mut cache = RunCache::new(req.progress_every);
    let e = &cfg.experiment;

    let results = match kind {
        Kind::Generate => {
            let (tr, te) = generate_splits(&cfg.data, &cfg.train)?;
            let (a, b) = crate::training::split_seeds(cfg.train.seed);
            save_dataset(&out.join("train"), &cfg.data, a, &tr)?;
            save_dataset(&out.join("test"), &cfg.data, b, &te)?;
            json!({ "train_samples": tr.len(), "test_samples": te.len() })
        }
        Kind::Train => {
            let (tr, te) = generate_splits(&cfg.data, &cfg.train)?;
            let mut model = Model::init(cfg.model.clone(), cfg.train.seed)?;
            let ctx = TrainContext {
                config_hash: hash.clone(),
                checkpoint: Some(out.join("last-good.ck")),
                progress_every: req.progress_every,
            };
            let log = train(&mut model, &tr, &te, &cfg.train, &ctx)?;
            let ck = Checkpoint {
                config_hash: hash.clone(),
                step: cfg.train.iterations as u64,
                model: model.clone(),
            };
            save_checkpoint(&out.join("model.ck"), &ck)?;
            write_log(&out.join("trainlog.csv"), &log)?;
            let rows: Vec<MetricsRow> = log
                .final_test
                .iter()
                .map(|m| MetricsRow::new(hash[..12].to_string(), "test", cfg.data.labels, m))
                .collect();
            write_metrics(&out.join(METRICS_FILE), &rows)?;
            let dumps = dump_depths(out, &model, &te, e.dump_samples)?;
            json!({
                "final_test": log.final_test,
                "wall_clock_s": log.wall_clock_s,
                "parameters": model.param_count(),
                "depth_dumps": dumps,
            })
        }
        Kind::Eval => {
            let ck = load_model(require(&req.checkpoint, "checkpoint", kind)?)?;
            let test = match &req.data_dir {
                Some(dir) => load_dataset(dir)?.1,
                None => generate_splits(
                    &cfg.data,
                    &crate::training::TrainConfig {
                        train_samples: 0,
                        ..cfg.train.clone()
                    },
                )?
                .1,
            };
            let m = evaluate(&ck.model, &test)?;
            write_metrics(&out.join(METRICS_FILE), &[MetricsRow::new(ck.config_hash.chars().take(12).collect::<String>(), "test", "", &m)])?;
            let dumps = dump_depths(out, &ck.model, &test, e.dump_samples)?;
            json!({ "metrics": m, "checkpoint_config_hash": ck.config_hash, "depth_dumps": dumps })
        }
        Kind::Sparsity => {
            let rows = ex::sparsity_sweep(cfg, &mut cache)?;
            write_metrics(&out.join(METRICS_FILE), &ex::sparsity_metric_rows(&rows))?;
            csv_rows(&out.join("sparsity_long.csv"), &long_rows(&rows))?;
            let mut summary = serde_json::Map::new();
            if let (Some(&first), Some(&last)) = (e.levels.first(), e.levels.last()) {
                for m in [ex::GLOBAL_LOCAL, ex::SMALL_ENCDEC] {
                    summary.insert(format!("{m}_ratio"), json!(ex::degradation_ratio(&rows, m, first, last)?));
                }
            }
            json!({ "rows": rows, "degradation": summary })
        }
        Kind::Intrinsics => {
            let rows = ex::intrinsics_robustness(cfg, &mut cache)?;
            write_metrics(&out.join(METRICS_FILE), &ex::intrinsics_metric_rows(&rows))?;
            json!({
                "rows": rows,
                "relative_increase": {
                    ex::GLOBAL_LOCAL: ex::relative_increase(&rows, ex::GLOBAL_LOCAL)?,
                    ex::TRIANGULATION: ex::relative_increase(&rows, ex::TRIANGULATION)?,
                },
            })
        }
        Kind::Flow => {
            let rows = ex::flow_robustness(cfg, &mut cache)?;
            csv_rows(&out.join("flow_curve.csv"), &rows)?;
            json!({ "rows": rows.len() })
        }
        Kind::Ablation => {
            let rows = ex::ablate(cfg, &mut cache)?;
            write_metrics(&out.join(METRICS_FILE), &ex::ablation_metric_rows(&rows, cfg.data.labels))?;
            json!({ "rows": rows })
        }
        Kind::Probe => probe(req, &mut cache)?,
        Kind::DumpFilters => dump_filters(req)?,
        Kind::Triangulate => unreachable!("handled above"),
    };
    let summary = json!({
        "kind": kind.name(),
        "config_hash": hash,
        "overrides": req.overrides,
        "results": results,
    });
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[derive(Serialize)]
struct LongRow {
    model: String,
    seed: u64,
    n_labels: String,
    metric: &'static str,
    value: f64,
}

/// One row per (model, seed, level, metric).
fn long_rows(rows: &[ex::SparsityRow]) -> Vec<LongRow> {
    rows.iter()
        .flat_map(|r| {
            let m: MetricsRecord = r.metrics;
            [("abs_inv", m.abs_inv), ("abs_rel", m.abs_rel), ("s_rmse", m.s_rmse)].map(|(metric, value)| LongRow {
                model: r.model.clone(),
                seed: r.seed,
                n_labels: r.level.to_string(),
                metric,
                value,
            })
        })
        .collect()
}

fn probe(req: &RunRequest, cache: &mut RunCache) -> Result<serde_json::Value> {
    let mut cfg = req.config.clone();
    if let Some(r) = req.regime {
        cfg.experiment.regimes = vec![r];
    }
    // without a checkpoint, pretrained regimes train a depth model per seed
    let pretrained = match &req.checkpoint {
        Some(p) => Some(load_model(p)?.model),
        None => None,
    };
    let runs = ex::probe_experiment(&cfg, cache, pretrained.as_ref())?;
    let rows: Vec<ex::ProbeRow> = runs.iter().map(|r| r.row.clone()).collect();
    csv_rows(&req.out.join("pose.csv"), &rows)?;
    let mut files = Vec::new();
    for r in &runs {
        let stem = format!("{}-seed{}", r.row.regime, r.row.seed);
        r.probe.save(&req.out.join(format!("probe-{stem}.json")))?;
        files.push(format!("probe-{stem}.json"));
        let ck = Checkpoint {
            config_hash: cfg.hash()?,
            step: 0,
            model: r.model.clone(),
        };
        save_checkpoint(&req.out.join(format!("global-{stem}.ck")), &ck)?;
        files.push(format!("global-{stem}.ck"));
    }
    Ok(json!({ "rows": rows, "files": files }))
}

#[derive(Serialize)]
struct FilterRow {
    sample: usize,
    bank: usize,
    param: &'static str,
    index: usize,
    value: f64,
}

fn dump_filters(req: &RunRequest) -> Result<serde_json::Value> {
    let ck = load_model(require(&req.checkpoint, "checkpoint", Kind::DumpFilters)?)?;
    let model = &ck.model;
    let cfg = &req.config;
    let n = cfg.experiment.dump_samples.max(1);
    let test = generate_splits(
        &cfg.data,
        &crate::training::TrainConfig {
            train_samples: 0,
            test_samples: n,
            ..cfg.train.clone()
        },
    )?
    .1;
    let shapes = model.bank_shapes();
    let mut rows = Vec::new();
    let mut globals = Vec::new();
    for s in &test {
        let input = ModelInput::from_sample(s, &model.config)?;
        let banks = model.filter_banks(&input)?;
        let mut off = 0;
        for (b, shape) in shapes.iter().enumerate() {
            for (param, len) in [("weight", shape.weights()), ("bias", shape.out)] {
                rows.extend((0..len).map(|i| FilterRow {
                    sample: s.index,
                    bank: b + 1,
                    param,
                    index: i,
                    value: banks[off + i],
                }));
                off += len;
            }
        }
        if let Ok(g) = model.global_params(&input) {
            globals.push(json!({ "sample": s.index, "g": g }));
        }
    }
    csv_rows(&req.out.join("filters.csv"), &rows)?;
    Ok(json!({ "global_params": globals, "values": rows.len() }))
}

fn triangulate(req: &RunRequest) -> Result<serde_json::Value> {
    let pair = require(&req.pair, "pair", Kind::Triangulate)?;
    let sample = load_sample(pair)?;
    let pose = match req.pose {
        PoseSource::GroundTruth => sample.pair.pose,
        PoseSource::Probe => {
            let ck = load_model(require(&req.checkpoint, "checkpoint", Kind::Triangulate)?)?;
            let probe = PoseProbe::load(require(&req.probe, "probe", Kind::Triangulate)?)?;
            predict_pose(&probe, &ck.model, &sample)?
        }
    };
    let t = ex::triangulate_sample(&sample, &pose)?;
    let depth = t.depth_raster(crate::metrics::INV_DEPTH_FLOOR);
    if let Some(dir) = req.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&req.out, write_pfm(&depth)?)?;
    let valid = t.valid().iter().filter(|v| **v).count();
    let gt: Vec<f64> = sample.pair.depth1.data.clone();
    let m = MetricsRecord::compute(&gt, &depth.data, None)?;
    Ok(json!({
        "kind": Kind::Triangulate.name(),
        "valid_pixels": valid,
        "pixels": depth.data.len(),
        "metrics": m,
    }))
}
