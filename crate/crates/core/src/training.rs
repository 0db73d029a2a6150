//! Deterministic mini-batch training and evaluation of the depth networks.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_total, LossWeights};
use crate::metrics::{depth_from_inverse, MetricsRecord};
use crate::model::{save_checkpoint, Checkpoint, Model, ModelInput};
use crate::scene::{generate_sample, stream_rng, DataConfig, Sample};
use crate::tensor::{AdamConfig, AdamState, Tape};

/// Environment variable overriding the worker-thread count.
pub const THREADS_ENV: &str = "SPARSE_DEPTH_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    /// Multiply the learning rate by `factor` every `every` iterations.
    pub every: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_decay: Option<StepDecay>,
    pub batch_size: usize,
    pub iterations: usize,
    pub augment: bool,
    pub seed: u64,
    /// Test-set evaluation period in iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub weights: LossWeights,
    /// Worker threads for per-sample gradients; 1 is strictly sequential.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: None,
            batch_size: 16,
            iterations: 5000,
            augment: true,
            seed: 0,
            eval_every: 0,
            train_samples: 2000,
            test_samples: 200,
            weights: LossWeights::default(),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, msg: &str| Err(Error::field(format!("train.{name}"), msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return f("lr", "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return f("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return f("beta2", "must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return f("eps", "must be positive");
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0) {
                return f("lr_decay", "needs every >= 1 and a positive factor");
            }
        }
        if self.batch_size == 0 {
            return f("batch_size", "must be at least 1");
        }
        if self.train_samples == 0 {
            return f("train_samples", "must be at least 1");
        }
        if self.threads == 0 {
            return f("threads", "must be at least 1");
        }
        self.weights.validate("train.weights")
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// `threads`, unless the environment overrides it.
    pub fn effective_threads(&self) -> usize {
        env_threads(self.threads)
    }
}

/// Thread count from [`THREADS_ENV`], or `default`.
pub fn env_threads(default: usize) -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(default)
}

/// Seeds of the two splits of one experiment.
pub fn split_seeds(seed: u64) -> (u64, u64) {
    let mut rng = stream_rng(seed, u64::MAX);
    (rng.next_u64(), rng.next_u64())
}

/// Generate `n` samples of the stream `seed`.
pub fn generate_set(data: &DataConfig, seed: u64, n: usize) -> Result<Vec<Sample>> {
    (0..n).map(|i| generate_sample(data, seed, i)).collect()
}

/// Train and test sets for a config, from disjoint sample streams.
pub fn generate_splits(data: &DataConfig, train: &TrainConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (a, b) = split_seeds(train.seed);
    Ok((generate_set(data, a, train.train_samples)?, generate_set(data, b, train.test_samples)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    /// Batch means of the total, depth and smoothness losses.
    pub loss: f64,
    pub loss_depth: f64,
    pub loss_smooth: f64,
    pub test: Option<MetricsRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config_hash: String,
    pub entries: Vec<LogEntry>,
    pub final_test: Option<MetricsRecord>,
    pub wall_clock_s: f64,
}

/// Everything besides the config that a training run may need.
#[derive(Clone, Debug, Default)]
pub struct TrainContext {
    pub config_hash: String,
    /// Where to keep the last good weights if training diverges.
    pub checkpoint: Option<PathBuf>,
    /// Print a progress line every this many iterations (0 = silent).
    pub progress_every: usize,
}

struct SampleGrad {
    grads: Vec<Vec<f64>>,
    loss: f64,
    depth: f64,
    smooth: f64,
}

fn sample_gradient(model: &Model, sample: &Sample, weights: &LossWeights) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, |_| true);
    let input = ModelInput::from_sample(sample, &model.config)?;
    let out = model.forward(&mut tape, &vars, &input)?;
    let terms = loss_total(&mut tape, out.inv_depth, &sample.labels, &sample.pair.image1, weights)?;
    let loss = tape.value(terms.total).data()[0];
    let depth = tape.value(terms.depth).data()[0];
    let smooth = tape.value(terms.smooth).data()[0];
    if !loss.is_finite() {
        // reported by the caller with the iteration number
        return Ok(SampleGrad {
            grads: Vec::new(),
            loss,
            depth,
            smooth,
        });
    }
    let mut g = tape.backward(terms.total)?;
    let grads = vars
        .iter()
        .zip(model.params.tensors())
        .map(|(v, t)| g.take(*v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    Ok(SampleGrad {
        grads,
        loss,
        depth,
        smooth,
    })
}

pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// Per-item results in input order, on `pool` when it has more than one thread.
pub(crate) fn ordered_map<T: Sync, R: Send>(
    pool: &rayon::ThreadPool,
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if pool.current_num_threads() <= 1 {
        items.iter().map(f).collect()
    } else {
        pool.install(|| items.par_iter().map(f).collect())
    }
}

/// Seed of the augmentation of batch slot `slot` at `iteration`.
fn augment_seed(seed: u64, iteration: usize, slot: usize) -> u64 {
    let mut rng = stream_rng(seed ^ 0xA5A5_5A5A_0F0F_F0F0, iteration as u64);
    for _ in 0..slot {
        rng.next_u64();
    }
    rng.next_u64()
}

/// Batches of a seeded, reshuffled-per-epoch pass over `n` indices.
pub(crate) struct EpochIter {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl EpochIter {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        let mut it = EpochIter {
            n,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        it.reshuffle();
        it
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(self.epoch)));
        self.epoch += 1;
        self.pos = 0;
    }

    pub(crate) fn batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.n {
                    self.reshuffle();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// `cfg.iterations` Adam steps on the batch-mean total loss.
///
/// On a non-finite loss or gradient, `model` keeps its last good weights
/// (written to `ctx.checkpoint` when set) and the error is returned.
pub fn train(model: &mut Model, train_set: &[Sample], test_set: &[Sample], cfg: &TrainConfig, ctx: &TrainContext) -> Result<RunLog> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let start = Instant::now();
    let pool = thread_pool(cfg.effective_threads())?;
    let mut adam = AdamState::new(cfg.adam(), model.params.tensors().iter().map(|t| t.len()));
    let mut batches = EpochIter::new(train_set.len(), cfg.seed);
    let mut log = RunLog {
        config_hash: ctx.config_hash.clone(),
        ..RunLog::default()
    };
    let keep_last_good = |model: &Model, step: usize| -> Result<()> {
        if let Some(path) = &ctx.checkpoint {
            let ck = Checkpoint {
                config_hash: ctx.config_hash.clone(),
                step: step as u64,
                model: model.clone(),
            };
            save_checkpoint(path, &ck)?;
        }
        Ok(())
    };

    for it in 0..cfg.iterations {
        if let Some(d) = cfg.lr_decay {
            adam.config.lr = cfg.lr * d.factor.powi((it / d.every) as i32);
        }
        let idx = batches.batch(cfg.batch_size);
        let slots: Vec<(usize, usize)> = idx.into_iter().enumerate().collect();
        let results = ordered_map(&pool, &slots, |&(slot, i)| {
            if cfg.augment {
                let s = train_set[i].augmented(augment_seed(cfg.seed, it, slot));
                sample_gradient(model, &s, &cfg.weights)
            } else {
                sample_gradient(model, &train_set[i], &cfg.weights)
            }
        })?;
        let inv_b = 1.0 / results.len() as f64;
        let mean = |f: fn(&SampleGrad) -> f64| results.iter().map(f).sum::<f64>() * inv_b;
        let (loss, depth, smooth) = (mean(|r| r.loss), mean(|r| r.depth), mean(|r| r.smooth));
        if !loss.is_finite() {
            keep_last_good(model, it)?;
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let mut grads: Vec<Vec<f64>> = model.params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for r in &results {
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        grads.iter_mut().flatten().for_each(|g| *g *= inv_b);
        let (tensors, names) = model.params.split_mut();
        if let Err(e) = adam.step(tensors, &grads, names) {
            keep_last_good(model, it)?;
            return Err(e);
        }
        let step = it + 1;
        let test = if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !test_set.is_empty() {
            Some(evaluate_with(model, test_set, &pool)?)
        } else {
            None
        };
        if ctx.progress_every > 0 && step % ctx.progress_every == 0 {
            eprintln!(
                "step {step:>6}  loss {loss:.5}  depth {depth:.5}  smooth {smooth:.5}{}",
                test.map(|m| format!("  test abs_inv {:.5}", m.abs_inv)).unwrap_or_default()
            );
        }
        log.entries.push(LogEntry {
            step,
            loss,
            loss_depth: depth,
            loss_smooth: smooth,
            test,
        });
    }
    if !test_set.is_empty() {
        log.final_test = Some(evaluate_with(model, test_set, &pool)?);
    }
    log.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Reported depth for every pixel of `sample`.
pub fn predict_depth(model: &Model, sample: &Sample) -> Result<Vec<f64>> {
    let z = model.predict(&ModelInput::from_sample(sample, &model.config)?)?;
    Ok(z.into_iter().map(depth_from_inverse).collect())
}

/// Per-image metrics averaged over the set; `n_pixels` is the total.
pub fn evaluate(model: &Model, test_set: &[Sample]) -> Result<MetricsRecord> {
    evaluate_with(model, test_set, &thread_pool(1)?)
}

pub(crate) fn evaluate_with(model: &Model, test_set: &[Sample], pool: &rayon::ThreadPool) -> Result<MetricsRecord> {
    if test_set.is_empty() {
        return Err(Error::Usage("empty test set".into()));
    }
    let per = ordered_map(pool, test_set, |s| {
        let d_hat = predict_depth(model, s)?;
        MetricsRecord::compute(&s.pair.depth1.data, &d_hat, None)
    })?;
    mean_of_images(&per)
}

/// Unweighted mean over images of each metric.
pub fn mean_of_images(per: &[MetricsRecord]) -> Result<MetricsRecord> {
    if per.is_empty() {
        return Err(Error::Usage("no images to average".into()));
    }
    let n = per.len() as f64;
    Ok(MetricsRecord {
        abs_inv: per.iter().map(|m| m.abs_inv).sum::<f64>() / n,
        abs_rel: per.iter().map(|m| m.abs_rel).sum::<f64>() / n,
        s_rmse: per.iter().map(|m| m.s_rmse).sum::<f64>() / n,
        n_pixels: per.iter().map(|m| m.n_pixels).sum(),
    })
}
