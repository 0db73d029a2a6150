use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Independent multiplicative perturbation of `fx, fy, cx, cy`, each by a
/// factor uniform in `[1 − maxfrac, 1 + maxfrac]`.
pub fn perturb_intrinsics(k: &CameraIntrinsics, seed: u64, maxfrac: f64) -> CameraIntrinsics {
    if maxfrac == 0.0 {
        return *k;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = || 1.0 + rng.random_range(-maxfrac..=maxfrac);
    let mut out = *k;
    out.fx *= f();
    out.fy *= f();
    out.cx *= f();
    out.cy *= f();
    // keep the principal point inside the image
    out.cx = out.cx.min(k.width as f64 - 1e-9);
    out.cy = out.cy.min(k.height as f64 - 1e-9);
    out
}

/// Parameters of the flow-corruption model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowCorruption {
    /// Standard deviation of the Gaussian noise per component, pixels.
    pub sigma: f64,
    /// Fraction of pixels receiving an additional outlier displacement.
    pub outlier_frac: f64,
    /// Maximum outlier displacement magnitude, pixels.
    pub outlier_mag: f64,
}

impl FlowCorruption {
    pub fn is_identity(&self) -> bool {
        self.sigma == 0.0 && (self.outlier_frac == 0.0 || self.outlier_mag == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::field("data.flow_corruption.sigma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.outlier_frac) {
            return Err(Error::field("data.flow_corruption.outlier_frac", "must lie in [0, 1]"));
        }
        if !(self.outlier_mag >= 0.0) {
            return Err(Error::field("data.flow_corruption.outlier_mag", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedFlow {
    pub flow: Raster,
    /// Per-pixel magnitude of the injected displacement, pixels.
    pub magnitude: Vec<f64>,
}

/// Add Gaussian noise to every component and displace a random
/// `outlier_frac` of the pixels by a vector drawn uniformly from the disc of
/// radius `outlier_mag`.
pub fn corrupt_flow(flow: &Raster, seed: u64, params: &FlowCorruption) -> Result<CorruptedFlow> {
    params.validate()?;
    if flow.channels != 2 {
        return Err(Error::config("flow must have two channels"));
    }
    let n = flow.pixels();
    let mut out = flow.clone();
    let mut delta = vec![[0.0f64; 2]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if params.sigma > 0.0 {
        let normal = Normal::new(0.0, params.sigma).map_err(|e| Error::config(e.to_string()))?;
        for d in delta.iter_mut() {
            d[0] = normal.sample(&mut rng);
            d[1] = normal.sample(&mut rng);
        }
    }
    let n_out = (params.outlier_frac * n as f64).round() as usize;
    if n_out > 0 && params.outlier_mag > 0.0 {
        for i in rand::seq::index::sample(&mut rng, n, n_out) {
            let r = params.outlier_mag * rng.random::<f64>().sqrt();
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            delta[i][0] += r * a.cos();
            delta[i][1] += r * a.sin();
        }
    }
    let magnitude = delta.iter().map(|d| d[0].hypot(d[1])).collect();
    for (i, d) in delta.iter().enumerate() {
        out.data[i] += d[0];
        out.data[n + i] += d[1];
    }
    Ok(CorruptedFlow { flow: out, magnitude })
}
