//! Sparse inverse-depth L1 loss, edge-aware smoothness and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scene::SparseLabelSet;
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_p: 5.0,
            lambda_s: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (name, v) in [("lambda_p", self.lambda_p), ("lambda_s", self.lambda_s)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::field(format!("{prefix}.{name}"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Per-pixel smoothness weights `exp(-|∂I|)` along x and y.
///
/// Forward differences; the channel reduction is the mean of absolute
/// differences. The last column (x) and last row (y) get weight 0, which is
/// what drops their terms from the sum.
pub fn edge_weights(image: &Raster) -> (Vec<f64>, Vec<f64>) {
    let (w, h, ch) = (image.width, image.height, image.channels);
    let mut wx = vec![0.0; w * h];
    let mut wy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let g: f64 = (0..ch).map(|c| (image.get(c, x + 1, y) - image.get(c, x, y)).abs()).sum();
                wx[i] = (-g / ch as f64).exp();
            }
            if y + 1 < h {
                let g: f64 = (0..ch).map(|c| (image.get(c, x, y + 1) - image.get(c, x, y)).abs()).sum();
                wy[i] = (-g / ch as f64).exp();
            }
        }
    }
    (wx, wy)
}

fn check_labels(pred_len: usize, labels: &SparseLabelSet) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Usage("depth loss needs at least one label".into()));
    }
    if pred_len != labels.width * labels.height {
        return Err(Error::Usage(format!(
            "prediction has {pred_len} pixels, labels describe {}x{}",
            labels.width, labels.height
        )));
    }
    if labels.points.iter().any(|p| !(p.inv_depth > 0.0)) {
        return Err(Error::Usage("label inverse depth must be positive".into()));
    }
    Ok(())
}

/// Mean `|ẑ - z|` over the labelled pixels of an inverse-depth map.
pub fn loss_depth_value(pred: &[f64], labels: &SparseLabelSet) -> Result<f64> {
    check_labels(pred.len(), labels)?;
    let s: f64 = labels
        .points
        .iter()
        .map(|p| (pred[p.y * labels.width + p.x] - p.inv_depth).abs())
        .sum();
    Ok(s / labels.len() as f64)
}

pub fn loss_smooth_value(pred: &[f64], image: &Raster) -> Result<f64> {
    let (w, h) = (image.width, image.height);
    if pred.len() != w * h {
        return Err(Error::Usage(format!("prediction has {} pixels, image {w}x{h}", pred.len())));
    }
    let (wx, wy) = edge_weights(image);
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                s += (pred[i + 1] - pred[i]).abs() * wx[i];
            }
            if y + 1 < h {
                s += (pred[i + w] - pred[i]).abs() * wy[i];
            }
        }
    }
    Ok(s / (w * h) as f64)
}

/// Differentiable depth loss on a `[1, H, W]` (or flat) inverse-depth node.
pub fn loss_depth(tape: &mut Tape, pred: Var, labels: &SparseLabelSet) -> Result<Var> {
    check_labels(tape.value(pred).len(), labels)?;
    tape.l1_at(pred, labels.indices(), labels.targets())
}

pub fn loss_smooth(tape: &mut Tape, pred: Var, image: &Raster) -> Result<Var> {
    let (wx, wy) = edge_weights(image);
    tape.edge_smooth(pred, image.height, image.width, wx, wy)
}

/// The three loss nodes of one sample.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub depth: Var,
    pub smooth: Var,
    pub total: Var,
}

pub fn loss_total(tape: &mut Tape, pred: Var, labels: &SparseLabelSet, image: &Raster, weights: &LossWeights) -> Result<LossTerms> {
    let depth = loss_depth(tape, pred, labels)?;
    let smooth = loss_smooth(tape, pred, image)?;
    let a = tape.scale(depth, weights.lambda_p);
    let b = tape.scale(smooth, weights.lambda_s);
    let total = tape.add(a, b)?;
    Ok(LossTerms { depth, smooth, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::LabelPoint;
    use crate::tensor::Tensor;

    fn labels(w: usize, h: usize, pts: &[(usize, usize, f64)]) -> SparseLabelSet {
        SparseLabelSet {
            width: w,
            height: h,
            points: pts.iter().map(|&(x, y, z)| LabelPoint { x, y, inv_depth: z }).collect(),
        }
    }

    #[test]
    fn depth_loss_examples() {
        let l = labels(2, 1, &[(0, 0, 0.25)]);
        assert_eq!(loss_depth_value(&[0.5, 9.0], &l).unwrap(), 0.25);
        let l = labels(2, 1, &[(0, 0, 0.5), (1, 0, 1.0)]);
        assert_eq!(loss_depth_value(&[1.0, 1.0], &l).unwrap(), 0.25);
        assert_eq!(loss_depth_value(&[0.5, 1.0], &l).unwrap(), 0.0);
        assert!(matches!(loss_depth_value(&[0.0, 0.0], &labels(2, 1, &[])), Err(Error::Usage(_))));
    }

    #[test]
    fn smooth_loss_of_constant_map_is_zero() {
        let mut img = Raster::filled(5, 4, 1, 0.0);
        img.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin().abs());
        assert_eq!(loss_smooth_value(&[0.7; 20], &img).unwrap(), 0.0);
    }

    #[test]
    fn smooth_loss_ramp_matches_direct_sum() {
        // ẑ = x on a W×H grid, constant image: every pixel except the last
        // column contributes 1, so the mean is (W-1)·H / (W·H).
        let (w, h) = (6, 3);
        let pred: Vec<f64> = (0..w * h).map(|i| (i % w) as f64).collect();
        let img = Raster::filled(w, h, 3, 0.5);
        let v = loss_smooth_value(&pred, &img).unwrap();
        assert!((v - (w - 1) as f64 / w as f64).abs() < 1e-15);
    }

    #[test]
    fn image_edge_damps_penalty() {
        let pred = [0.0, 1.0];
        let flat = Raster::filled(2, 1, 1, 0.0);
        let edge = Raster::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let a = loss_smooth_value(&pred, &flat).unwrap();
        let b = loss_smooth_value(&pred, &edge).unwrap();
        assert!((b - a * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn multi_channel_weight_uses_channel_mean() {
        let img = Raster::new(2, 1, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let (wx, _) = edge_weights(&img);
        assert!((wx[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(wx[1], 0.0);
    }

    #[test]
    fn tape_losses_match_values_and_total_weights() {
        let (w, h) = (4, 3);
        let pred: Vec<f64> = (0..12).map(|i| 0.3 + 0.05 * i as f64 - 0.02 * (i % 3) as f64).collect();
        let mut img = Raster::filled(w, h, 1, 0.0);
        img.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.7).cos().abs());
        let l = labels(w, h, &[(1, 1, 0.4), (3, 2, 0.9)]);
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![1, h, w], pred.clone()).unwrap());
        let terms = loss_total(&mut tape, p, &l, &img, &LossWeights::default()).unwrap();
        let d = tape.value(terms.depth).data()[0];
        let s = tape.value(terms.smooth).data()[0];
        assert!((d - loss_depth_value(&pred, &l).unwrap()).abs() < 1e-15);
        assert!((s - loss_smooth_value(&pred, &img).unwrap()).abs() < 1e-15);
        assert!((tape.value(terms.total).data()[0] - (5.0 * d + 2.0 * s)).abs() < 1e-14);
    }

    #[test]
    fn weighted_sum_example() {
        let w = LossWeights::default();
        assert!((w.lambda_p * 0.1 + w.lambda_s * 0.05 - 0.6).abs() < 1e-15);
        assert!(LossWeights { lambda_p: -1.0, lambda_s: 0.0 }.validate("train.weights").is_err());
    }
}
