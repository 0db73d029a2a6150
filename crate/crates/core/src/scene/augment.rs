use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RenderedPair, SparseLabelSet};
use crate::camera::CameraIntrinsics;

/// Which of the two training-time transforms were applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentOps {
    pub mirror: bool,
    pub rotate: bool,
}

impl AugmentOps {
    /// Each transform independently with probability 1/2.
    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AugmentOps {
            mirror: rng.random_bool(0.5),
            rotate: rng.random_bool(0.5),
        }
    }
}

fn flip_mask(mask: &[bool], w: usize, h: usize, flip_y: bool) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            let ty = if flip_y { h - 1 - y } else { y };
            out[ty * w + (w - 1 - x)] = mask[y * w + x];
        }
    }
    out
}

fn flip_k(k: &CameraIntrinsics, flip_y: bool) -> CameraIntrinsics {
    let mut out = *k;
    out.cx = (k.width - 1) as f64 - k.cx;
    if flip_y {
        out.cy = (k.height - 1) as f64 - k.cy;
    }
    out
}

/// Reflect about the vertical axis. The horizontal flow component changes
/// sign; intrinsics and pose are updated so the pair stays geometrically
/// consistent (conjugation by `diag(−1, 1, 1)`).
pub fn mirror(pair: &RenderedPair, labels: &SparseLabelSet) -> (RenderedPair, SparseLabelSet) {
    let (w, h) = (pair.width(), pair.height());
    let out = RenderedPair {
        image1: pair.image1.mirrored(&[]),
        image2: pair.image2.mirrored(&[]),
        depth1: pair.depth1.mirrored(&[]),
        flow: pair.flow.mirrored(&[0]),
        occlusion: flip_mask(&pair.occlusion, w, h, false),
        intrinsics1: flip_k(&pair.intrinsics1, false),
        intrinsics2: flip_k(&pair.intrinsics2, false),
        pose: pair.pose.conjugate_diag([-1.0, 1.0, 1.0]),
    };
    let mut l = labels.clone();
    for p in &mut l.points {
        p.x = w - 1 - p.x;
    }
    (out, l)
}

/// Rotate by 180°: every map is point-reflected and both flow components
/// change sign (conjugation by `diag(−1, −1, 1)`).
pub fn rotate180(pair: &RenderedPair, labels: &SparseLabelSet) -> (RenderedPair, SparseLabelSet) {
    let (w, h) = (pair.width(), pair.height());
    let out = RenderedPair {
        image1: pair.image1.rotated180(&[]),
        image2: pair.image2.rotated180(&[]),
        depth1: pair.depth1.rotated180(&[]),
        flow: pair.flow.rotated180(&[0, 1]),
        occlusion: flip_mask(&pair.occlusion, w, h, true),
        intrinsics1: flip_k(&pair.intrinsics1, true),
        intrinsics2: flip_k(&pair.intrinsics2, true),
        pose: pair.pose.conjugate_diag([-1.0, -1.0, 1.0]),
    };
    let mut l = labels.clone();
    for p in &mut l.points {
        p.x = w - 1 - p.x;
        p.y = h - 1 - p.y;
    }
    (out, l)
}

pub fn augment(pair: &RenderedPair, labels: &SparseLabelSet, seed: u64) -> (RenderedPair, SparseLabelSet, AugmentOps) {
    let ops = AugmentOps::draw(seed);
    let (mut p, mut l) = (pair.clone(), labels.clone());
    if ops.mirror {
        (p, l) = mirror(&p, &l);
    }
    if ops.rotate {
        (p, l) = rotate180(&p, &l);
    }
    (p, l, ops)
}
