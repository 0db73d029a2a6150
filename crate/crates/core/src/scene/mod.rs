//! Synthetic two-view data: piecewise-planar textured scenes, exact depth,
//! analytic optical flow with occlusion flags, sparse labels, and the
//! perturbation, corruption and augmentation protocols.

mod augment;
mod config;
mod flow;
mod labels;
mod perturb;
mod render;
mod sample;

pub use augment::{augment, mirror, rotate180, AugmentOps};
pub use config::DataConfig;
pub use flow::{compute_flow, normalize_pair, reprojection_error};
pub use labels::{sample_sparse_labels, LabelCount, LabelMode, LabelPoint, SparseLabelSet};
pub use perturb::{corrupt_flow, perturb_intrinsics, CorruptedFlow, FlowCorruption};
pub use render::render_view;
pub use sample::{generate_sample, sample_motion, sample_scene, stream_rng, Sample};

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, PoseSE3};
use crate::linalg::Vec3;
use crate::raster::Raster;

/// Procedural grayscale texture: smooth value noise mixed with a checkerboard.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// Lattice spacing of the value noise, metres.
    pub noise_scale: f64,
    /// Checker cell size, metres.
    pub checker_size: f64,
    /// Weight of the checker term in `[0, 1]`.
    pub checker_mix: f64,
    pub base: f64,
    pub contrast: f64,
}

/// A plane `n·X = offset` (camera-1 frame) bounded by a polygon.
///
/// `polygon` holds vertices in the in-plane basis `(axis_u, axis_v)` around
/// `center`; an empty polygon means the plane is unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub normal: Vec3,
    pub offset: f64,
    pub center: Vec3,
    pub axis_u: Vec3,
    pub axis_v: Vec3,
    pub polygon: Vec<[f64; 2]>,
    pub texture: Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarScene {
    pub patches: Vec<Patch>,
    pub background: Patch,
    /// Patch surface is kept only where camera-1 depth lies in `[depth_min, depth_max]`.
    pub depth_min: f64,
    pub depth_max: f64,
}

/// Two views of a scene together with their exact geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPair {
    pub image1: Raster,
    pub image2: Raster,
    /// Camera-1 depth (z coordinate), one channel.
    pub depth1: Raster,
    /// Two channels: horizontal and vertical pixel displacement.
    pub flow: Raster,
    pub occlusion: Vec<bool>,
    pub intrinsics1: CameraIntrinsics,
    pub intrinsics2: CameraIntrinsics,
    pub pose: PoseSE3,
}

impl RenderedPair {
    pub fn width(&self) -> usize {
        self.depth1.width
    }

    pub fn height(&self) -> usize {
        self.depth1.height
    }

    /// Inverse depth of camera 1.
    pub fn inverse_depth(&self) -> Vec<f64> {
        self.depth1.data.iter().map(|d| 1.0 / d).collect()
    }
}
