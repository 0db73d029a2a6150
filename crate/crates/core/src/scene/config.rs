use serde::{Deserialize, Serialize};

use super::{FlowCorruption, LabelCount, LabelMode};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub width: usize,
    pub height: usize,
    /// Image channels (1 = grayscale).
    pub channels: usize,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub patches_min: usize,
    pub patches_max: usize,
    pub max_patch_tilt_deg: f64,
    /// Per-axis bound of the random rotation between the views.
    pub max_rotation_deg: f64,
    pub translation_min: f64,
    pub translation_max: f64,
    /// Relative depth tolerance of the flow occlusion test.
    pub occlusion_tolerance: f64,
    /// Rescale every pair so that |t| = 1.
    pub normalize: bool,
    pub labels: LabelCount,
    pub label_mode: LabelMode,
    /// Maximum relative perturbation of fx, fy, cx, cy (0 disables).
    pub intrinsics_perturbation: f64,
    pub flow_corruption: FlowCorruption,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            width: 64,
            height: 48,
            channels: 1,
            focal_factor: 1.0,
            depth_min: 1.0,
            depth_max: 5.0,
            patches_min: 2,
            patches_max: 6,
            max_patch_tilt_deg: 50.0,
            max_rotation_deg: 10.0,
            translation_min: 0.05,
            translation_max: 0.5,
            occlusion_tolerance: 0.01,
            normalize: true,
            labels: LabelCount::Count(1),
            label_mode: LabelMode::Uniform,
            intrinsics_perturbation: 0.0,
            flow_corruption: FlowCorruption::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let f = |name: &str, msg: &str| Err(Error::field(format!("data.{name}"), msg));
        if self.width == 0 || self.height == 0 {
            return f("width", "resolution must be positive");
        }
        if self.channels == 0 {
            return f("channels", "must be at least 1");
        }
        if !(self.focal_factor > 0.0) {
            return f("focal_factor", "must be positive");
        }
        if !(self.depth_min > 0.0) {
            return f("depth_min", "must be positive");
        }
        if !(self.depth_min < self.depth_max) {
            return f("depth_max", "depth_min must be smaller than depth_max");
        }
        if self.patches_min > self.patches_max {
            return f("patches_max", "patches_min exceeds patches_max");
        }
        if !(0.0..90.0).contains(&self.max_patch_tilt_deg) {
            return f("max_patch_tilt_deg", "must lie in [0, 90)");
        }
        if !(0.0..=45.0).contains(&self.max_rotation_deg) {
            return f("max_rotation_deg", "must lie in [0, 45]");
        }
        if !(self.translation_min > 0.0 && self.translation_min <= self.translation_max) {
            return f("translation_min", "need 0 < translation_min <= translation_max");
        }
        if !(self.occlusion_tolerance >= 0.0) {
            return f("occlusion_tolerance", "must be non-negative");
        }
        if let LabelCount::Count(n) = self.labels {
            if n == 0 || n > self.width * self.height {
                return f("labels", "count must lie in [1, width*height]");
            }
        }
        if !(0.0..1.0).contains(&self.intrinsics_perturbation) {
            return f("intrinsics_perturbation", "must lie in [0, 1)");
        }
        self.flow_corruption.validate()
    }
}
