//! `--config` file: a flat JSON object whose keys mirror the long flags
//! (dashes become underscores). Explicit flags and environment variables
//! take precedence over it.

use std::fs;
use std::path::Path;

use hazeforge::depth_io::{DepthFormat, DepthInterpretation};
use hazeforge::eval::ApMethod;
use hazeforge::pipeline::MixPolicy;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub airlight_min: Option<f64>,
    pub airlight_max: Option<f64>,
    pub depth_format: Option<DepthFormat>,
    pub depth_interpretation: Option<DepthInterpretation>,
    pub clip_percentile: Option<f64>,
    pub target_max: Option<f64>,
    pub disparity_epsilon: Option<f64>,
    pub baseline_random_t: Option<bool>,
    pub mix: Option<MixPolicy>,
    pub mix_probability: Option<f64>,
    pub resample_per_epoch: Option<bool>,
    pub endpoint: Option<String>,
    pub iou_threshold: Option<f64>,
    pub confidence_threshold: Option<f64>,
    pub ap_method: Option<ApMethod>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }
}
