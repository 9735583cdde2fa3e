//! Pipeline configuration file plus the flags that override it.

use std::path::Path;

use clap::Args;
use navcurate_core::filter::FilterConfig;
use navcurate_core::sampler::SamplerConfig;
use navcurate_core::{Axis, AxisConvention};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Contents of a `--config` file. Missing sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub sampler: SamplerConfig,
    pub convention: AxisConvention,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            sampler: SamplerConfig::default(),
            // Clips are anchored to their first camera pose.
            convention: AxisConvention::camera_frame(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::parse(path, e))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.filter.validate()?;
        self.sampler.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConventionFlags {
    /// Camera axis that looks forward, e.g. +z.
    #[arg(long, value_name = "AXIS")]
    pub camera_forward: Option<Axis>,
    /// World axis that points up, e.g. -y.
    #[arg(long, value_name = "AXIS")]
    pub world_up: Option<Axis>,
}

impl ConventionFlags {
    pub fn apply(&self, c: &mut AxisConvention) {
        if let Some(a) = self.camera_forward {
            c.camera_forward = a;
        }
        if let Some(a) = self.world_up {
            c.world_up = a;
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct FilterFlags {
    #[arg(long, value_name = "DEG")]
    pub pitch_range_max_deg: Option<f64>,
    #[arg(long, value_name = "DEG")]
    pub divergence_max_deg: Option<f64>,
    #[arg(long, value_name = "SECONDS")]
    pub window_seconds: Option<f64>,
    #[arg(long, value_name = "METERS")]
    pub min_window_displacement_m: Option<f64>,
    #[arg(long, value_name = "N")]
    pub crowd_count_threshold: Option<u32>,
    #[arg(long, value_name = "N")]
    pub crowd_frame_threshold: Option<u32>,
    #[arg(long, value_name = "LABEL")]
    pub person_label: Option<String>,
    #[arg(long, value_name = "SCORE")]
    pub person_score_min: Option<f64>,
}

impl FilterFlags {
    pub fn apply(&self, c: &mut FilterConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone();
                }
            )*};
        }
        set!(
            pitch_range_max_deg,
            divergence_max_deg,
            window_seconds,
            min_window_displacement_m,
            crowd_count_threshold,
            crowd_frame_threshold,
            person_label,
            person_score_min
        );
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplerFlags {
    #[arg(long, value_name = "N")]
    pub history_len: Option<usize>,
    #[arg(long, value_name = "N")]
    pub horizon: Option<usize>,
    #[arg(long, value_name = "FRAMES")]
    pub min_offset: Option<usize>,
    #[arg(long, value_name = "FRAMES")]
    pub max_offset: Option<usize>,
    #[arg(long, value_name = "FRAMES")]
    pub arrival_window: Option<usize>,
    #[arg(long, value_name = "P")]
    pub arrival_fraction: Option<f64>,
    #[arg(long, value_name = "FRAMES")]
    pub waypoint_stride: Option<usize>,
    #[arg(long, value_name = "N")]
    pub draws_per_landmark: Option<usize>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

impl SamplerFlags {
    pub fn apply(&self, c: &mut SamplerConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    c.$f = v;
                }
            )*};
        }
        set!(
            history_len,
            horizon,
            min_offset,
            max_offset,
            arrival_window,
            arrival_fraction,
            waypoint_stride,
            draws_per_landmark,
            seed
        );
    }
}
