//! Robot-compatibility filters: pitch range, view/motion divergence, crowd density.
//!
//! Every threshold is exceeded only by strict inequality, so a clip sitting
//! exactly on a threshold passes.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clip::Clip;
use crate::error::{Error, Result};
use crate::geometry::{AngleDeg, AxisConvention};
use crate::io::DetectionFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Maximum peak-to-peak pitch over a clip, degrees.
    pub pitch_range_max_deg: f64,
    /// Maximum angle between view heading and motion heading, degrees.
    pub divergence_max_deg: f64,
    pub window_seconds: f64,
    /// Windows moving less than this are treated as stationary and skipped.
    pub min_window_displacement_m: f64,
    /// A frame is crowded when it has more than this many people.
    pub crowd_count_threshold: u32,
    /// A clip is rejected when more than this many frames are crowded.
    pub crowd_frame_threshold: u32,
    pub person_label: String,
    pub person_score_min: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            pitch_range_max_deg: 15.0,
            divergence_max_deg: 60.0,
            window_seconds: 1.0,
            min_window_displacement_m: 0.5,
            crowd_count_threshold: 5,
            crowd_frame_threshold: 3,
            person_label: "person".to_string(),
            person_score_min: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pitch_range_max_deg", self.pitch_range_max_deg),
            ("divergence_max_deg", self.divergence_max_deg),
            ("window_seconds", self.window_seconds),
            ("min_window_displacement_m", self.min_window_displacement_m),
            ("crowd_count_threshold", self.crowd_count_threshold as f64),
            ("crowd_frame_threshold", self.crowd_frame_threshold as f64),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.person_score_min) {
            return Err(Error::Validation(format!(
                "person_score_min must lie in [0, 1], got {}",
                self.person_score_min
            )));
        }
        Ok(())
    }

    /// Sliding-window length in frames; never below two so a window has a displacement.
    pub fn window_frames(&self, fps: f64) -> usize {
        ((self.window_seconds * fps).round() as usize).max(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    PitchRange,
    ViewDivergence,
    CrowdDensity,
}

impl RejectReason {
    pub const ALL: [RejectReason; 3] =
        [RejectReason::PitchRange, RejectReason::ViewDivergence, RejectReason::CrowdDensity];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::PitchRange => "pitch_range",
            RejectReason::ViewDivergence => "view_divergence",
            RejectReason::CrowdDensity => "crowd_density",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub pitch_range_deg: f64,
    /// `None` when the clip is shorter than one window.
    pub max_divergence_deg: Option<f64>,
    pub crowded_frame_count: u32,
    pub out_of_range_detections: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub clip_id: String,
    pub accepted: bool,
    pub reasons: BTreeSet<RejectReason>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchCheck {
    pub pass: bool,
    pub range_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceCheck {
    pub pass: bool,
    pub max_divergence_deg: f64,
    /// Windows that moved far enough and had a defined view heading.
    pub windows_evaluated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrowdCheck {
    pub pass: bool,
    pub crowded_frames: u32,
    pub out_of_range: u32,
}

/// Peak-to-peak camera pitch over the clip.
pub fn check_pitch(clip: &Clip, config: &FilterConfig, convention: &AxisConvention) -> PitchCheck {
    let frame = convention.ground_frame();
    let (lo, hi) = clip
        .poses
        .iter()
        .map(|p| frame.pitch_rad(&p.orientation()))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let range_deg = if clip.poses.is_empty() { 0.0 } else { (hi - lo).to_degrees() };
    PitchCheck { pass: range_deg <= config.pitch_range_max_deg, range_deg }
}

/// Largest angle between the view heading at a window's center frame and the
/// ground-plane displacement across the window, over all sliding windows.
///
/// Stationary windows and windows whose center frame looks straight up or down
/// are skipped. If every window is skipped the clip passes with a zero maximum.
pub fn check_divergence(clip: &Clip, config: &FilterConfig, convention: &AxisConvention) -> Result<DivergenceCheck> {
    let w = config.window_frames(clip.fps);
    let n = clip.poses.len();
    if n < w {
        return Err(Error::TooShort { len: n, window: w });
    }
    let frame = convention.ground_frame();
    let ground: Vec<(f64, f64)> = clip.poses.iter().map(|p| frame.ground(&p.position())).collect();
    let yaw: Vec<Option<f64>> = clip.poses.iter().map(|p| frame.yaw_rad(&p.orientation()).ok()).collect();

    let min_disp = config.min_window_displacement_m;
    let mut max_div = 0.0f64;
    let mut evaluated = 0;
    for start in 0..=n - w {
        let end = start + w - 1;
        let Some(view) = yaw[start + (w - 1) / 2] else {
            continue;
        };
        let dx = ground[end].0 - ground[start].0;
        let dy = ground[end].1 - ground[start].1;
        if dx.hypot(dy) < min_disp {
            continue;
        }
        let motion = dy.atan2(dx);
        let div = AngleDeg::from_radians(view - motion).degrees().abs();
        max_div = max_div.max(div);
        evaluated += 1;
    }
    Ok(DivergenceCheck {
        pass: max_div <= config.divergence_max_deg,
        max_divergence_deg: max_div,
        windows_evaluated: evaluated,
    })
}

/// Counts crowded frames. Detection frame indices are in source-trajectory
/// numbering; entries outside the clip's frame range are ignored and counted.
pub fn check_crowd(clip: &Clip, detections: &[DetectionFrame], config: &FilterConfig) -> CrowdCheck {
    let range = clip.frame_range();
    let mut crowded = 0u32;
    let mut out_of_range = 0u32;
    for f in detections {
        if !usize::try_from(f.frame).is_ok_and(|i| range.contains(&i)) {
            out_of_range += 1;
            continue;
        }
        let persons = f
            .detections
            .iter()
            .filter(|d| d.label == config.person_label && d.score >= config.person_score_min)
            .count();
        if persons > config.crowd_count_threshold as usize {
            crowded += 1;
        }
    }
    if out_of_range > 0 {
        log::warn!("clip {}: ignored {out_of_range} detection frames outside {range:?}", clip.clip_id);
    }
    CrowdCheck { pass: crowded <= config.crowd_frame_threshold, crowded_frames: crowded, out_of_range }
}

/// Runs all three rules (never short-circuiting) and collects the failed ones.
pub fn run_filters(
    clip: &Clip,
    detections: &[DetectionFrame],
    config: &FilterConfig,
    convention: &AxisConvention,
) -> FilterVerdict {
    let mut reasons = BTreeSet::new();
    let pitch = check_pitch(clip, config, convention);
    if !pitch.pass {
        reasons.insert(RejectReason::PitchRange);
    }
    let max_divergence_deg = match check_divergence(clip, config, convention) {
        Ok(d) => {
            if !d.pass {
                reasons.insert(RejectReason::ViewDivergence);
            }
            Some(d.max_divergence_deg)
        }
        Err(_) => {
            reasons.insert(RejectReason::ViewDivergence);
            None
        }
    };
    let crowd = check_crowd(clip, detections, config);
    if !crowd.pass {
        reasons.insert(RejectReason::CrowdDensity);
    }
    FilterVerdict {
        clip_id: clip.clip_id.clone(),
        accepted: reasons.is_empty(),
        reasons,
        diagnostics: Diagnostics {
            pitch_range_deg: pitch.range_deg,
            max_divergence_deg,
            crowded_frame_count: crowd.crowded_frames,
            out_of_range_detections: crowd.out_of_range,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub clips_in: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// A clip failing several rules is counted under each of them.
    pub rejected_by_reason: BTreeMap<RejectReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub counts: FilterCounts,
    /// Sorted by clip id.
    pub verdicts: Vec<FilterVerdict>,
}

impl FilterReport {
    pub fn from_verdicts(mut verdicts: Vec<FilterVerdict>) -> Self {
        verdicts.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let mut by_reason: BTreeMap<RejectReason, usize> = RejectReason::ALL.iter().map(|r| (*r, 0)).collect();
        for v in &verdicts {
            for r in &v.reasons {
                *by_reason.entry(*r).or_default() += 1;
            }
        }
        let accepted = verdicts.iter().filter(|v| v.accepted).count();
        Self {
            counts: FilterCounts {
                clips_in: verdicts.len(),
                accepted,
                rejected: verdicts.len() - accepted,
                rejected_by_reason: by_reason,
            },
            verdicts,
        }
    }

    pub fn accepted_ids(&self) -> Vec<&str> {
        self.verdicts.iter().filter(|v| v.accepted).map(|v| v.clip_id.as_str()).collect()
    }
}

/// Filters clips in parallel on the current rayon pool. `detections_for` returns
/// the detection frames that apply to a clip (typically its source's frames).
pub fn filter_clips<'a, F>(
    clips: &[Clip],
    detections_for: F,
    config: &FilterConfig,
    convention: &AxisConvention,
) -> FilterReport
where
    F: Fn(&Clip) -> &'a [DetectionFrame] + Sync,
{
    let verdicts = clips.par_iter().map(|c| run_filters(c, detections_for(c), config, convention)).collect();
    FilterReport::from_verdicts(verdicts)
}

/// Slice of `frames` (sorted by frame index) that falls inside `clip`.
pub fn detections_in_clip<'a>(frames: &'a [DetectionFrame], clip: &Clip) -> &'a [DetectionFrame] {
    let r = clip.frame_range();
    let lo = frames.partition_point(|f| f.frame < r.start as u64);
    let hi = frames.partition_point(|f| f.frame < r.end as u64);
    &frames[lo..hi]
}
