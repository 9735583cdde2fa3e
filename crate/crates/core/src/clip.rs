//! Fixed-duration clip segmentation with per-clip re-anchoring.

use crate::error::{Error, Result};
use crate::geometry::{relative_pose, Pose};
use crate::io::{check_monotonic, RawTrajectory};

pub const DEFAULT_CLIP_SECONDS: f64 = 120.0;

/// A fixed-length window of a source trajectory, expressed in the frame of its
/// first pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub source_id: String,
    pub fps: f64,
    pub poses: Vec<Pose>,
    /// Index of `poses[0]` in the source trajectory.
    pub start_frame: usize,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Source-frame index range covered by this clip.
    pub fn frame_range(&self) -> std::ops::Range<usize> {
        self.start_frame..self.start_frame + self.poses.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Validation(format!("clip {:?}: bad fps {}", self.clip_id, self.fps)));
        }
        if self.poses.is_empty() {
            return Err(Error::Validation(format!("clip {:?} is empty", self.clip_id)));
        }
        check_monotonic(&self.poses)
    }

    /// Builds a clip from world-frame poses, re-anchoring them to the first one.
    pub fn anchored(
        clip_id: impl Into<String>,
        source_id: impl Into<String>,
        fps: f64,
        start_frame: usize,
        world_poses: &[Pose],
    ) -> Result<Self> {
        let anchor = *world_poses.first().ok_or_else(|| Error::Validation("cannot anchor an empty clip".into()))?;
        let mut poses = Vec::with_capacity(world_poses.len());
        poses.push(Pose::identity(anchor.timestamp()));
        poses.extend(world_poses[1..].iter().map(|p| relative_pose(&anchor, p)));
        Ok(Self { clip_id: clip_id.into(), source_id: source_id.into(), fps, poses, start_frame })
    }
}

pub fn clip_id(source_id: &str, ordinal: usize) -> String {
    format!("{source_id}_{ordinal:04}")
}

/// Frames per clip for a given duration and rate.
pub fn clip_frames(clip_seconds: f64, fps: f64) -> usize {
    (clip_seconds * fps).round() as usize
}

/// Splits a trajectory into consecutive non-overlapping clips of
/// `round(clip_seconds * fps)` frames. A trailing partial window is dropped.
///
/// Returns [`Error::EmptyResult`] when not even one full clip fits.
pub fn segment(traj: &RawTrajectory, clip_seconds: f64) -> Result<Vec<Clip>> {
    if !(clip_seconds.is_finite() && clip_seconds > 0.0) {
        return Err(Error::Validation(format!("clip_seconds must be positive, got {clip_seconds}")));
    }
    traj.validate()?;
    let frames = clip_frames(clip_seconds, traj.fps);
    if frames == 0 {
        return Err(Error::Validation(format!("{clip_seconds} s at {} fps rounds to an empty clip", traj.fps)));
    }
    let count = traj.poses.len() / frames;
    if count == 0 {
        return Err(Error::EmptyResult(format!(
            "trajectory {:?} has {} frames, fewer than one {frames}-frame clip",
            traj.id,
            traj.poses.len()
        )));
    }
    (0..count)
        .map(|k| {
            let start = k * frames;
            Clip::anchored(clip_id(&traj.id, k), traj.id.clone(), traj.fps, start, &traj.poses[start..start + frames])
        })
        .collect()
}
