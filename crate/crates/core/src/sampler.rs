//! Training-sample construction: start-frame sampling before each landmark's
//! goal frame, egocentric future waypoints, and arrival labels.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clip::Clip;
use crate::error::{Error, Result};
use crate::filter::FilterVerdict;
use crate::geometry::{ego_waypoint_in, AxisConvention, EgoWaypoint};
use crate::io::LandmarkAnnotation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Observation history length in frames.
    pub history_len: usize,
    /// Number of future waypoints.
    pub horizon: usize,
    /// Closest non-arrival start, in frames before the goal.
    pub min_offset: usize,
    /// Farthest non-arrival start, in frames before the goal.
    pub max_offset: usize,
    /// A sample is an arrival case when `t_g - t` is at most this many frames.
    pub arrival_window: usize,
    /// Probability that a draw is taken from the arrival window.
    pub arrival_fraction: f64,
    /// Frames between consecutive history entries and waypoints.
    pub waypoint_stride: usize,
    pub draws_per_landmark: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            history_len: 8,
            horizon: 8,
            min_offset: 10,
            max_offset: 60,
            arrival_window: 2,
            arrival_fraction: 0.1,
            waypoint_stride: 1,
            draws_per_landmark: 1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.min_offset == 0 || self.min_offset > self.max_offset {
            return bad(format!("need 0 < min_offset <= max_offset, got {} and {}", self.min_offset, self.max_offset));
        }
        if self.history_len == 0 || self.horizon == 0 || self.waypoint_stride == 0 {
            return bad("history_len, horizon and waypoint_stride must be at least 1".into());
        }
        if self.arrival_window >= self.min_offset {
            return bad(format!("arrival_window {} must be below min_offset {}", self.arrival_window, self.min_offset));
        }
        if !(0.0..=1.0).contains(&self.arrival_fraction) {
            return bad(format!("arrival_fraction {} outside [0, 1]", self.arrival_fraction));
        }
        if self.draws_per_landmark == 0 {
            return bad("draws_per_landmark must be at least 1".into());
        }
        Ok(())
    }

    /// Furthest future frame offset a sample needs.
    pub fn future_span(&self) -> usize {
        self.horizon * self.waypoint_stride
    }
}

/// One supervision tuple. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSample {
    pub sample_id: String,
    pub clip_id: String,
    pub instruction: String,
    /// Current frame.
    pub t: usize,
    /// Goal frame.
    pub t_g: usize,
    /// Frames `t - (k-1)*stride ..= t`, clamped at 0.
    pub history_frames: Vec<usize>,
    /// Positions at `t + stride, ..., t + horizon*stride` in the ground frame of pose `t`.
    pub waypoints: Vec<EgoWaypoint>,
    pub arrival: bool,
}

/// Deterministic generator for one `(seed, clip, landmark, draw)` tuple.
///
/// The key is hashed into a ChaCha seed, so every draw has its own stream and the
/// result does not depend on how the work is scheduled.
pub fn draw_rng(seed: u64, clip_id: &str, landmark_ordinal: usize, draw_ordinal: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"navcurate/start-draw/v1");
    h.update(seed.to_le_bytes());
    h.update((clip_id.len() as u64).to_le_bytes());
    h.update(clip_id.as_bytes());
    h.update((landmark_ordinal as u64).to_le_bytes());
    h.update((draw_ordinal as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Draws a start frame `t` for goal frame `t_g`.
///
/// With probability `arrival_fraction` the draw is uniform over
/// `[t_g - arrival_window, t_g]`; otherwise uniform over
/// `[t_g - max_offset, t_g - min_offset]`, both clamped at frame 0.
pub fn draw_start<R: Rng + ?Sized>(t_g: usize, config: &SamplerConfig, rng: &mut R) -> Result<usize> {
    if t_g < config.min_offset {
        return Err(Error::Infeasible(format!(
            "goal frame {t_g} is closer to the clip start than min_offset {}",
            config.min_offset
        )));
    }
    if rng.random_bool(config.arrival_fraction) {
        Ok(rng.random_range(t_g.saturating_sub(config.arrival_window)..=t_g))
    } else {
        Ok(rng.random_range(t_g.saturating_sub(config.max_offset)..=t_g - config.min_offset))
    }
}

pub fn history_frames(t: usize, config: &SamplerConfig) -> Vec<usize> {
    (0..config.history_len).map(|j| t.saturating_sub((config.history_len - 1 - j) * config.waypoint_stride)).collect()
}

/// Builds the sample starting at frame `t` toward `landmark`.
pub fn build_sample(
    sample_id: impl Into<String>,
    clip: &Clip,
    landmark: &LandmarkAnnotation,
    t: usize,
    config: &SamplerConfig,
    convention: &AxisConvention,
) -> Result<TrainingSample> {
    let len = clip.poses.len();
    let t_g = usize::try_from(landmark.goal_frame).unwrap_or(usize::MAX);
    if t_g >= len {
        return Err(Error::OutOfBounds { frame: t_g, len });
    }
    let last = t + config.future_span();
    if last >= len {
        return Err(Error::OutOfBounds { frame: last, len });
    }
    let frame = convention.ground_frame();
    let reference = &clip.poses[t];
    let waypoints = (1..=config.horizon)
        .map(|i| {
            let target = clip.poses[t + i * config.waypoint_stride].position();
            ego_waypoint_in(&frame, reference, &target)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSample {
        sample_id: sample_id.into(),
        clip_id: clip.clip_id.clone(),
        instruction: landmark.instruction.clone(),
        t,
        t_g,
        history_frames: history_frames(t, config),
        waypoints,
        arrival: t_g.saturating_sub(t) <= config.arrival_window,
    })
}

pub fn sample_id(clip_id: &str, landmark_ordinal: usize, draw_ordinal: usize) -> String {
    format!("{clip_id}-l{landmark_ordinal:04}-d{draw_ordinal:02}")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub clips_accepted: usize,
    pub landmarks_total: usize,
    pub landmarks_used: usize,
    pub landmarks_on_rejected_clips: usize,
    pub landmarks_unknown_clip: usize,
    pub skipped_infeasible: usize,
    pub skipped_out_of_bounds: usize,
    pub skipped_gimbal: usize,
    pub samples: usize,
}

impl CorpusStats {
    fn absorb(&mut self, other: &CorpusStats) {
        self.landmarks_used += other.landmarks_used;
        self.skipped_infeasible += other.skipped_infeasible;
        self.skipped_out_of_bounds += other.skipped_out_of_bounds;
        self.skipped_gimbal += other.skipped_gimbal;
        self.samples += other.samples;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<TrainingSample>,
    pub stats: CorpusStats,
}

pub fn accepted_ids(verdicts: &[FilterVerdict]) -> BTreeSet<String> {
    verdicts.iter().filter(|v| v.accepted).map(|v| v.clip_id.clone()).collect()
}

/// Samples for one clip. A landmark is usable when its goal frame lies in the
/// clip, the non-arrival interval is non-empty and the horizon after the goal
/// frame still fits; usability does not depend on the seed.
fn clip_samples(
    clip: &Clip,
    landmarks: &[&LandmarkAnnotation],
    config: &SamplerConfig,
    convention: &AxisConvention,
) -> (Vec<TrainingSample>, CorpusStats) {
    let mut out = Vec::with_capacity(landmarks.len() * config.draws_per_landmark);
    let mut stats = CorpusStats::default();
    let len = clip.poses.len() as u64;
    for (ordinal, lm) in landmarks.iter().enumerate() {
        if lm.goal_frame >= len || lm.goal_frame + config.future_span() as u64 >= len {
            stats.skipped_out_of_bounds += 1;
            continue;
        }
        if (lm.goal_frame as usize) < config.min_offset {
            stats.skipped_infeasible += 1;
            continue;
        }
        stats.landmarks_used += 1;
        for draw in 0..config.draws_per_landmark {
            let mut rng = draw_rng(config.seed, &clip.clip_id, ordinal, draw);
            let sample = draw_start(lm.goal_frame as usize, config, &mut rng)
                .and_then(|t| build_sample(sample_id(&clip.clip_id, ordinal, draw), clip, lm, t, config, convention));
            match sample {
                Ok(s) => out.push(s),
                Err(Error::GimbalDegenerate) => stats.skipped_gimbal += 1,
                Err(Error::OutOfBounds { .. }) => stats.skipped_out_of_bounds += 1,
                Err(_) => stats.skipped_infeasible += 1,
            }
        }
    }
    stats.samples = out.len();
    (out, stats)
}

/// Builds samples for every accepted clip, in parallel on the current rayon pool.
/// Output is ordered by clip id, then landmark order within the clip, then draw.
pub fn build_corpus(
    clips: &[Clip],
    landmarks: &[LandmarkAnnotation],
    accepted: &BTreeSet<String>,
    config: &SamplerConfig,
    convention: &AxisConvention,
) -> Result<Corpus> {
    config.validate()?;
    let mut by_clip: BTreeMap<&str, Vec<&LandmarkAnnotation>> = BTreeMap::new();
    for lm in landmarks {
        by_clip.entry(lm.clip_id.as_str()).or_default().push(lm);
    }
    let mut chosen: Vec<&Clip> = clips.iter().filter(|c| accepted.contains(&c.clip_id)).collect();
    chosen.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));

    let mut stats =
        CorpusStats { clips_accepted: chosen.len(), landmarks_total: landmarks.len(), ..Default::default() };
    let known: BTreeSet<&str> = clips.iter().map(|c| c.clip_id.as_str()).collect();
    for (id, lms) in &by_clip {
        if !known.contains(id) {
            stats.landmarks_unknown_clip += lms.len();
        } else if !accepted.contains(*id) {
            stats.landmarks_on_rejected_clips += lms.len();
        }
    }

    let per_clip: Vec<(Vec<TrainingSample>, CorpusStats)> = chosen
        .par_iter()
        .map(|c| match by_clip.get(c.clip_id.as_str()) {
            Some(lms) => clip_samples(c, lms, config, convention),
            None => (Vec::new(), CorpusStats::default()),
        })
        .collect();

    let mut samples = Vec::new();
    for (s, st) in per_clip {
        stats.absorb(&st);
        samples.extend(s);
    }
    Ok(Corpus { samples, stats })
}
