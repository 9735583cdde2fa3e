//! Closed-form synthetic trajectories, detections and landmarks with known
//! filter outcomes.
//!
//! Trajectories live in a Z-up world and use optical camera axes (x right,
//! y down, z forward). Raw trajectories therefore read correctly under
//! [`AxisConvention::default`], and clips cut from them (anchored to a level
//! first frame) under [`AxisConvention::camera_frame`].
//!
//! [`AxisConvention::default`]: crate::geometry::AxisConvention
//! [`AxisConvention::camera_frame`]: crate::geometry::AxisConvention::camera_frame

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clip::{segment, Clip, DEFAULT_CLIP_SECONDS};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::io::{Detection, DetectionFrame, LandmarkAnnotation, RawTrajectory};

/// Frames kept free after the last generated goal frame, so an 8-step horizon fits
/// at strides up to 7.
pub const LANDMARK_END_MARGIN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Constant heading, constant speed.
    Straight,
    /// Constant turn rate (`yaw_rate_deg_s`).
    Arc,
    /// Straight walk with `pitch = amplitude * sin(2 pi t / period)`.
    SinusoidPitch,
    /// Straight walk with a temporary camera yaw offset of `turn_deg`.
    HeadTurn,
    /// Fixed pose.
    Stationary,
    /// Arc, pitch sinusoid and head turn together.
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Trajectory id.
    pub name: String,
    pub kind: SynthKind,
    pub duration_s: f64,
    pub fps: f64,
    pub speed_mps: f64,
    pub amplitude_deg: f64,
    pub period_s: f64,
    pub turn_deg: f64,
    pub turn_start_s: f64,
    pub turn_len_s: f64,
    pub yaw_rate_deg_s: f64,
    /// Initial walking heading in the world ground plane.
    pub heading_deg: f64,
    /// Constant offset of the camera heading from the walking heading.
    pub yaw_offset_deg: f64,
    /// Uniform position jitter amplitude; zero gives exact closed-form paths.
    pub position_noise_m: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            kind: SynthKind::Straight,
            duration_s: DEFAULT_CLIP_SECONDS,
            fps: 30.0,
            speed_mps: 1.4,
            amplitude_deg: 10.0,
            period_s: 2.0,
            turn_deg: 75.0,
            turn_start_s: 30.0,
            turn_len_s: 3.0,
            yaw_rate_deg_s: 3.0,
            heading_deg: 0.0,
            yaw_offset_deg: 0.0,
            position_noise_m: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn new(name: impl Into<String>, kind: SynthKind) -> Self {
        Self { name: name.into(), kind, ..Default::default() }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    fn has_pitch(&self) -> bool {
        matches!(self.kind, SynthKind::SinusoidPitch | SynthKind::Composite)
    }

    fn has_turn(&self) -> bool {
        matches!(self.kind, SynthKind::HeadTurn | SynthKind::Composite)
    }

    fn turn_rate(&self) -> f64 {
        match self.kind {
            SynthKind::Arc | SynthKind::Composite => self.yaw_rate_deg_s.to_radians(),
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.kind != SynthKind::Stationary && !(self.speed_mps.is_finite() && self.speed_mps > 0.0) {
            return bad(format!("speed_mps must be positive, got {}", self.speed_mps));
        }
        if self.frame_count() < 2 {
            return bad("spec yields fewer than two frames".into());
        }
        if self.has_pitch() && !(self.period_s > 0.0 && self.amplitude_deg.abs() < 90.0) {
            return bad("pitch sinusoid needs period_s > 0 and |amplitude_deg| < 90".into());
        }
        if self.has_turn()
            && !(self.turn_len_s > 0.0
                && self.turn_start_s >= 0.0
                && self.turn_start_s + self.turn_len_s <= self.duration_s)
        {
            return bad(format!(
                "turn [{}, {}] s must lie inside [0, {}] s",
                self.turn_start_s,
                self.turn_start_s + self.turn_len_s,
                self.duration_s
            ));
        }
        if !(self.position_noise_m >= 0.0 && self.position_noise_m.is_finite()) {
            return bad("position_noise_m must be finite and >= 0".into());
        }
        let finite = [self.amplitude_deg, self.turn_deg, self.yaw_rate_deg_s, self.heading_deg, self.yaw_offset_deg];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("angles must be finite".into());
        }
        Ok(())
    }

    /// Head-turn yaw offset at time `t`: a trapezoid rising over the first quarter
    /// of the turn, holding `turn_deg` for the middle half and falling over the
    /// last quarter.
    pub fn turn_offset_deg(&self, t: f64) -> f64 {
        if !self.has_turn() {
            return 0.0;
        }
        let u = (t - self.turn_start_s) / self.turn_len_s;
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        self.turn_deg * (u.min(1.0 - u) / 0.25).min(1.0)
    }

    pub fn pitch_deg(&self, t: f64) -> f64 {
        if self.has_pitch() {
            self.amplitude_deg * (2.0 * PI * t / self.period_s).sin()
        } else {
            0.0
        }
    }

    /// Walking heading (radians) and ground position at time `t`.
    pub fn walk_state(&self, t: f64) -> (f64, Vector3<f64>) {
        let h0 = self.heading_deg.to_radians();
        if self.kind == SynthKind::Stationary {
            return (h0, Vector3::zeros());
        }
        let v = self.speed_mps;
        let w = self.turn_rate();
        if w == 0.0 {
            return (h0, Vector3::new(v * t * h0.cos(), v * t * h0.sin(), 0.0));
        }
        let h = h0 + w * t;
        let r = v / w;
        (h, Vector3::new(r * (h.sin() - h0.sin()), r * (h0.cos() - h.cos()), 0.0))
    }

    /// Camera view heading at time `t`, degrees.
    pub fn view_yaw_deg(&self, t: f64) -> f64 {
        self.walk_state(t).0.to_degrees() + self.yaw_offset_deg + self.turn_offset_deg(t)
    }
}

/// Camera-to-world rotation for an optical camera (x right, y down, z forward) in
/// a Z-up world looking along `yaw` with elevation `pitch`, without roll.
pub fn camera_orientation(yaw_rad: f64, pitch_rad: f64) -> UnitQuaternion<f64> {
    let (sy, cy) = yaw_rad.sin_cos();
    let (sp, cp) = pitch_rad.sin_cos();
    let forward = Vector3::new(cp * cy, cp * sy, sp);
    let cam_up = Vector3::new(-sp * cy, -sp * sy, cp);
    let right = forward.cross(&cam_up);
    let m = Matrix3::from_columns(&[right, -cam_up, forward]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Generates the closed-form trajectory. Frames are spaced evenly over
/// `[0, duration_s]`, so the first and last poses sit at the ends of the path.
pub fn generate(spec: &SynthSpec) -> Result<RawTrajectory> {
    spec.validate()?;
    let n = spec.frame_count();
    let dt = spec.duration_s / (n - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = spec.position_noise_m;
    let poses = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let (_, mut pos) = spec.walk_state(t);
            if noise > 0.0 {
                pos += Vector3::new(
                    rng.random_range(-noise..=noise),
                    rng.random_range(-noise..=noise),
                    rng.random_range(-noise..=noise),
                );
            }
            let q = camera_orientation(spec.view_yaw_deg(t).to_radians(), spec.pitch_deg(t).to_radians());
            Pose::from_parts(t, pos, q)
        })
        .collect::<Result<Vec<_>>>()?;
    RawTrajectory::new(spec.name.clone(), spec.fps, poses)
}

fn person_box(j: usize) -> [f64; 4] {
    let x = 20.0 + 70.0 * j as f64;
    [x, 180.0, x + 50.0, 400.0]
}

/// One detection frame per index in `0..frame_count`; frame `i` carries
/// `count_schedule[i]` person boxes (zero past the end of the schedule).
pub fn generate_detections(frame_count: usize, count_schedule: &[usize]) -> Vec<DetectionFrame> {
    (0..frame_count)
        .map(|i| DetectionFrame {
            frame: i as u64,
            detections: (0..count_schedule.get(i).copied().unwrap_or(0))
                .map(|j| Detection { label: "person".into(), bbox: person_box(j), score: 0.9 })
                .collect(),
        })
        .collect()
}

/// `n` landmarks with goal frames spread over the clip's second half, leaving
/// [`LANDMARK_END_MARGIN`] frames after the last one. Requests beyond the number of
/// available frames are truncated.
pub fn generate_landmarks(clip: &Clip, n: usize, seed: u64) -> Vec<LandmarkAnnotation> {
    let len = clip.poses.len();
    let lo = len / 2;
    let available = (len.saturating_sub(LANDMARK_END_MARGIN + 1) + 1).saturating_sub(lo);
    let n_out = n.min(available);
    if n_out < n {
        log::warn!(
            "clip {}: only {available} goal frames available, generating {n_out} of {n} landmarks",
            clip.clip_id
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_out)
        .map(|i| {
            let goal = lo + (2 * i + 1) * available / (2 * n_out);
            let x: f64 = rng.random_range(0.0..500.0);
            let y: f64 = rng.random_range(0.0..300.0);
            let w: f64 = rng.random_range(20.0..120.0);
            let h: f64 = rng.random_range(20.0..160.0);
            LandmarkAnnotation {
                clip_id: clip.clip_id.clone(),
                goal_frame: goal as u64,
                bbox: [x, y, x + w, y + h],
                name: format!("landmark {i}"),
                instruction: format!("go to landmark #{i} near {}", clip.clip_id),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthEntry {
    pub spec: SynthSpec,
    /// Per-frame person counts, starting at `crowd_start_frame`.
    #[serde(default)]
    pub crowd_schedule: Vec<usize>,
    #[serde(default)]
    pub crowd_start_frame: usize,
}

impl SynthEntry {
    pub fn new(spec: SynthSpec) -> Self {
        Self { spec, crowd_schedule: Vec::new(), crowd_start_frame: 0 }
    }

    pub fn with_crowd(mut self, schedule: Vec<usize>, start_frame: usize) -> Self {
        self.crowd_schedule = schedule;
        self.crowd_start_frame = start_frame;
        self
    }
}

/// A corpus description: trajectories plus how to cut and annotate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCorpus {
    pub clip_seconds: f64,
    pub landmarks_per_clip: usize,
    pub landmark_seed: u64,
    pub trajectories: Vec<SynthEntry>,
}

impl Default for SynthCorpus {
    fn default() -> Self {
        Self { clip_seconds: DEFAULT_CLIP_SECONDS, landmarks_per_clip: 3, landmark_seed: 0, trajectories: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedTrajectory {
    pub trajectory: RawTrajectory,
    pub detections: Vec<DetectionFrame>,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub trajectories: Vec<GeneratedTrajectory>,
    /// Landmarks for every clip the trajectories segment into.
    pub landmarks: Vec<LandmarkAnnotation>,
}

pub fn generate_corpus(corpus: &SynthCorpus) -> Result<GeneratedCorpus> {
    let mut names = std::collections::BTreeSet::new();
    let mut trajectories = Vec::with_capacity(corpus.trajectories.len());
    let mut landmarks = Vec::new();
    for entry in &corpus.trajectories {
        if !names.insert(entry.spec.name.clone()) {
            return Err(Error::InvalidSpec(format!("duplicate trajectory name {:?}", entry.spec.name)));
        }
        let trajectory = generate(&entry.spec)?;
        let mut schedule = vec![0; entry.crowd_start_frame];
        schedule.extend_from_slice(&entry.crowd_schedule);
        let detections = generate_detections(trajectory.len(), &schedule);
        match segment(&trajectory, corpus.clip_seconds) {
            Ok(clips) => {
                for clip in &clips {
                    landmarks.extend(generate_landmarks(clip, corpus.landmarks_per_clip, corpus.landmark_seed));
                }
            }
            Err(Error::EmptyResult(_)) => {}
            Err(e) => return Err(e),
        }
        trajectories.push(GeneratedTrajectory { trajectory, detections });
    }
    Ok(GeneratedCorpus { trajectories, landmarks })
}

/// Ten two-minute trajectories, one clip each, of which exactly four are built to
/// fail one filter rule apiece under the default filter thresholds:
/// `pitch_10` (pitch range), `turn_75` and `sideways` (view divergence), and
/// `crowd_4` (crowd density).
pub fn oracle_corpus() -> SynthCorpus {
    use SynthKind::*;
    let spec = |name: &str, kind| SynthSpec::new(name, kind);
    let entries = vec![
        SynthEntry::new(spec("straight", Straight)),
        SynthEntry::new(spec("arc", Arc)),
        SynthEntry::new(SynthSpec { amplitude_deg: 5.0, ..spec("pitch_5", SinusoidPitch) }),
        SynthEntry::new(SynthSpec { turn_deg: 45.0, ..spec("turn_45", HeadTurn) }),
        SynthEntry::new(spec("stationary", Stationary)),
        SynthEntry::new(spec("crowd_3", Straight)).with_crowd(vec![6; 3], 600),
        SynthEntry::new(SynthSpec { amplitude_deg: 10.0, ..spec("pitch_10", SinusoidPitch) }),
        SynthEntry::new(SynthSpec { turn_deg: 75.0, ..spec("turn_75", HeadTurn) }),
        SynthEntry::new(spec("crowd_4", Straight)).with_crowd(vec![6; 4], 600),
        SynthEntry::new(SynthSpec { yaw_offset_deg: 90.0, ..spec("sideways", Straight) }),
    ];
    SynthCorpus { trajectories: entries, ..Default::default() }
}
