//! On-disk formats.
//!
//! * Pose files: one `timestamp tx ty tz qx qy qz qw` line per frame, single-space
//!   separated, `#` starts a comment line.
//! * Clip files: pose files whose leading comment block carries `key=value`
//!   metadata (`clip_id`, `source_id`, `fps`, `start_frame`).
//! * Detections, landmarks, samples and predictions: UTF-8 JSON lines, one record
//!   per line, keys in struct declaration order.
//! * Reports: one pretty-printed JSON document with sorted keys.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clip::Clip;
use crate::error::{Error, Result};
use crate::geometry::{EgoWaypoint, Pose};
use crate::sampler::TrainingSample;

/// A validated pose stream from one source video.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub id: String,
    pub fps: f64,
    pub poses: Vec<Pose>,
}

impl RawTrajectory {
    pub fn new(id: impl Into<String>, fps: f64, poses: Vec<Pose>) -> Result<Self> {
        let traj = Self { id: id.into(), fps, poses };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Validation(format!("fps must be positive, got {}", self.fps)));
        }
        if self.poses.is_empty() {
            return Err(Error::Validation(format!("trajectory {:?} has no poses", self.id)));
        }
        check_monotonic(&self.poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.poses.first(), self.poses.last()) {
            (Some(a), Some(b)) => b.timestamp() - a.timestamp(),
            _ => 0.0,
        }
    }
}

pub(crate) fn check_monotonic(poses: &[Pose]) -> Result<()> {
    for (i, w) in poses.windows(2).enumerate() {
        if w[1].timestamp() <= w[0].timestamp() {
            return Err(Error::Validation(format!(
                "timestamps not strictly increasing at frame {}: {} after {}",
                i + 1,
                w[1].timestamp(),
                w[0].timestamp()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub label: String,
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFrame {
    /// Frame index in the source trajectory's numbering.
    pub frame: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkAnnotation {
    pub clip_id: String,
    /// Goal frame index within the clip.
    pub goal_frame: u64,
    pub bbox: [f64; 4],
    pub name: String,
    /// Free-form navigation instruction.
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub predicted: Vec<EgoWaypoint>,
    pub ground_truth: Vec<EgoWaypoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_arrival: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_label: Option<bool>,
}

/// Why a decoded record is unacceptable: `Malformed` maps to a parse error with
/// the line number, `Rejected` to a validation error.
#[derive(Debug)]
pub enum Invalid {
    Malformed(String),
    Rejected(String),
}

/// A line-delimited record type with content checks beyond its JSON shape.
pub trait Record: Serialize + DeserializeOwned {
    fn check(&self) -> std::result::Result<(), Invalid>;
}

fn check_bbox(b: &[f64; 4]) -> std::result::Result<(), Invalid> {
    if !b.iter().all(|v| v.is_finite()) || b[0] > b[2] || b[1] > b[3] {
        return Err(Invalid::Malformed(format!("invalid bbox {b:?}")));
    }
    Ok(())
}

impl Record for DetectionFrame {
    fn check(&self) -> std::result::Result<(), Invalid> {
        for d in &self.detections {
            check_bbox(&d.bbox)?;
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Invalid::Malformed(format!("score {} outside [0, 1]", d.score)));
            }
        }
        Ok(())
    }
}

impl Record for LandmarkAnnotation {
    fn check(&self) -> std::result::Result<(), Invalid> {
        check_bbox(&self.bbox)?;
        if self.instruction.trim().is_empty() {
            return Err(Invalid::Rejected(format!(
                "landmark {:?} in clip {:?} has an empty instruction",
                self.name, self.clip_id
            )));
        }
        Ok(())
    }
}

impl Record for PredictionRecord {
    fn check(&self) -> std::result::Result<(), Invalid> {
        if self.predicted.is_empty() || self.predicted.len() != self.ground_truth.len() {
            return Err(Invalid::Malformed(format!(
                "predicted/ground_truth lengths {} and {} must match and be non-zero",
                self.predicted.len(),
                self.ground_truth.len()
            )));
        }
        if let Some(p) = self.predicted_arrival {
            if !(0.0..=1.0).contains(&p) {
                return Err(Invalid::Malformed(format!("predicted_arrival {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl Record for TrainingSample {
    fn check(&self) -> std::result::Result<(), Invalid> {
        if self.history_frames.is_empty() || self.waypoints.is_empty() {
            return Err(Invalid::Malformed("empty history or waypoints".into()));
        }
        if self.t > self.t_g {
            return Err(Invalid::Malformed(format!("t {} after t_g {}", self.t, self.t_g)));
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn location(path: &Path) -> String {
    path.display().to_string()
}

/// Parses JSON-lines text. Blank lines are skipped.
pub fn parse_records_str<T: Record>(text: &str, location: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(line).map_err(|e| Error::parse(location, i + 1, e.to_string()))?;
        match rec.check() {
            Ok(()) => out.push(rec),
            Err(Invalid::Malformed(m)) => return Err(Error::parse(location, i + 1, m)),
            Err(Invalid::Rejected(m)) => return Err(Error::Validation(format!("{location}:{}: {m}", i + 1))),
        }
    }
    Ok(out)
}

pub fn parse_records<T: Record>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records_str(&text, &location(path))
}

pub fn format_records<T: Record>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        // Records hold only plain data; serialization cannot fail.
        out.push_str(&serde_json::to_string(r).expect("record serialization"));
        out.push('\n');
    }
    out
}

pub fn write_records<T: Record>(records: &[T], path: &Path) -> Result<()> {
    write_bytes(path, format_records(records).as_bytes())
}

/// Reads a detections file. Frames come back sorted by index; records sharing a
/// frame index are merged in file order.
pub fn parse_detections(path: &Path) -> Result<Vec<DetectionFrame>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections_str(&text, &location(path))
}

pub fn parse_detections_str(text: &str, location: &str) -> Result<Vec<DetectionFrame>> {
    Ok(merge_detection_frames(parse_records_str(text, location)?))
}

pub fn merge_detection_frames(mut frames: Vec<DetectionFrame>) -> Vec<DetectionFrame> {
    frames.sort_by_key(|f| f.frame);
    let mut merged: Vec<DetectionFrame> = Vec::with_capacity(frames.len());
    for f in frames {
        match merged.last_mut() {
            Some(last) if last.frame == f.frame => last.detections.extend(f.detections),
            _ => merged.push(f),
        }
    }
    merged
}

pub fn write_detections(frames: &[DetectionFrame], path: &Path) -> Result<()> {
    write_records(frames, path)
}

pub fn parse_landmarks(path: &Path) -> Result<Vec<LandmarkAnnotation>> {
    parse_records(path)
}

pub fn write_landmarks(landmarks: &[LandmarkAnnotation], path: &Path) -> Result<()> {
    write_records(landmarks, path)
}

pub fn parse_samples(path: &Path) -> Result<Vec<TrainingSample>> {
    parse_records(path)
}

pub fn write_samples(samples: &[TrainingSample], path: &Path) -> Result<()> {
    write_records(samples, path)
}

pub fn parse_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    parse_records(path)
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    write_records(records, path)
}

fn parse_pose_line(line: &str, location: &str, lineno: usize) -> Result<[f64; 8]> {
    let mut vals = [0.0; 8];
    let mut n = 0;
    for field in line.split(' ') {
        if n == 8 {
            return Err(Error::parse(location, lineno, "more than 8 fields"));
        }
        let v: f64 = field.parse().map_err(|_| Error::parse(location, lineno, format!("bad number {field:?}")))?;
        if !v.is_finite() {
            return Err(Error::parse(location, lineno, format!("non-finite value {field:?}")));
        }
        vals[n] = v;
        n += 1;
    }
    if n != 8 {
        return Err(Error::parse(location, lineno, format!("expected 8 fields, got {n}")));
    }
    Ok(vals)
}

/// Parses pose lines, returning poses plus the `#` comment lines (without the
/// leading `#`) that precede the first pose.
fn parse_pose_text(text: &str, location: &str) -> Result<(Vec<Pose>, Vec<String>)> {
    let mut poses = Vec::new();
    let mut header = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if poses.is_empty() {
                header.push(comment.trim().to_string());
            }
            continue;
        }
        let v = parse_pose_line(line, location, i + 1)?;
        let pose = Pose::new(v[0], [v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])
            .map_err(|e| Error::Validation(format!("{location}:{}: {e}", i + 1)))?;
        poses.push(pose);
    }
    Ok((poses, header))
}

pub fn parse_pose_str(text: &str, id: &str, fps: f64) -> Result<RawTrajectory> {
    let (poses, _) = parse_pose_text(text, id)?;
    RawTrajectory::new(id, fps, poses)
}

/// Reads a pose file; the trajectory id is the file stem.
pub fn parse_pose_file(path: &Path, fps: f64) -> Result<RawTrajectory> {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_pose_file_as(path, &id, fps)
}

pub fn parse_pose_file_as(path: &Path, id: &str, fps: f64) -> Result<RawTrajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (poses, _) = parse_pose_text(&text, &location(path))?;
    RawTrajectory::new(id, fps, poses)
}

pub fn format_pose_line(out: &mut String, p: &Pose) {
    let t = p.position();
    let [qx, qy, qz, qw] = p.quat_xyzw();
    let mut buf = ryu::Buffer::new();
    for (i, v) in [p.timestamp(), t.x, t.y, t.z, qx, qy, qz, qw].into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // Shortest round-trip digits; integral values without the ".0".
        let s = buf.format(v);
        out.push_str(s.strip_suffix(".0").unwrap_or(s));
    }
    out.push('\n');
}

pub fn format_poses(poses: &[Pose]) -> String {
    let mut out = String::with_capacity(poses.len() * 96);
    for p in poses {
        format_pose_line(&mut out, p);
    }
    out
}

pub fn write_pose_file(traj: &RawTrajectory, path: &Path) -> Result<()> {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    out.push_str(&format_poses(&traj.poses));
    write_bytes(path, out.as_bytes())
}

pub fn format_clip(clip: &Clip) -> String {
    let mut out = String::with_capacity(clip.poses.len() * 96 + 128);
    let _ = writeln!(out, "# clip_id={}", clip.clip_id);
    let _ = writeln!(out, "# source_id={}", clip.source_id);
    let _ = writeln!(out, "# fps={}", clip.fps);
    let _ = writeln!(out, "# start_frame={}", clip.start_frame);
    out.push_str(&format_poses(&clip.poses));
    out
}

pub fn write_clip_file(clip: &Clip, path: &Path) -> Result<()> {
    write_bytes(path, format_clip(clip).as_bytes())
}

pub fn parse_clip_str(text: &str, location: &str) -> Result<Clip> {
    let (poses, header) = parse_pose_text(text, location)?;
    let field = |key: &str| -> Result<&str> {
        header
            .iter()
            .find_map(|h| h.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::parse(location, 0, format!("missing clip header {key}")))
    };
    let clip_id = field("clip_id")?.to_string();
    let source_id = field("source_id")?.to_string();
    let fps: f64 = field("fps")?.parse().map_err(|_| Error::parse(location, 0, "bad fps header"))?;
    let start_frame: usize =
        field("start_frame")?.parse().map_err(|_| Error::parse(location, 0, "bad start_frame header"))?;
    let clip = Clip { clip_id, source_id, fps, poses, start_frame };
    clip.validate()?;
    Ok(clip)
}

pub fn parse_clip_file(path: &Path) -> Result<Clip> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clip_str(&text, &location(path))
}

/// Renders any serializable report as pretty JSON with keys sorted at every level.
pub fn format_report<T: Serialize>(report: &T) -> Result<String> {
    // serde_json::Value uses a BTreeMap, which yields sorted keys.
    let value = serde_json::to_value(report).map_err(|e| Error::Validation(format!("unserializable report: {e}")))?;
    let mut s =
        serde_json::to_string_pretty(&value).map_err(|e| Error::Validation(format!("unserializable report: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    write_bytes(path, format_report(report)?.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a newline-separated list, ignoring blank lines and `#` comments.
pub fn read_list(path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if !line.is_empty() && !line.starts_with('#') {
            out.push(line.to_string());
        }
    }
    Ok(out)
}
