//! Stage implementations. Each stage reads files, fans work out over the current
//! rayon pool, and writes its outputs from a single thread in sorted order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use navcurate_core::clip::{segment, Clip};
use navcurate_core::filter::{detections_in_clip, run_filters, FilterReport, FilterVerdict};
use navcurate_core::io::{self, DetectionFrame, PredictionRecord};
use navcurate_core::loss::{
    loss_arr, loss_hall, loss_ori, loss_reg, loss_total, FeatureSeq, LossComponents, LossWeights, RegNorm, ORI_EPS,
};
use navcurate_core::metrics::evaluate;
use navcurate_core::sampler::build_corpus;
use navcurate_core::synth::{generate_corpus, oracle_corpus, SynthCorpus};
use navcurate_core::{EgoWaypoint, Error};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::failure::Failure;
use crate::manifest::{key, sha256, Manifest, StageParams};

type Res<T> = Result<T, Failure>;

/// Sources processed per parallel batch by `segment`; bounds peak memory.
const SEGMENT_BATCH: usize = 64;

/// Input digest, pose count and rendered `(clip_id, text)` clips of one source.
type SegmentedSource = (String, usize, Vec<(String, String)>);

fn read(path: &Path) -> Res<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

fn utf8<'a>(path: &Path, bytes: &'a [u8]) -> Res<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| Failure::invalid("parse", format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Res<()> {
    fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

/// Files in `dir` with the given extension, sorted by name.
fn list_dir(dir: &Path, ext: &str) -> Res<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Failure::io(dir, e))? {
        let path = entry.map_err(|e| Failure::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// A single file, or every `*.ext` file of a directory.
fn file_or_dir(path: &Path, ext: &str) -> Res<Vec<PathBuf>> {
    if path.is_dir() {
        list_dir(path, ext)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

struct Loaded<T> {
    path: PathBuf,
    digest: String,
    value: T,
}

fn load_clips(dir: &Path) -> Res<Vec<Loaded<Clip>>> {
    let files = list_dir(dir, "txt")?;
    if files.is_empty() {
        return Err(Failure::empty(format!("no clip files in {}", dir.display())));
    }
    let clips: Vec<Loaded<Clip>> = files
        .into_par_iter()
        .map(|path| {
            let bytes = read(&path)?;
            let value = io::parse_clip_str(utf8(&path, &bytes)?, &key(&path))?;
            Ok(Loaded { digest: sha256(&bytes), path, value })
        })
        .collect::<Res<_>>()?;
    check_unique(clips.iter().map(|c| c.value.clip_id.as_str()))?;
    Ok(clips)
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Res<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Failure::invalid("validation", format!("duplicate clip id {id:?}")));
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Res<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn segment_stage(params: StageParams) -> Res<Manifest> {
    let StageParams::Segment { input, fps, clip_seconds, out } = &params else {
        unreachable!("segment_stage called with {}", params.name())
    };
    let (fps, clip_seconds) = (*fps, *clip_seconds);
    let files = file_or_dir(input, "txt")?;
    if files.is_empty() {
        return Err(Failure::empty(format!("no pose files in {}", input.display())));
    }
    create_dir(out)?;
    let mut m = Manifest::new(params.clone());
    let (mut poses_in, mut clips_out, mut too_short) = (0usize, 0usize, 0usize);
    for batch in files.chunks(SEGMENT_BATCH) {
        let results: Vec<SegmentedSource> = batch
            .par_iter()
            .map(|path| {
                let bytes = read(path)?;
                let traj = io::parse_pose_str(utf8(path, &bytes)?, &stem(path), fps)?;
                let rendered = match segment(&traj, clip_seconds) {
                    Ok(clips) => clips.iter().map(|c| (c.clip_id.clone(), io::format_clip(c))).collect(),
                    Err(Error::EmptyResult(msg)) => {
                        warn!("{}: {msg}", path.display());
                        Vec::new()
                    }
                    Err(e) => return Err(e.into()),
                };
                Ok((sha256(&bytes), traj.len(), rendered))
            })
            .collect::<Res<_>>()?;
        for (path, (digest, n, rendered)) in batch.iter().zip(results) {
            m.inputs.insert(key(path), digest);
            poses_in += n;
            too_short += usize::from(rendered.is_empty());
            clips_out += rendered.len();
            for (id, text) in rendered {
                m.emit(&out.join(format!("{id}.txt")), text.as_bytes())?;
            }
        }
    }
    if clips_out == 0 {
        return Err(Failure::empty(format!("no trajectory in {} is as long as one clip", input.display())));
    }
    m.counts = json!({
        "trajectories_in": files.len(),
        "poses_in": poses_in,
        "trajectories_too_short": too_short,
        "clips_out": clips_out,
    });
    Ok(m)
}

/// Detection frames either shared by every clip (single file) or per source id
/// (directory of `<source_id>.jsonl`).
enum DetectionSource {
    None,
    Shared(Vec<DetectionFrame>),
    PerSource(BTreeMap<String, Vec<DetectionFrame>>),
}

impl DetectionSource {
    fn load(path: Option<&Path>, m: &mut Manifest) -> Res<Self> {
        let Some(path) = path else {
            return Ok(DetectionSource::None);
        };
        let parse = |p: &Path| -> Res<(Vec<u8>, Vec<DetectionFrame>)> {
            let bytes = read(p)?;
            let frames = io::parse_detections_str(utf8(p, &bytes)?, &key(p))?;
            Ok((bytes, frames))
        };
        if path.is_dir() {
            let mut map = BTreeMap::new();
            for p in list_dir(path, "jsonl")? {
                let (bytes, frames) = parse(&p)?;
                m.input(&p, &bytes);
                map.insert(stem(&p), frames);
            }
            Ok(DetectionSource::PerSource(map))
        } else {
            let (bytes, frames) = parse(path)?;
            m.input(path, &bytes);
            Ok(DetectionSource::Shared(frames))
        }
    }

    fn for_clip(&self, clip: &Clip) -> &[DetectionFrame] {
        let frames = match self {
            DetectionSource::None => return &[],
            DetectionSource::Shared(f) => f.as_slice(),
            DetectionSource::PerSource(map) => map.get(&clip.source_id).map_or(&[][..], |f| f.as_slice()),
        };
        detections_in_clip(frames, clip)
    }
}

pub fn filter_stage(params: StageParams, config: &PipelineConfig) -> Res<Manifest> {
    let StageParams::Filter { clips, detections, report, accepted, .. } = &params else {
        unreachable!("filter_stage called with {}", params.name())
    };
    config.validate()?;
    let mut m = Manifest::new(params.clone());
    m.config = Some(serde_json::to_value(config).expect("config serializes"));
    let dets = DetectionSource::load(detections.as_deref(), &mut m)?;
    let files = list_dir(clips, "txt")?;
    if files.is_empty() {
        return Err(Failure::empty(format!("no clip files in {}", clips.display())));
    }
    // Clips are parsed, judged and dropped one by one to keep memory flat.
    let judged: Vec<(String, FilterVerdict)> = files
        .par_iter()
        .map(|path| {
            let bytes = read(path)?;
            let clip = io::parse_clip_str(utf8(path, &bytes)?, &key(path))?;
            let verdict = run_filters(&clip, dets.for_clip(&clip), &config.filter, &config.convention);
            Ok((sha256(&bytes), verdict))
        })
        .collect::<Res<_>>()?;
    check_unique(judged.iter().map(|(_, v)| v.clip_id.as_str()))?;
    let mut verdicts = Vec::with_capacity(judged.len());
    for (path, (digest, verdict)) in files.iter().zip(judged) {
        m.inputs.insert(key(path), digest);
        verdicts.push(verdict);
    }
    let rep = FilterReport::from_verdicts(verdicts);
    let list: String = rep.accepted_ids().iter().map(|id| format!("{id}\n")).collect();
    ensure_parent(report)?;
    ensure_parent(accepted)?;
    m.emit(report, io::format_report(&rep)?.as_bytes())?;
    m.emit(accepted, list.as_bytes())?;
    m.counts = serde_json::to_value(&rep.counts).expect("counts serialize");
    Ok(m)
}

pub fn samples_stage(params: StageParams, config: &PipelineConfig) -> Res<Manifest> {
    let StageParams::Samples { clips, landmarks, accepted, out, .. } = &params else {
        unreachable!("samples_stage called with {}", params.name())
    };
    config.validate()?;
    let mut m = Manifest::new(params.clone());
    m.config = Some(serde_json::to_value(config).expect("config serializes"));

    let lm_bytes = read(landmarks)?;
    let lms = io::parse_records_str(utf8(landmarks, &lm_bytes)?, &key(landmarks))?;
    m.input(landmarks, &lm_bytes);
    let list_bytes = read(accepted)?;
    m.input(accepted, &list_bytes);
    let ids: BTreeSet<String> = io::read_list(accepted)?.into_iter().collect();

    let loaded = load_clips(clips)?;
    let known: BTreeSet<&str> = loaded.iter().map(|c| c.value.clip_id.as_str()).collect();
    for id in ids.iter().filter(|id| !known.contains(id.as_str())) {
        warn!("accepted clip {id:?} not found in {}", clips.display());
    }
    for c in &loaded {
        m.inputs.insert(key(&c.path), c.digest.clone());
    }
    let all: Vec<Clip> = loaded.into_iter().map(|c| c.value).collect();

    let corpus = build_corpus(&all, &lms, &ids, &config.sampler, &config.convention)?;
    if corpus.samples.is_empty() {
        return Err(Failure::empty("no landmark produced a sample"));
    }
    ensure_parent(out)?;
    m.emit(out, io::format_records(&corpus.samples).as_bytes())?;
    m.counts = serde_json::to_value(&corpus.stats).expect("stats serialize");
    Ok(m)
}

pub fn eval_stage(params: StageParams) -> Res<Manifest> {
    let StageParams::Eval { pred, out, .. } = &params else { unreachable!("eval_stage called with {}", params.name()) };
    let mut m = Manifest::new(params.clone());
    let bytes = read(pred)?;
    let records: Vec<PredictionRecord> = io::parse_records_str(utf8(pred, &bytes)?, &key(pred))?;
    m.input(pred, &bytes);
    let report = evaluate(&records)?;
    ensure_parent(out)?;
    m.emit(out, io::format_report(&report)?.as_bytes())?;
    m.counts = json!({ "records": records.len() });
    Ok(m)
}

/// Trajectory names double as file names.
fn check_name(name: &str) -> Res<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Failure::invalid("invalid_spec", format!("trajectory name {name:?} is not a plain file name")))
    }
}

pub fn load_synth_corpus(spec: Option<&Path>) -> Res<(SynthCorpus, Option<Vec<u8>>)> {
    match spec {
        None => Ok((oracle_corpus(), None)),
        Some(path) => {
            let bytes = read(path)?;
            let corpus = serde_json::from_slice(&bytes).map_err(|e| Failure::parse(path, e))?;
            Ok((corpus, Some(bytes)))
        }
    }
}

pub fn synth_stage(params: StageParams, corpus: &SynthCorpus, spec_bytes: Option<&[u8]>) -> Res<Manifest> {
    let StageParams::Synth { spec, out } = &params else { unreachable!("synth_stage called with {}", params.name()) };
    for e in &corpus.trajectories {
        check_name(&e.spec.name)?;
    }
    let mut m = Manifest::new(params.clone());
    if let (Some(path), Some(bytes)) = (spec, spec_bytes) {
        m.input(path, bytes);
    }
    m.config = Some(serde_json::to_value(corpus).expect("corpus serializes"));
    let generated = generate_corpus(corpus)?;
    let (poses_dir, det_dir) = (out.join("poses"), out.join("detections"));
    create_dir(&poses_dir)?;
    create_dir(&det_dir)?;
    let rendered: Vec<(String, String, String)> = generated
        .trajectories
        .par_iter()
        .map(|g| {
            let mut poses = String::from("# timestamp tx ty tz qx qy qz qw\n");
            poses.push_str(&io::format_poses(&g.trajectory.poses));
            (g.trajectory.id.clone(), poses, io::format_records(&g.detections))
        })
        .collect();
    for (name, poses, dets) in &rendered {
        m.emit(&poses_dir.join(format!("{name}.txt")), poses.as_bytes())?;
        m.emit(&det_dir.join(format!("{name}.jsonl")), dets.as_bytes())?;
    }
    m.emit(&out.join("landmarks.jsonl"), io::format_records(&generated.landmarks).as_bytes())?;
    m.counts = json!({
        "trajectories": generated.trajectories.len(),
        "poses": generated.trajectories.iter().map(|g| g.trajectory.len()).sum::<usize>(),
        "landmarks": generated.landmarks.len(),
    });
    Ok(m)
}

/// Input record of the `loss` command. Each pair of arrays is optional; a
/// missing pair leaves its component out of the total.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossInput {
    #[serde(default)]
    pub pred: Option<Vec<EgoWaypoint>>,
    #[serde(default)]
    pub gt: Option<Vec<EgoWaypoint>>,
    #[serde(default)]
    pub logit: Option<f64>,
    #[serde(default)]
    pub label: Option<bool>,
    #[serde(default)]
    pub pred_features: Option<FeatureSeq>,
    #[serde(default)]
    pub gt_features: Option<FeatureSeq>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub reg_norm: RegNorm,
}

#[derive(Debug, Serialize)]
pub struct LossOutput {
    pub components: BTreeMap<&'static str, Option<f64>>,
    pub gradients: BTreeMap<&'static str, serde_json::Value>,
    pub weights: LossWeights,
    pub total: f64,
}

fn pair<T>(a: Option<T>, b: Option<T>, what: &str) -> Res<Option<(T, T)>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(Failure::invalid("validation", format!("{what}: both or neither must be given"))),
    }
}

pub fn loss_command(input: LossInput, weights: LossWeights) -> Res<LossOutput> {
    weights.validate()?;
    let mut components = BTreeMap::new();
    let mut gradients = BTreeMap::new();
    let mut c = LossComponents::default();
    if let Some((pred, gt)) = pair(input.pred, input.gt, "pred/gt")? {
        let reg = loss_reg(&pred, &gt, input.reg_norm)?;
        let ori = loss_ori(&pred, &gt, ORI_EPS)?;
        (c.reg, c.ori) = (reg.value, ori.value);
        components.insert("reg", Some(reg.value));
        components.insert("ori", Some(ori.value));
        gradients.insert("reg", json!(reg.grad));
        gradients.insert("ori", json!(ori.grad));
    } else {
        components.insert("reg", None);
        components.insert("ori", None);
    }
    if let Some((logit, label)) = match (input.logit, input.label) {
        (Some(z), Some(y)) => Some((z, y)),
        (None, None) => None,
        _ => return Err(Failure::invalid("validation", "logit/label: both or neither must be given")),
    } {
        let arr = loss_arr(logit, label);
        c.arr = arr.value;
        components.insert("arr", Some(arr.value));
        gradients.insert("arr", json!(arr.grad));
    } else {
        components.insert("arr", None);
    }
    if let Some((p, g)) = pair(input.pred_features, input.gt_features, "pred_features/gt_features")? {
        let hall = loss_hall(&p, &g)?;
        c.hall = hall.value;
        components.insert("hall", Some(hall.value));
        gradients.insert("hall", json!(hall.grad));
    } else {
        components.insert("hall", None);
    }
    Ok(LossOutput { components, gradients, weights, total: loss_total(&c, &weights) })
}
