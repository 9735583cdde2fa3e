//! End-to-end checks of segmentation, filtering and sampling on synthetic data.

use std::collections::BTreeSet;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use navcurate_core::clip::{segment, Clip};
use navcurate_core::filter::{
    check_divergence, check_pitch, detections_in_clip, filter_clips, run_filters, FilterConfig, RejectReason,
};
use navcurate_core::geometry::{relative_pose, to_ego_waypoint, AxisConvention, Pose};
use navcurate_core::io::{self, RawTrajectory};
use navcurate_core::sampler::{build_corpus, SamplerConfig};
use navcurate_core::synth::{generate, generate_corpus, generate_detections, oracle_corpus, SynthKind, SynthSpec};
use proptest::prelude::*;

fn single_clip(spec: &SynthSpec) -> Clip {
    segment(&generate(spec).unwrap(), spec.duration_s).unwrap().remove(0)
}

/// Largest view/motion divergence computed straight from the closed-form spec:
/// no quaternions, no clip anchoring.
fn reference_max_divergence(spec: &SynthSpec, cfg: &FilterConfig) -> f64 {
    let n = spec.frame_count();
    let dt = spec.duration_s / (n - 1) as f64;
    let w = cfg.window_frames(spec.fps);
    let mut best = 0.0f64;
    for start in 0..=n - w {
        let end = start + w - 1;
        let (_, a) = spec.walk_state(start as f64 * dt);
        let (_, b) = spec.walk_state(end as f64 * dt);
        let d = b - a;
        if d.x.hypot(d.y) < cfg.min_window_displacement_m {
            continue;
        }
        let motion = d.y.atan2(d.x).to_degrees();
        let view = spec.view_yaw_deg((start + (w - 1) / 2) as f64 * dt);
        let mut diff = (view - motion) % 360.0;
        if diff > 180.0 {
            diff -= 360.0;
        } else if diff <= -180.0 {
            diff += 360.0;
        }
        best = best.max(diff.abs());
    }
    best
}

#[test]
fn head_turn_divergence_matches_reference_loop() {
    let cfg = FilterConfig::default();
    let conv = AxisConvention::camera_frame();
    for turn in [75.0, 45.0, 61.0, -80.0] {
        let spec = SynthSpec { turn_deg: turn, ..SynthSpec::new("h", SynthKind::HeadTurn) };
        let clip = single_clip(&spec);
        let expected = reference_max_divergence(&spec, &cfg);
        let got = check_divergence(&clip, &cfg, &conv).unwrap();
        assert!((got.max_divergence_deg - expected).abs() < 1e-6, "{turn}: {} vs {expected}", got.max_divergence_deg);
        assert_eq!(got.pass, turn.abs() <= 60.0);
    }
    let spec = SynthSpec { turn_deg: 75.0, ..SynthSpec::new("h", SynthKind::HeadTurn) };
    let d = check_divergence(&single_clip(&spec), &cfg, &conv).unwrap();
    assert!((d.max_divergence_deg - 75.0).abs() <= 2.0);
}

#[test]
fn arc_and_composite_match_reference_loop() {
    let cfg = FilterConfig::default();
    let conv = AxisConvention::camera_frame();
    for kind in [SynthKind::Arc, SynthKind::Composite] {
        let spec = SynthSpec { amplitude_deg: 4.0, turn_deg: 30.0, ..SynthSpec::new("a", kind) };
        let expected = reference_max_divergence(&spec, &cfg);
        let got = check_divergence(&single_clip(&spec), &cfg, &conv).unwrap();
        assert!((got.max_divergence_deg - expected).abs() < 1e-6, "{kind:?}");
    }
}

#[test]
fn raw_and_anchored_clips_agree() {
    // Unanchored poses under the Z-up convention and anchored poses under the
    // camera-frame convention describe the same motion.
    let cfg = FilterConfig::default();
    for spec in oracle_corpus().trajectories.iter().map(|e| &e.spec) {
        let traj = generate(spec).unwrap();
        let raw = Clip {
            clip_id: "raw".into(),
            source_id: traj.id.clone(),
            fps: traj.fps,
            poses: traj.poses.clone(),
            start_frame: 0,
        };
        let anchored = single_clip(spec);
        let a = run_filters(&raw, &[], &cfg, &AxisConvention::default());
        let b = run_filters(&anchored, &[], &cfg, &AxisConvention::camera_frame());
        assert_eq!(a.reasons, b.reasons, "{}", spec.name);
        assert!((a.diagnostics.pitch_range_deg - b.diagnostics.pitch_range_deg).abs() < 1e-6);
        let (da, db) = (a.diagnostics.max_divergence_deg.unwrap(), b.diagnostics.max_divergence_deg.unwrap());
        assert!((da - db).abs() < 1e-6, "{}: {da} vs {db}", spec.name);
    }
}

#[test]
fn pitch_sinusoid_boundaries() {
    let cfg = FilterConfig::default();
    let conv = AxisConvention::camera_frame();
    for (amp, pass) in [(10.0, false), (5.0, true)] {
        let spec = SynthSpec { amplitude_deg: amp, ..SynthSpec::new("p", SynthKind::SinusoidPitch) };
        let c = check_pitch(&single_clip(&spec), &cfg, &conv);
        assert!((c.range_deg - 2.0 * amp).abs() < 0.01, "{}", c.range_deg);
        assert_eq!(c.pass, pass);
    }
}

#[test]
fn oracle_corpus_accepts_six() {
    let corpus = generate_corpus(&oracle_corpus()).unwrap();
    let mut clips = Vec::new();
    let mut dets = Vec::new();
    for g in &corpus.trajectories {
        for c in segment(&g.trajectory, 120.0).unwrap() {
            clips.push(c);
            dets.push(g.detections.clone());
        }
    }
    let report = filter_clips(
        &clips,
        |c| {
            let i = clips.iter().position(|x| x.clip_id == c.clip_id).unwrap();
            detections_in_clip(&dets[i], c)
        },
        &FilterConfig::default(),
        &AxisConvention::camera_frame(),
    );
    assert_eq!(report.counts.clips_in, 10);
    assert_eq!(report.counts.accepted, 6);
    let rejected: Vec<(&str, Vec<RejectReason>)> = report
        .verdicts
        .iter()
        .filter(|v| !v.accepted)
        .map(|v| (v.clip_id.as_str(), v.reasons.iter().copied().collect()))
        .collect();
    assert_eq!(
        rejected,
        vec![
            ("crowd_4_0000", vec![RejectReason::CrowdDensity]),
            ("pitch_10_0000", vec![RejectReason::PitchRange]),
            ("sideways_0000", vec![RejectReason::ViewDivergence]),
            ("turn_75_0000", vec![RejectReason::ViewDivergence]),
        ]
    );
    assert_eq!(report.counts.rejected_by_reason[&RejectReason::ViewDivergence], 2);
}

#[test]
fn crowd_schedules_on_synth_clip() {
    let clip = single_clip(&SynthSpec::new("c", SynthKind::Straight));
    let cfg = FilterConfig::default();
    let conv = AxisConvention::camera_frame();
    for (sched, accepted) in [(vec![6; 4], false), (vec![6; 3], true), (vec![5; 5], true)] {
        let d = generate_detections(clip.len(), &sched);
        assert_eq!(run_filters(&clip, &d, &cfg, &conv).accepted, accepted, "{sched:?}");
    }
}

fn yaw_rotate(clip: &Clip, deg: f64, shift: Vector3<f64>) -> Clip {
    // Camera-frame convention: world up is -Y.
    let r = UnitQuaternion::from_axis_angle(&Unit::new_normalize(-Vector3::y()), deg.to_radians());
    Clip {
        poses: clip
            .poses
            .iter()
            .map(|p| Pose::from_parts(p.timestamp(), r * p.position() + shift, r * p.orientation()).unwrap())
            .collect(),
        ..clip.clone()
    }
}

#[test]
fn filters_invariant_under_global_yaw_and_translation() {
    let cfg = FilterConfig::default();
    let conv = AxisConvention::camera_frame();
    let spec = SynthSpec { amplitude_deg: 6.0, turn_deg: 50.0, ..SynthSpec::new("m", SynthKind::Composite) };
    let clip = single_clip(&spec);
    let base_p = check_pitch(&clip, &cfg, &conv);
    let base_d = check_divergence(&clip, &cfg, &conv).unwrap();
    for (deg, shift) in [(33.0, Vector3::new(5.0, 0.0, -3.0)), (-170.0, Vector3::new(-100.0, 2.0, 40.0))] {
        let moved = yaw_rotate(&clip, deg, shift);
        let p = check_pitch(&moved, &cfg, &conv);
        let d = check_divergence(&moved, &cfg, &conv).unwrap();
        assert!((p.range_deg - base_p.range_deg).abs() < 1e-9);
        assert!((d.max_divergence_deg - base_d.max_divergence_deg).abs() < 1e-9);
    }
}

fn arb_clip() -> impl Strategy<Value = Clip> {
    (
        prop_oneof![
            Just(SynthKind::Straight),
            Just(SynthKind::Arc),
            Just(SynthKind::SinusoidPitch),
            Just(SynthKind::HeadTurn),
            Just(SynthKind::Composite),
        ],
        0.0f64..25.0,
        0.0f64..120.0,
        -20.0f64..20.0,
        0.3f64..2.0,
    )
        .prop_map(|(kind, amp, turn, rate, speed)| {
            let spec = SynthSpec {
                duration_s: 20.0,
                amplitude_deg: amp,
                turn_deg: turn,
                turn_start_s: 5.0,
                yaw_rate_deg_s: rate,
                speed_mps: speed,
                ..SynthSpec::new("r", kind)
            };
            single_clip(&spec)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loosening_thresholds_never_rejects(
        clip in arb_clip(),
        pitch in 1.0f64..40.0,
        div in 1.0f64..120.0,
        dp in 0.0f64..20.0,
        dd in 0.0f64..60.0,
    ) {
        let conv = AxisConvention::camera_frame();
        let tight = FilterConfig { pitch_range_max_deg: pitch, divergence_max_deg: div, ..Default::default() };
        let loose = FilterConfig { pitch_range_max_deg: pitch + dp, divergence_max_deg: div + dd, ..Default::default() };
        let a = run_filters(&clip, &[], &tight, &conv);
        let b = run_filters(&clip, &[], &loose, &conv);
        prop_assert!(!a.accepted || b.accepted);
        prop_assert!(b.reasons.is_subset(&a.reasons));
        prop_assert_eq!(&a, &run_filters(&clip, &[], &tight, &conv));
    }
}

fn corpus_inputs() -> (Vec<Clip>, Vec<navcurate_core::io::LandmarkAnnotation>) {
    let mut c = oracle_corpus();
    c.landmarks_per_clip = 5;
    let g = generate_corpus(&c).unwrap();
    let clips = g.trajectories.iter().flat_map(|t| segment(&t.trajectory, 120.0).unwrap()).collect();
    (clips, g.landmarks)
}

#[test]
fn corpus_invariants_hold() {
    let (clips, landmarks) = corpus_inputs();
    let accepted: BTreeSet<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
    let conv = AxisConvention::camera_frame();
    let cfg = SamplerConfig { draws_per_landmark: 20, seed: 11, arrival_fraction: 0.3, ..Default::default() };
    let corpus = build_corpus(&clips, &landmarks, &accepted, &cfg, &conv).unwrap();
    assert_eq!(corpus.samples.len(), 10 * 5 * 20);
    assert!(corpus.samples.iter().any(|s| s.arrival));
    for s in &corpus.samples {
        let gap = s.t_g - s.t;
        if s.arrival {
            assert!(gap <= cfg.arrival_window);
        } else {
            assert!((cfg.min_offset..=cfg.max_offset).contains(&gap));
        }
        let clip = clips.iter().find(|c| c.clip_id == s.clip_id).unwrap();
        assert!(s.t + cfg.horizon * cfg.waypoint_stride < clip.len());
        for (i, w) in s.waypoints.iter().enumerate() {
            let target = clip.poses[s.t + (i + 1) * cfg.waypoint_stride].position();
            let again = to_ego_waypoint(&clip.poses[s.t], &target, &conv).unwrap();
            assert!((w.x - again.x).abs() < 1e-9 && (w.y - again.y).abs() < 1e-9);
        }
        // Re-anchoring preserves norms: first waypoint length is the ground distance.
        let rel = relative_pose(&clip.poses[s.t], &clip.poses[s.t + cfg.waypoint_stride]);
        let up = conv.ground_frame().up;
        let d = clip.poses[s.t + cfg.waypoint_stride].position() - clip.poses[s.t].position();
        let ground = (d - up * d.dot(&up)).norm();
        assert!((s.waypoints[0].norm() - ground).abs() < 1e-9);
        assert!(rel.position().norm() >= ground - 1e-9);
    }
    let ids: Vec<_> = corpus.samples.iter().map(|s| (s.clip_id.clone(), s.sample_id.clone())).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn seed_changes_draws_not_feasibility() {
    let (clips, mut landmarks) = corpus_inputs();
    // An infeasible and an out-of-bounds landmark.
    landmarks.push(navcurate_core::io::LandmarkAnnotation { goal_frame: 4, ..landmarks[0].clone() });
    landmarks.push(navcurate_core::io::LandmarkAnnotation { goal_frame: 3598, ..landmarks[0].clone() });
    let accepted: BTreeSet<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
    let conv = AxisConvention::camera_frame();
    let run = |seed| {
        let cfg = SamplerConfig { seed, ..Default::default() };
        build_corpus(&clips, &landmarks, &accepted, &cfg, &conv).unwrap()
    };
    let (a, b) = (run(1), run(2));
    let key = |c: &navcurate_core::sampler::Corpus| -> Vec<(String, usize)> {
        c.samples.iter().map(|s| (s.clip_id.clone(), s.t_g)).collect()
    };
    assert_eq!(key(&a), key(&b));
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.stats.skipped_infeasible, 1);
    assert_eq!(a.stats.skipped_out_of_bounds, 1);
    assert_ne!(a.samples.iter().map(|s| s.t).collect::<Vec<_>>(), b.samples.iter().map(|s| s.t).collect::<Vec<_>>());
    assert_eq!(run(1), a);
}

#[test]
fn sample_files_are_deterministic_and_round_trip() {
    let (clips, landmarks) = corpus_inputs();
    let accepted: BTreeSet<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
    let conv = AxisConvention::camera_frame();
    let cfg = SamplerConfig { seed: 99, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let corpus = pool.install(|| build_corpus(&clips, &landmarks, &accepted, &cfg, &conv).unwrap());
        let path = dir.path().join(format!("s{threads}.jsonl"));
        io::write_samples(&corpus.samples, &path).unwrap();
        assert_eq!(io::parse_samples(&path).unwrap(), corpus.samples);
        texts.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn clip_files_round_trip() {
    let clip =
        single_clip(&SynthSpec { duration_s: 5.0, turn_start_s: 1.0, ..SynthSpec::new("f", SynthKind::Composite) });
    let clip = Clip { start_frame: 300, ..clip };
    let text = io::format_clip(&clip);
    let back = io::parse_clip_str(&text, "mem").unwrap();
    assert_eq!(back.clip_id, clip.clip_id);
    assert_eq!(back.start_frame, 300);
    // Quaternions are renormalized on read, so compare numerically.
    for (a, b) in back.poses.iter().zip(&clip.poses) {
        assert_eq!(a.timestamp(), b.timestamp());
        assert_eq!(a.position(), b.position());
        assert!(a.orientation().angle_to(&b.orientation()) < 1e-12);
    }
    // A clip file is also a plain pose file.
    let raw: RawTrajectory = io::parse_pose_str(&text, "f", 30.0).unwrap();
    assert_eq!(raw.len(), clip.len());
}
