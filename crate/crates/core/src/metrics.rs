//! Waypoint-prediction metrics: orientation error (AOE / MAOE), average
//! displacement error (ADE) and discrete Fréchet distance (MADE).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EgoWaypoint;
use crate::io::PredictionRecord;

/// Steps shorter than this have no direction.
pub const MIN_STEP: f64 = 1e-9;

/// Unit direction of each step `w_i - w_{i-1}`, with `w_0` the origin.
/// `None` marks a zero-length step.
pub fn step_directions(waypoints: &[EgoWaypoint]) -> Vec<Option<[f64; 2]>> {
    let mut prev = EgoWaypoint::ORIGIN;
    waypoints
        .iter()
        .map(|w| {
            let (dx, dy) = (w.x - prev.x, w.y - prev.y);
            prev = *w;
            let n = dx.hypot(dy);
            (n >= MIN_STEP).then(|| [dx / n, dy / n])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationErrors {
    /// Angle in degrees for each step defined on both sides, in step order.
    pub errors_deg: Vec<f64>,
    /// Steps dropped because either direction was undefined.
    pub excluded: usize,
}

#[inline]
fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    // atan2 of cross and dot stays accurate near 0 and 180 degrees.
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.abs().atan2(dot).to_degrees()
}

pub fn orientation_errors(pred: &[EgoWaypoint], gt: &[EgoWaypoint]) -> Result<OrientationErrors> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: gt.len() });
    }
    let mut errors_deg = Vec::with_capacity(pred.len());
    let mut excluded = 0;
    for (p, g) in step_directions(pred).into_iter().zip(step_directions(gt)) {
        match (p, g) {
            (Some(p), Some(g)) => errors_deg.push(angle_between(p, g)),
            _ => excluded += 1,
        }
    }
    if errors_deg.is_empty() {
        return Err(Error::AllUndefined);
    }
    Ok(OrientationErrors { errors_deg, excluded })
}

/// Mean per-step orientation error, degrees.
pub fn aoe(pred: &[EgoWaypoint], gt: &[EgoWaypoint]) -> Result<f64> {
    let e = orientation_errors(pred, gt)?;
    Ok(mean(&e.errors_deg))
}

/// Largest per-step orientation error, degrees.
pub fn maoe(pred: &[EgoWaypoint], gt: &[EgoWaypoint]) -> Result<f64> {
    let e = orientation_errors(pred, gt)?;
    Ok(e.errors_deg.iter().copied().fold(0.0, f64::max))
}

pub fn ade(pred: &[EgoWaypoint], gt: &[EgoWaypoint]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: gt.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| p.distance(g)).sum();
    Ok(total / pred.len() as f64)
}

/// Discrete Fréchet distance between two point sequences.
///
/// `D(i, j) = max(d(p_i, q_j), min(D(i-1, j), D(i, j-1), D(i-1, j-1)))`, kept one
/// row at a time.
pub fn frechet_distance(p: &[EgoWaypoint], q: &[EgoWaypoint]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = q.len();
    let mut row = vec![0.0f64; m];
    for (i, pi) in p.iter().enumerate() {
        let mut diag = 0.0;
        for j in 0..m {
            let d = pi.distance(&q[j]);
            let above = row[j];
            let best = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(row[j - 1]),
                (_, 0) => d.max(above),
                _ => d.max(above.min(row[j - 1]).min(diag)),
            };
            diag = above;
            row[j] = best;
        }
    }
    Ok(row[m - 1])
}

/// MADE: discrete Fréchet distance with the agent's origin prepended to both paths.
pub fn discrete_frechet(pred: &[EgoWaypoint], gt: &[EgoWaypoint]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyInput);
    }
    let with_origin = |w: &[EgoWaypoint]| {
        let mut v = Vec::with_capacity(w.len() + 1);
        v.push(EgoWaypoint::ORIGIN);
        v.extend_from_slice(w);
        v
    };
    frechet_distance(&with_origin(pred), &with_origin(gt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    /// `None` when no step had a defined direction on both sides.
    pub aoe_deg: Option<f64>,
    pub maoe_deg: Option<f64>,
    pub ade_m: f64,
    pub made_m: f64,
    pub arrival_correct: Option<bool>,
}

pub fn sample_metrics(record: &PredictionRecord) -> Result<SampleMetrics> {
    let (pred, gt) = (&record.predicted, &record.ground_truth);
    let (aoe_deg, maoe_deg) = match orientation_errors(pred, gt) {
        Ok(e) => (Some(mean(&e.errors_deg)), Some(e.errors_deg.iter().copied().fold(0.0, f64::max))),
        Err(Error::AllUndefined) => (None, None),
        Err(e) => return Err(e),
    };
    let arrival_correct = match (record.predicted_arrival, record.arrival_label) {
        (Some(p), Some(label)) => Some((p >= 0.5) == label),
        _ => None,
    };
    Ok(SampleMetrics { aoe_deg, maoe_deg, ade_m: ade(pred, gt)?, made_m: discrete_frechet(pred, gt)?, arrival_correct })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_samples: usize,
    /// Samples contributing to AOE / MAOE.
    pub n_orientation_samples: usize,
    pub n_orientation_excluded: usize,
    pub aoe_deg: Option<f64>,
    pub maoe_deg: Option<f64>,
    pub ade_m: f64,
    pub made_m: f64,
    /// Records carrying both a predicted arrival probability and a label.
    pub n_arrival: usize,
    pub arrival_accuracy: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-record metrics (in parallel on the current rayon pool) and their
/// unweighted means, accumulated in input order.
pub fn evaluate(records: &[PredictionRecord]) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per: Vec<SampleMetrics> = records.par_iter().map(sample_metrics).collect::<Result<_>>()?;

    let aoes: Vec<f64> = per.iter().filter_map(|m| m.aoe_deg).collect();
    let maoes: Vec<f64> = per.iter().filter_map(|m| m.maoe_deg).collect();
    let ades: Vec<f64> = per.iter().map(|m| m.ade_m).collect();
    let mades: Vec<f64> = per.iter().map(|m| m.made_m).collect();
    let arrivals: Vec<bool> = per.iter().filter_map(|m| m.arrival_correct).collect();

    Ok(MetricReport {
        n_samples: per.len(),
        n_orientation_samples: aoes.len(),
        n_orientation_excluded: per.len() - aoes.len(),
        aoe_deg: (!aoes.is_empty()).then(|| mean(&aoes)),
        maoe_deg: (!maoes.is_empty()).then(|| mean(&maoes)),
        ade_m: mean(&ades),
        made_m: mean(&mades),
        n_arrival: arrivals.len(),
        arrival_accuracy: (!arrivals.is_empty())
            .then(|| arrivals.iter().filter(|&&c| c).count() as f64 / arrivals.len() as f64),
    })
}
