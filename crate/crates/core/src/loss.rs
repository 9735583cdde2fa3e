//! Reference loss kernels with analytic gradients with respect to the prediction.
//!
//! These are plain double-precision implementations meant for cross-checking a
//! training stack, not for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EgoWaypoint;

/// Default norm guard for the cosine in [`loss_ori`].
pub const ORI_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_reg: f64,
    pub lambda_ori: f64,
    pub lambda_arr: f64,
    pub lambda_hall: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_reg: 1.0, lambda_ori: 1.0, lambda_arr: 1.0, lambda_hall: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_reg", self.lambda_reg),
            ("lambda_ori", self.lambda_ori),
            ("lambda_arr", self.lambda_arr),
            ("lambda_hall", self.lambda_hall),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which distance the waypoint regression term averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegNorm {
    /// Mean squared Euclidean distance.
    #[default]
    Squared,
    /// Mean Euclidean distance. Gradient is zero where a point matches exactly.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointLoss {
    pub value: f64,
    /// d value / d predicted waypoint, as `[dx, dy]`.
    pub grad: Vec<[f64; 2]>,
}

fn check_lengths(pred: &[EgoWaypoint], gt: &[EgoWaypoint]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::LengthMismatch { left: pred.len(), right: gt.len() });
    }
    Ok(())
}

/// Waypoint regression loss.
pub fn loss_reg(pred: &[EgoWaypoint], gt: &[EgoWaypoint], norm: RegNorm) -> Result<WaypointLoss> {
    check_lengths(pred, gt)?;
    let k = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let (dx, dy) = (p.x - g.x, p.y - g.y);
        match norm {
            RegNorm::Squared => {
                value += dx * dx + dy * dy;
                grad.push([2.0 * dx / k, 2.0 * dy / k]);
            }
            RegNorm::Euclidean => {
                let n = dx.hypot(dy);
                value += n;
                grad.push(if n > 0.0 { [dx / (n * k), dy / (n * k)] } else { [0.0, 0.0] });
            }
        }
    }
    Ok(WaypointLoss { value: value / k, grad })
}

fn displacements(w: &[EgoWaypoint]) -> Vec<[f64; 2]> {
    let mut prev = EgoWaypoint::ORIGIN;
    w.iter()
        .map(|p| {
            let d = [p.x - prev.x, p.y - prev.y];
            prev = *p;
            d
        })
        .collect()
}

/// Negative mean cosine similarity between predicted and ground-truth step
/// displacements (first step measured from the origin). Norms are floored at `eps`.
pub fn loss_ori(pred: &[EgoWaypoint], gt: &[EgoWaypoint], eps: f64) -> Result<WaypointLoss> {
    check_lengths(pred, gt)?;
    let k = pred.len() as f64;
    let dp = displacements(pred);
    let dg = displacements(gt);

    let mut value = 0.0;
    // Gradient of the value with respect to each predicted displacement.
    let mut gd = Vec::with_capacity(dp.len());
    for (a, b) in dp.iter().zip(&dg) {
        let (na2, nb2) = (a[0] * a[0] + a[1] * a[1], b[0] * b[0] + b[1] * b[1]);
        let (na, nb) = (na2.sqrt(), nb2.sqrt());
        let (ga, gb) = (na.max(eps), nb.max(eps));
        let dot = a[0] * b[0] + a[1] * b[1];
        // sqrt(|a|^2 |b|^2) rather than |a| |b|, so identical steps give exactly 1.
        let den = if na > eps && nb > eps { (na2 * nb2).sqrt() } else { ga * gb };
        value += (dot / den).clamp(-1.0, 1.0);
        // d cos / d a = b / (|a| |b|) - dot * a / (|a|^3 |b|) while the guard is inactive.
        let mut g = [b[0] / (ga * gb), b[1] / (ga * gb)];
        if na > eps {
            let c = dot / (na * na * na * gb);
            g[0] -= c * a[0];
            g[1] -= c * a[1];
        }
        gd.push([-g[0] / k, -g[1] / k]);
    }
    // Displacement i depends on waypoint i (+1) and waypoint i-1 (-1).
    let n = gd.len();
    let grad = (0..n)
        .map(|i| {
            let next = if i + 1 < n { gd[i + 1] } else { [0.0, 0.0] };
            [gd[i][0] - next[0], gd[i][1] - next[1]]
        })
        .collect();
    Ok(WaypointLoss { value: -value / k, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLoss {
    pub value: f64,
    pub grad: f64,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, stable for large `|logit|`.
pub fn loss_arr(logit: f64, label: bool) -> ScalarLoss {
    let y = if label { 1.0 } else { 0.0 };
    ScalarLoss { value: logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p(), grad: sigmoid(logit) - y }
}

/// `k` feature vectors of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct FeatureSeq(Vec<Vec<f64>>);

impl FeatureSeq {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("feature rows have differing dimensions".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(Self(rows))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for FeatureSeq {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<FeatureSeq> for Vec<Vec<f64>> {
    fn from(f: FeatureSeq) -> Self {
        f.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLoss {
    pub value: f64,
    /// Subgradient with respect to the predicted features; `sign(0)` is taken as 0.
    pub grad: Vec<Vec<f64>>,
}

/// Mean over the horizon of the L1 distance between predicted and target features.
pub fn loss_hall(pred: &FeatureSeq, target: &FeatureSeq) -> Result<FeatureLoss> {
    if pred.len() != target.len() || pred.dim() != target.dim() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.len(),
            pred.dim(),
            target.len(),
            target.dim()
        )));
    }
    let k = pred.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .rows()
        .iter()
        .zip(target.rows())
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .map(|(a, b)| {
                    let d = a - b;
                    value += d.abs();
                    if d > 0.0 {
                        1.0 / k
                    } else if d < 0.0 {
                        -1.0 / k
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(FeatureLoss { value: value / k, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub reg: f64,
    pub ori: f64,
    pub arr: f64,
    pub hall: f64,
}

pub fn loss_total(c: &LossComponents, w: &LossWeights) -> f64 {
    w.lambda_reg * c.reg + w.lambda_ori * c.ori + w.lambda_arr * c.arr + w.lambda_hall * c.hall
}
