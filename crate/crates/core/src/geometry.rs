//! Pose and rotation math.
//!
//! Orientations are camera-to-world rotations. Which camera axis looks forward
//! and which world axis points up is not fixed by the pose data itself, so every
//! angle query takes an [`AxisConvention`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Quaternions with a norm below this are rejected instead of renormalized.
pub const MIN_QUATERNION_NORM: f64 = 1e-3;

/// Horizontal norm of the forward vector below which yaw is undefined.
pub const VERTICAL_TOLERANCE: f64 = 1e-6;

/// A signed coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Axis {
    #[inline]
    fn index(self) -> usize {
        match self {
            Axis::PosX | Axis::NegX => 0,
            Axis::PosY | Axis::NegY => 1,
            Axis::PosZ | Axis::NegZ => 2,
        }
    }

    #[inline]
    fn sign(self) -> f64 {
        match self {
            Axis::PosX | Axis::PosY | Axis::PosZ => 1.0,
            _ => -1.0,
        }
    }

    fn from_index(index: usize, sign: f64) -> Axis {
        match (index, sign > 0.0) {
            (0, true) => Axis::PosX,
            (0, false) => Axis::NegX,
            (1, true) => Axis::PosY,
            (1, false) => Axis::NegY,
            (2, true) => Axis::PosZ,
            _ => Axis::NegZ,
        }
    }

    pub fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.index()] = self.sign();
        v
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::PosX => "+x",
            Axis::NegX => "-x",
            Axis::PosY => "+y",
            Axis::NegY => "-y",
            Axis::PosZ => "+z",
            Axis::NegZ => "-z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "+x" | "x" => Ok(Axis::PosX),
            "-x" => Ok(Axis::NegX),
            "+y" | "y" => Ok(Axis::PosY),
            "-y" => Ok(Axis::NegY),
            "+z" | "z" => Ok(Axis::PosZ),
            "-z" => Ok(Axis::NegZ),
            other => Err(Error::Validation(format!("unknown axis {other:?}"))),
        }
    }
}

impl Serialize for Axis {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Axis {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Names the camera's forward axis and the world's up axis.
///
/// The ground plane is spanned by a right-handed basis `(heading_ref, left_ref, up)`:
/// yaw 0 points along `heading_ref` and yaw +90 along `left_ref`. For the default
/// world +Z up that is (+X, +Y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConvention {
    pub camera_forward: Axis,
    pub world_up: Axis,
}

impl Default for AxisConvention {
    fn default() -> Self {
        Self { camera_forward: Axis::PosZ, world_up: Axis::PosZ }
    }
}

impl AxisConvention {
    /// Forward +Z, up -Y: the optical camera frame (x right, y down, z forward).
    ///
    /// A clip re-anchored to its first pose lives in that first camera's frame, so
    /// this is the convention to use on clips whose source camera uses optical axes.
    pub fn camera_frame() -> Self {
        Self { camera_forward: Axis::PosZ, world_up: Axis::NegY }
    }

    pub fn ground_frame(&self) -> GroundFrame {
        let up = self.world_up;
        let i = up.index();
        let heading_ref = Axis::from_index((i + 1) % 3, 1.0);
        let left_ref = Axis::from_index((i + 2) % 3, up.sign());
        GroundFrame {
            forward: self.camera_forward.unit(),
            heading_ref: heading_ref.unit(),
            left_ref: left_ref.unit(),
            up: up.unit(),
        }
    }
}

/// World-frame ground-plane basis plus the camera forward axis, resolved from an
/// [`AxisConvention`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundFrame {
    pub forward: Vector3<f64>,
    pub heading_ref: Vector3<f64>,
    pub left_ref: Vector3<f64>,
    pub up: Vector3<f64>,
}

impl GroundFrame {
    /// Ground-plane components `(along heading_ref, along left_ref)` of a world vector.
    #[inline]
    pub fn ground(&self, v: &Vector3<f64>) -> (f64, f64) {
        (v.dot(&self.heading_ref), v.dot(&self.left_ref))
    }

    #[inline]
    pub fn forward_of(&self, orientation: &UnitQuaternion<f64>) -> Vector3<f64> {
        orientation * self.forward
    }

    #[inline]
    pub fn pitch_rad(&self, orientation: &UnitQuaternion<f64>) -> f64 {
        let f = self.forward_of(orientation);
        f.dot(&self.up).clamp(-1.0, 1.0).asin()
    }

    /// Unit ground-plane heading `(cos yaw, sin yaw)` of the camera forward vector.
    #[inline]
    pub fn heading(&self, orientation: &UnitQuaternion<f64>) -> Result<(f64, f64)> {
        let f = self.forward_of(orientation);
        let (a, b) = self.ground(&f);
        let n = a.hypot(b);
        if n < VERTICAL_TOLERANCE {
            return Err(Error::GimbalDegenerate);
        }
        Ok((a / n, b / n))
    }

    #[inline]
    pub fn yaw_rad(&self, orientation: &UnitQuaternion<f64>) -> Result<f64> {
        let (c, s) = self.heading(orientation)?;
        Ok(s.atan2(c))
    }
}

/// An angle in degrees, always normalized to (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngleDeg(f64);

impl AngleDeg {
    pub fn new(degrees: f64) -> Self {
        let a = degrees.rem_euclid(360.0);
        Self(if a > 180.0 { a - 360.0 } else { a })
    }

    pub fn from_radians(radians: f64) -> Self {
        Self::new(radians.to_degrees())
    }

    #[inline]
    pub fn degrees(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }

    /// Signed difference `self - other`, normalized.
    pub fn diff(self, other: AngleDeg) -> AngleDeg {
        AngleDeg::new(self.0 - other.0)
    }
}

impl fmt::Display for AngleDeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}°", self.0)
    }
}

/// Timestamped camera pose in a world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    timestamp: f64,
    position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

impl Pose {
    /// Builds a pose from a raw `(x, y, z, w)` quaternion, renormalizing it.
    pub fn new(timestamp: f64, position: [f64; 3], quat_xyzw: [f64; 4]) -> Result<Self> {
        if !position.iter().chain(quat_xyzw.iter()).all(|v| v.is_finite()) {
            return Err(Error::Validation("non-finite pose component".into()));
        }
        let [x, y, z, w] = quat_xyzw;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if norm < MIN_QUATERNION_NORM {
            return Err(Error::Validation(format!("quaternion norm {norm} below {MIN_QUATERNION_NORM}")));
        }
        Self::from_parts(timestamp, Vector3::from(position), UnitQuaternion::new_unchecked(q / norm))
    }

    pub fn from_parts(timestamp: f64, position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Result<Self> {
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::Validation(format!("invalid timestamp {timestamp}")));
        }
        Ok(Self { timestamp, position, orientation })
    }

    pub fn identity(timestamp: f64) -> Self {
        Self { timestamp, position: Vector3::zeros(), orientation: UnitQuaternion::identity() }
    }

    #[inline]
    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    #[inline]
    pub fn position(&self) -> Vector3<f64> {
        self.position
    }

    #[inline]
    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.orientation
    }

    /// Quaternion components in `(x, y, z, w)` order.
    pub fn quat_xyzw(&self) -> [f64; 4] {
        let c = self.orientation.coords;
        [c[0], c[1], c[2], c[3]]
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }
}

/// A future position in the ground-plane frame of a reference pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoWaypoint {
    /// Meters forward of the reference pose.
    pub x: f64,
    /// Meters left of the reference pose.
    pub y: f64,
}

impl EgoWaypoint {
    pub const ORIGIN: EgoWaypoint = EgoWaypoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(&self, other: &EgoWaypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Camera pitch: elevation of the forward vector above the world horizontal.
/// Positive means looking up.
pub fn pitch_of(pose: &Pose, convention: &AxisConvention) -> AngleDeg {
    AngleDeg::from_radians(convention.ground_frame().pitch_rad(&pose.orientation))
}

/// Heading of the camera forward vector in the world ground plane.
pub fn yaw_of(pose: &Pose, convention: &AxisConvention) -> Result<AngleDeg> {
    convention.ground_frame().yaw_rad(&pose.orientation).map(AngleDeg::from_radians)
}

/// Expresses `p` in the frame of `anchor`. The timestamp of `p` is kept.
pub fn relative_pose(anchor: &Pose, p: &Pose) -> Pose {
    let inv = anchor.orientation.inverse();
    Pose { timestamp: p.timestamp, position: inv * (p.position - anchor.position), orientation: inv * p.orientation }
}

/// Inverse of [`relative_pose`]: maps a pose given in `anchor`'s frame back to world.
pub fn compose(anchor: &Pose, local: &Pose) -> Pose {
    Pose {
        timestamp: local.timestamp,
        position: anchor.orientation * local.position + anchor.position,
        orientation: anchor.orientation * local.orientation,
    }
}

/// Projects `target` into the egocentric ground-plane frame of `reference`:
/// x forward, y left, vertical offset dropped.
pub fn to_ego_waypoint(reference: &Pose, target: &Vector3<f64>, convention: &AxisConvention) -> Result<EgoWaypoint> {
    ego_waypoint_in(&convention.ground_frame(), reference, target)
}

#[inline]
pub(crate) fn ego_waypoint_in(frame: &GroundFrame, reference: &Pose, target: &Vector3<f64>) -> Result<EgoWaypoint> {
    let (c, s) = frame.heading(&reference.orientation)?;
    let (a, b) = frame.ground(&(target - reference.position));
    Ok(EgoWaypoint { x: c * a + s * b, y: -s * a + c * b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Unit;
    use proptest::prelude::*;

    fn rot(axis: Vector3<f64>, deg: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), deg.to_radians())
    }

    fn pose_with(q: UnitQuaternion<f64>, pos: [f64; 3]) -> Pose {
        Pose::from_parts(0.0, Vector3::from(pos), q).unwrap()
    }

    // Level camera facing world +X under the default convention: +Z camera axis
    // rotated 90 degrees about world +Y.
    fn level_forward_x() -> UnitQuaternion<f64> {
        rot(Vector3::y(), 90.0)
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(AngleDeg::new(180.0).degrees(), 180.0);
        assert_eq!(AngleDeg::new(-180.0).degrees(), 180.0);
        assert_eq!(AngleDeg::new(540.0).degrees(), 180.0);
        assert_abs_diff_eq!(AngleDeg::new(-190.0).degrees(), 170.0, epsilon = 1e-12);
        assert_abs_diff_eq!(AngleDeg::new(725.0).degrees(), 5.0, epsilon = 1e-12);
        assert_eq!(AngleDeg::new(-1e-20).degrees(), 0.0);
    }

    #[test]
    fn pose_construction_renormalizes_and_rejects() {
        let p = Pose::new(0.0, [0.0; 3], [0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(p.quat_xyzw(), [0.0, 0.0, 0.0, 1.0]);
        let p = Pose::new(0.0, [0.0; 3], [1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(p.orientation().quaternion().norm(), 1.0, epsilon = 1e-12);
        assert!(matches!(Pose::new(0.0, [0.0; 3], [0.0; 4]), Err(Error::Validation(_))));
        assert!(Pose::new(0.0, [0.0; 3], [0.0, 0.0, 0.0, 9e-4]).is_err());
        assert!(Pose::new(-1.0, [0.0; 3], [0.0, 0.0, 0.0, 1.0]).is_err());
        assert!(Pose::new(0.0, [f64::NAN, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn pitch_identity_looks_straight_up() {
        let p = Pose::identity(0.0);
        assert_abs_diff_eq!(pitch_of(&p, &AxisConvention::default()).degrees(), 90.0, epsilon = 1e-12);
        assert!(matches!(yaw_of(&p, &AxisConvention::default()), Err(Error::GimbalDegenerate)));
    }

    #[test]
    fn pitch_horizontal_forward_is_zero() {
        let p = pose_with(level_forward_x(), [0.0; 3]);
        assert_abs_diff_eq!(pitch_of(&p, &AxisConvention::default()).degrees(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pitch_thirty_degree_tilt() {
        // Rotating +Z by 60 degrees about +Y lands on (sin 60, 0, cos 60): the level
        // forward (+X) tilted up by 30 degrees.
        let q = rot(Vector3::y(), 60.0);
        let f = q.to_rotation_matrix() * Vector3::z();
        assert_abs_diff_eq!(f.z, 0.5, epsilon = 1e-15);
        let p = pose_with(q, [0.0; 3]);
        assert_abs_diff_eq!(pitch_of(&p, &AxisConvention::default()).degrees(), 30.0, epsilon = 1e-9);
    }

    #[test]
    fn yaw_reference_directions() {
        let conv = AxisConvention::default();
        let p = pose_with(level_forward_x(), [0.0; 3]);
        assert_abs_diff_eq!(yaw_of(&p, &conv).unwrap().degrees(), 0.0, epsilon = 1e-12);

        let p = pose_with(rot(Vector3::z(), 90.0) * level_forward_x(), [0.0; 3]);
        assert_abs_diff_eq!(yaw_of(&p, &conv).unwrap().degrees(), 90.0, epsilon = 1e-12);

        let p = pose_with(rot(Vector3::z(), -135.0) * level_forward_x(), [0.0; 3]);
        assert_abs_diff_eq!(yaw_of(&p, &conv).unwrap().degrees(), -135.0, epsilon = 1e-12);
        assert_abs_diff_eq!((-1.0f64).atan2(-1.0).to_degrees(), -135.0, epsilon = 1e-12);
    }

    #[test]
    fn camera_frame_identity_is_level() {
        let conv = AxisConvention::camera_frame();
        let p = Pose::identity(0.0);
        assert_abs_diff_eq!(pitch_of(&p, &conv).degrees(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(yaw_of(&p, &conv).unwrap().degrees(), 0.0, epsilon = 1e-12);
        // Camera x points right, so -x is left.
        let frame = conv.ground_frame();
        assert_eq!(frame.left_ref, -Vector3::x());
        assert_eq!(frame.heading_ref.cross(&frame.left_ref), frame.up);
    }

    #[test]
    fn ground_frames_are_right_handed() {
        use Axis::*;
        for up in [PosX, NegX, PosY, NegY, PosZ, NegZ] {
            let f = AxisConvention { camera_forward: PosZ, world_up: up }.ground_frame();
            assert_eq!(f.heading_ref.cross(&f.left_ref), f.up, "up {up}");
        }
    }

    #[test]
    fn relative_pose_examples() {
        let p = pose_with(rot(Vector3::new(1.0, 2.0, 3.0), 40.0), [1.0, -2.0, 0.5]);
        let r = relative_pose(&p, &p);
        assert_abs_diff_eq!(r.position().norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.orientation().angle(), 0.0, epsilon = 1e-7);

        let origin = Pose::identity(0.0);
        let r = relative_pose(&origin, &p);
        assert_eq!(r.position(), p.position());
        assert_eq!(r.orientation(), p.orientation());

        let anchor = pose_with(rot(Vector3::z(), 90.0), [0.0; 3]);
        let target = pose_with(UnitQuaternion::identity(), [1.0, 0.0, 0.0]);
        let r = relative_pose(&anchor, &target);
        assert_abs_diff_eq!(r.position(), Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn ego_waypoint_examples() {
        let conv = AxisConvention::default();
        let reference = pose_with(level_forward_x(), [3.0, 4.0, 1.0]);
        let w = to_ego_waypoint(&reference, &reference.position(), &conv).unwrap();
        assert_eq!(w, EgoWaypoint::ORIGIN);

        let w = to_ego_waypoint(&reference, &Vector3::new(5.0, 4.0, 7.0), &conv).unwrap();
        assert_abs_diff_eq!(w.x, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.y, 0.0, epsilon = 1e-12);

        let reference = pose_with(rot(Vector3::z(), 90.0) * level_forward_x(), [0.0; 3]);
        let w = to_ego_waypoint(&reference, &Vector3::new(1.0, 0.0, 0.0), &conv).unwrap();
        assert_abs_diff_eq!(w.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w.y, -1.0, epsilon = 1e-9);

        let up = pose_with(UnitQuaternion::identity(), [0.0; 3]);
        assert!(matches!(to_ego_waypoint(&up, &Vector3::x(), &conv), Err(Error::GimbalDegenerate)));
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("norm", |(a, b, c, d)| a * a + b * b + c * c + d * d > 0.1)
            .prop_map(|(x, y, z, w)| UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)))
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (arb_quat(), prop::array::uniform3(-100.0f64..100.0)).prop_map(|(q, p)| pose_with(q, p))
    }

    proptest! {
        #[test]
        fn relative_then_compose_round_trips(anchor in arb_pose(), p in arb_pose()) {
            let back = compose(&anchor, &relative_pose(&anchor, &p));
            prop_assert!((back.position() - p.position()).norm() < 1e-9);
            let dot = back.orientation().coords.dot(&p.orientation().coords).abs();
            prop_assert!(1.0 - dot < 1e-9);
        }

        #[test]
        fn angles_ignore_translation(p in arb_pose(), shift in prop::array::uniform3(-1e3f64..1e3)) {
            let conv = AxisConvention::default();
            let moved = pose_with(p.orientation(), (p.position() + Vector3::from(shift)).into());
            prop_assert_eq!(pitch_of(&p, &conv), pitch_of(&moved, &conv));
            match (yaw_of(&p, &conv), yaw_of(&moved, &conv)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "gimbal status changed"),
            }
        }

        #[test]
        fn returned_angles_are_normalized(p in arb_pose(), raw in -1e4f64..1e4) {
            let conv = AxisConvention::camera_frame();
            for a in [Some(pitch_of(&p, &conv)), yaw_of(&p, &conv).ok(), Some(AngleDeg::new(raw))]
                .into_iter()
                .flatten()
            {
                prop_assert!(a.degrees() > -180.0 && a.degrees() <= 180.0);
            }
        }

        #[test]
        fn ego_waypoint_is_yaw_equivariant(
            yaw in -180.0f64..180.0,
            pitch in -60.0f64..60.0,
            pos in prop::array::uniform3(-50.0f64..50.0),
            target in prop::array::uniform3(-50.0f64..50.0),
            spin in -360.0f64..360.0,
        ) {
            let conv = AxisConvention::default();
            let q = rot(Vector3::z(), yaw) * rot(Vector3::y(), -pitch) * level_forward_x();
            let reference = pose_with(q, pos);
            let target = Vector3::from(target);
            let w = to_ego_waypoint(&reference, &target, &conv).unwrap();

            let r = rot(Vector3::z(), spin);
            let reference2 = pose_with(r * q, (r * reference.position()).into());
            let w2 = to_ego_waypoint(&reference2, &(r * target), &conv).unwrap();
            prop_assert!((w.x - w2.x).abs() < 1e-9 && (w.y - w2.y).abs() < 1e-9);
        }
    }
}
