//! Curation and evaluation toolkit for egocentric navigation trajectories.
//!
//! The pipeline runs raw visual-odometry pose streams through fixed-length clip
//! segmentation ([`clip`]), robot-compatibility filtering ([`filter`]) and
//! training-sample construction ([`sampler`]). [`metrics`] scores waypoint
//! predictions and [`loss`] provides reference loss kernels with gradients.
//! [`synth`] generates closed-form data with known outcomes for testing.

pub mod clip;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{AngleDeg, Axis, AxisConvention, EgoWaypoint, Pose};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
