//! Robot-native motion recovery from per-frame 2D keypoints.
//!
//! The crate covers the whole chain from pixels to an executable motion file:
//!
//! - [`model`]: URDF-subset kinematic trees, forward kinematics, Jacobians.
//! - [`camera`]: pinhole cameras, the nine-view hemispherical rig, frame conventions.
//! - [`dataset`]: keyframe distillation, annotation rendering, detector-noise model, JSON-lines I/O.
//! - [`lifting`]: 2D normalization and a small MLP lifting 2D keypoints to root-relative 3D.
//! - [`ik`]: damped Gauss-Newton inverse kinematics under box joint limits.
//! - [`pnp`]: Levenberg-Marquardt perspective-n-point for the metric root pose.
//! - [`trajectory`]: EMA smoothing, egocentric re-framing, gap filling, GMR motion files.
//! - [`metrics`]: MPJPE, PCK, OKS-based AP, spatial alignment error.
//! - [`pipeline`]: the recovery chain and the synthetic round-trip evaluation.

pub mod camera;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod ik;
pub mod lifting;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pnp;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{parse_model, JointConfiguration, KinematicModel};

/// Robot descriptions shipped with the crate (also under `fixtures/`).
pub mod fixtures {
    /// Planar two-link arm, unit links, revolute about +Z.
    pub const PLANAR_2LINK_URDF: &str = include_str!("../fixtures/planar_2link.urdf");
    /// 29-DoF humanoid with 33 keypoints.
    pub const HUMANOID_URDF: &str = include_str!("../fixtures/humanoid.urdf");

    pub fn humanoid() -> crate::KinematicModel {
        crate::parse_model(HUMANOID_URDF).expect("bundled humanoid fixture parses")
    }

    pub fn planar_2link() -> crate::KinematicModel {
        crate::parse_model(PLANAR_2LINK_URDF).expect("bundled planar fixture parses")
    }
}
