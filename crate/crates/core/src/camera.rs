//! Pinhole cameras and the hemispherical capture rig.
//!
//! The world is Z-up. Camera extrinsics map world points into the vision
//! camera frame (x right, y down, z forward). Cameras are placed in the
//! simulator convention first (a Z-up body frame: x forward, y left, z up)
//! and converted with [`sim_to_vision`].

use std::str::FromStr;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quat_from_wxyz_unchecked, quat_to_wxyz, wxyz_norm};

/// Points closer than this along the optical axis are not visible.
pub const Z_NEAR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Projection {
        let pixel = if p.z != 0.0 {
            Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
        } else {
            Vector2::new(self.cx, self.cy)
        };
        let inside = pixel.x >= 0.0
            && pixel.x <= self.width as f64
            && pixel.y >= 0.0
            && pixel.y <= self.height as f64;
        Projection {
            pixel,
            visible: p.z > Z_NEAR && inside,
        }
    }

    /// Camera-frame point at depth `z` along the ray through `pixel`.
    pub fn back_project(&self, pixel: &Vector2<f64>, z: f64) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) * z / self.fx,
            (pixel.y - self.cy) * z / self.fy,
            z,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub visible: bool,
}

/// Pinhole projection `u = fx x/z + cx`, `v = fy y/z + cy` of camera-frame
/// points, with a visibility flag for points behind `Z_NEAR` or off-image.
pub fn project(intrinsics: &CameraIntrinsics, camera_points: &[Vector3<f64>]) -> Vec<Projection> {
    camera_points
        .iter()
        .map(|p| intrinsics.project_point(p))
        .collect()
}

/// World-to-camera rigid transform (vision convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "ExtrinsicsRepr", try_from = "ExtrinsicsRepr")]
pub struct CameraExtrinsics {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct ExtrinsicsRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<CameraExtrinsics> for ExtrinsicsRepr {
    fn from(e: CameraExtrinsics) -> Self {
        Self {
            rotation: quat_to_wxyz(&e.rotation),
            translation: e.translation.into(),
        }
    }
}

impl TryFrom<ExtrinsicsRepr> for CameraExtrinsics {
    type Error = String;

    fn try_from(r: ExtrinsicsRepr) -> std::result::Result<Self, String> {
        if (wxyz_norm(r.rotation) - 1.0).abs() > 1e-9 {
            return Err(format!("extrinsic rotation {:?} is not unit norm", r.rotation));
        }
        Ok(Self {
            rotation: quat_from_wxyz_unchecked(r.rotation),
            translation: r.translation.into(),
        })
    }
}

impl CameraExtrinsics {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            rotation: iso.rotation,
            translation: iso.translation.vector,
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Optical axis (camera +z) in world coordinates.
    pub fn forward_axis(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    /// `self` followed by `next` (world -> self -> next), renormalized.
    pub fn then(&self, next: &CameraExtrinsics) -> CameraExtrinsics {
        let mut rotation = next.rotation * self.rotation;
        rotation.renormalize();
        CameraExtrinsics {
            rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }
}

/// Source frame conventions that [`sim_to_vision`] can convert from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// Z-up body camera frame: x forward, y left, z up.
    ZUpBody,
    /// USD camera frame: x right, y up, looking down -z.
    UsdCamera,
}

impl Convention {
    /// Proper rotation taking source-frame coordinates to the vision frame.
    pub fn to_vision_matrix(self) -> Matrix3<f64> {
        match self {
            Convention::ZUpBody => Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
            Convention::UsdCamera => Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Convention::ZUpBody => "z_up_body",
            Convention::UsdCamera => "usd_camera",
        }
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z_up_body" => Ok(Convention::ZUpBody),
            "usd_camera" => Ok(Convention::UsdCamera),
            other => Err(Error::UnknownConvention(other.to_string())),
        }
    }
}

pub fn sim_to_vision(points: &[Vector3<f64>], convention: Convention) -> Vec<Vector3<f64>> {
    let m = convention.to_vision_matrix();
    points.iter().map(|p| m * p).collect()
}

pub fn vision_to_sim(points: &[Vector3<f64>], convention: Convention) -> Vec<Vector3<f64>> {
    let m = convention.to_vision_matrix().transpose();
    points.iter().map(|p| m * p).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

impl Camera {
    /// Camera at `position` whose Z-up body frame has the given forward and
    /// left axes (world coordinates, orthonormal).
    pub fn from_body_axes(
        id: impl Into<String>,
        intrinsics: CameraIntrinsics,
        position: Vector3<f64>,
        forward: Vector3<f64>,
        left: Vector3<f64>,
    ) -> Self {
        let up = forward.cross(&left);
        let body_from_world = Matrix3::from_rows(&[
            forward.transpose(),
            left.transpose(),
            up.transpose(),
        ]);
        let r = Convention::ZUpBody.to_vision_matrix() * body_from_world;
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        Self {
            id: id.into(),
            intrinsics,
            extrinsics: CameraExtrinsics {
                rotation,
                translation: -(rotation * position),
            },
        }
    }

    /// Camera at `position` looking at `target`, horizon kept level.
    /// Falls back to a +X image-up heading when looking straight down/up.
    pub fn looking_at(
        id: impl Into<String>,
        intrinsics: CameraIntrinsics,
        position: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Self {
        let forward = (target - position).normalize();
        let side = Vector3::z().cross(&forward);
        let left = if side.norm() < 1e-12 {
            // straight down: image up is world +X
            Vector3::x().cross(&forward).normalize()
        } else {
            side.normalize()
        };
        Self::from_body_axes(id, intrinsics, position, forward, left)
    }

    pub fn world_to_camera(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        points
            .iter()
            .map(|p| self.extrinsics.world_to_camera(p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        for (i, c) in cameras.iter().enumerate() {
            if cameras[..i].iter().any(|o| o.id == c.id) {
                return Err(Error::InvalidArgument(format!("duplicate camera id `{}`", c.id)));
            }
            c.intrinsics.validate()?;
        }
        Ok(Self { cameras })
    }

    pub fn get(&self, id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rig: CameraRig = serde_json::from_str(text)?;
        Self::new(rig.cameras)
    }
}

/// Placement parameters for [`build_rig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigParams {
    /// Horizontal distance of side and diagonal cameras from `look_at`.
    pub radius: f64,
    pub side_height: f64,
    pub look_at: [f64; 3],
    /// Height of the top-down camera above `look_at`.
    pub top_height: f64,
    pub intrinsics: CameraIntrinsics,
}

impl Default for RigParams {
    fn default() -> Self {
        Self {
            radius: 3.0,
            side_height: 1.0,
            look_at: [0.0, 0.0, 1.0],
            top_height: 3.0,
            intrinsics: CameraIntrinsics::default(),
        }
    }
}

/// Nine-camera hemispherical rig with default intrinsics and top height.
pub fn build_hemispherical_rig(
    radius: f64,
    side_height: f64,
    look_at: Vector3<f64>,
) -> Result<CameraRig> {
    build_rig(&RigParams {
        radius,
        side_height,
        look_at: look_at.into(),
        ..RigParams::default()
    })
}

/// Four level side views at azimuths 0/90/180/270 deg, four diagonal views
/// at 45/135/225/315 deg pitched 45 deg down onto `look_at`, and one strict
/// top-down view.
pub fn build_rig(params: &RigParams) -> Result<CameraRig> {
    if !(params.radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rig radius must be positive, got {}",
            params.radius
        )));
    }
    if !(params.top_height > 0.0) {
        return Err(Error::InvalidArgument("top camera height must be positive".into()));
    }
    let look_at = Vector3::from(params.look_at);
    let intr = params.intrinsics;
    let r = params.radius;
    let mut cameras = Vec::with_capacity(9);
    for az_deg in [0u32, 90, 180, 270] {
        let az = (az_deg as f64).to_radians();
        let pos = Vector3::new(
            look_at.x + r * az.cos(),
            look_at.y + r * az.sin(),
            params.side_height,
        );
        let aim = Vector3::new(look_at.x, look_at.y, params.side_height);
        cameras.push(Camera::looking_at(format!("side_{az_deg:03}"), intr, pos, aim));
    }
    for az_deg in [45u32, 135, 225, 315] {
        let az = (az_deg as f64).to_radians();
        // tan(45 deg) = 1: rise equals horizontal distance
        let pos = Vector3::new(look_at.x + r * az.cos(), look_at.y + r * az.sin(), look_at.z + r);
        cameras.push(Camera::looking_at(format!("diag_{az_deg:03}"), intr, pos, look_at));
    }
    let top = look_at + Vector3::new(0.0, 0.0, params.top_height);
    cameras.push(Camera::looking_at("top", intr, top, look_at));
    CameraRig::new(cameras)
}
