//! Root-pose trajectories: smoothing, egocentric re-framing, gap filling,
//! and the GMR motion file.
//!
//! A GMR file is a JSON document
//!
//! ```json
//! {"format": "gmr-motion/1", "fps": 30.0, "joint_names": [...],
//!  "frames": [{"root_pos": [x, y, z], "root_rot": [w, x, y, z], "qpos": [...],
//!              "flags": {"ik_converged": true, "pnp_converged": true}}]}
//! ```
//!
//! with an optional `provenance` object.

use std::ops::Range;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{heading, quat_from_wxyz_unchecked, quat_to_wxyz, wxyz_norm, yaw_rotation};
use crate::model::KinematicModel;

pub const GMR_FORMAT: &str = "gmr-motion/1";

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFlags {
    pub ik_converged: bool,
    pub pnp_converged: bool,
    /// Values were filled in from neighboring frames.
    #[serde(default, skip_serializing_if = "is_false")]
    pub interpolated: bool,
    /// The egocentric base fell back to zero heading.
    #[serde(default, skip_serializing_if = "is_false")]
    pub heading_fallback: bool,
}

impl Default for FrameFlags {
    fn default() -> Self {
        Self {
            ik_converged: true,
            pnp_converged: true,
            interpolated: false,
            heading_fallback: false,
        }
    }
}

impl FrameFlags {
    pub fn failed(&self) -> bool {
        !(self.ik_converged && self.pnp_converged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFrame {
    pub root_pos: [f64; 3],
    /// `(w, x, y, z)`.
    pub root_rot: [f64; 4],
    pub qpos: Vec<f64>,
    #[serde(default)]
    pub flags: FrameFlags,
}

impl TrajectoryFrame {
    pub fn new(root_pos: Vector3<f64>, root_rot: UnitQuaternion<f64>, qpos: Vec<f64>) -> Self {
        Self {
            root_pos: root_pos.into(),
            root_rot: quat_to_wxyz(&root_rot),
            qpos,
            flags: FrameFlags::default(),
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.root_pos)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        quat_from_wxyz_unchecked(self.root_rot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredTrajectory {
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub frames: Vec<TrajectoryFrame>,
}

impl RecoveredTrajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks the structural invariants, and joint limits when a model is
    /// given.
    pub fn validate(&self, model: Option<&KinematicModel>) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Motion(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.is_empty() {
            return Err(Error::Motion("trajectory has no frames".into()));
        }
        if let Some(m) = model {
            if m.joint_names() != self.joint_names {
                return Err(Error::Motion("joint names do not match the model".into()));
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.qpos.len() != self.joint_names.len() {
                return Err(Error::Motion(format!(
                    "frame {i}: qpos has {} values, expected {}",
                    f.qpos.len(),
                    self.joint_names.len()
                )));
            }
            let finite = f.root_pos.iter().chain(&f.root_rot).chain(&f.qpos).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Motion(format!("frame {i}: non-finite value")));
            }
            if (wxyz_norm(f.root_rot) - 1.0).abs() > 1e-9 {
                return Err(Error::Motion(format!("frame {i}: root_rot is not unit norm")));
            }
            if let Some(m) = model {
                for (j, (v, l)) in f.qpos.iter().zip(m.limits()).enumerate() {
                    if *v < l.lower || *v > l.upper {
                        return Err(Error::Motion(format!(
                            "frame {i}: joint `{}` = {v} outside [{}, {}]",
                            self.joint_names[j], l.lower, l.upper
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("EMA alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Exponential moving average `s_k = alpha x_k + (1 - alpha) s_{k-1}` of
/// root position and joint angles; root rotations are aligned to the
/// running state's hemisphere and blended linearly, then renormalized.
pub fn ema_smooth(trajectory: &RecoveredTrajectory, alpha: f64) -> Result<RecoveredTrajectory> {
    check_alpha(alpha)?;
    if trajectory.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if alpha == 1.0 {
        return Ok(trajectory.clone());
    }
    let mut out = trajectory.clone();
    let first = &trajectory.frames[0];
    let mut pos = first.position();
    let mut rot = first.rotation().into_inner();
    let mut qpos = first.qpos.clone();
    for f in out.frames.iter_mut().skip(1) {
        // written as s + alpha (x - s) so a constant input stays bit-exact
        pos += alpha * (f.position() - pos);
        let mut q = f.rotation().into_inner();
        if q.dot(&rot) < 0.0 {
            q = -q;
        }
        let blend = rot + (q - rot) * alpha;
        if blend != rot {
            rot = blend.normalize();
        }
        for (s, x) in qpos.iter_mut().zip(&f.qpos) {
            *s += alpha * (x - *s);
        }
        f.root_pos = pos.into();
        f.root_rot = [rot.w, rot.i, rot.j, rot.k];
        f.qpos.clone_from(&qpos);
    }
    Ok(out)
}

/// Re-expresses the trajectory in the frame whose origin is frame 0's root
/// projected to the ground and whose heading is frame 0's yaw.
pub fn to_egocentric(trajectory: &RecoveredTrajectory) -> Result<RecoveredTrajectory> {
    let first = trajectory.frames.first().ok_or(Error::Empty("trajectory"))?;
    let (yaw, fallback) = match heading(&first.rotation()) {
        Some(y) => (y, false),
        None => (0.0, true),
    };
    let base_pos = Vector3::new(first.root_pos[0], first.root_pos[1], 0.0);
    let inv = yaw_rotation(-yaw);
    let mut out = trajectory.clone();
    for f in &mut out.frames {
        let p = inv * (f.position() - base_pos);
        let r = inv * f.rotation();
        f.root_pos = p.into();
        f.root_rot = quat_to_wxyz(&r);
        f.flags.heading_fallback |= fallback;
    }
    Ok(out)
}

fn aligned_slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    let mut bq = b.into_inner();
    if a.into_inner().dot(&bq) < 0.0 {
        bq = -bq;
    }
    let b = UnitQuaternion::new_unchecked(bq);
    a.try_slerp(&b, t, 1e-12).unwrap_or_else(|| {
        UnitQuaternion::from_quaternion(a.into_inner() * (1.0 - t) + bq * t)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapFill {
    pub trajectory: RecoveredTrajectory,
    /// Maximal runs of usable frames (valid or interpolated).
    pub segments: Vec<Range<usize>>,
}

/// Fills runs of failed frames shorter than `max_gap` that have a valid
/// frame on both sides: linear interpolation of root position and joint
/// angles, spherical interpolation of root rotation. Filled frames keep
/// their failure flags and gain `interpolated`. Other failed runs split the
/// trajectory into segments.
pub fn interpolate_gaps(trajectory: &RecoveredTrajectory, max_gap: usize) -> GapFill {
    let mut out = trajectory.clone();
    let n = out.frames.len();
    let failed: Vec<bool> = out.frames.iter().map(|f| f.flags.failed()).collect();
    let mut usable: Vec<bool> = failed.iter().map(|f| !f).collect();
    let mut i = 0;
    while i < n {
        if !failed[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && failed[i] {
            i += 1;
        }
        let len = i - start;
        if start == 0 || i == n || len >= max_gap {
            continue;
        }
        let (a, b) = (&trajectory.frames[start - 1], &trajectory.frames[i]);
        let (ra, rb) = (a.rotation(), b.rotation());
        let span = (len + 1) as f64;
        for (k, f) in out.frames[start..i].iter_mut().enumerate() {
            let t = (k + 1) as f64 / span;
            f.root_pos = (a.position() * (1.0 - t) + b.position() * t).into();
            f.root_rot = quat_to_wxyz(&aligned_slerp(&ra, &rb, t));
            f.qpos = a.qpos.iter().zip(&b.qpos).map(|(x, y)| x * (1.0 - t) + y * t).collect();
            f.flags.interpolated = true;
        }
        usable[start..i].fill(true);
    }
    let mut segments = Vec::new();
    let mut s = None;
    for (k, u) in usable.iter().enumerate() {
        match (u, s) {
            (true, None) => s = Some(k),
            (false, Some(a)) => {
                segments.push(a..k);
                s = None;
            }
            _ => {}
        }
    }
    if let Some(a) = s {
        segments.push(a..n);
    }
    GapFill {
        trajectory: out,
        segments,
    }
}

#[derive(Serialize, Deserialize)]
struct GmrFrameRepr {
    root_pos: Vec<f64>,
    root_rot: Vec<f64>,
    qpos: Vec<f64>,
    #[serde(default)]
    flags: FrameFlags,
}

#[derive(Serialize, Deserialize)]
struct GmrRepr {
    format: String,
    fps: f64,
    joint_names: Vec<String>,
    frames: Vec<GmrFrameRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

pub fn to_gmr_json(
    trajectory: &RecoveredTrajectory,
    provenance: Option<&serde_json::Value>,
) -> Result<String> {
    let repr = GmrRepr {
        format: GMR_FORMAT.into(),
        fps: trajectory.fps,
        joint_names: trajectory.joint_names.clone(),
        frames: trajectory
            .frames
            .iter()
            .map(|f| GmrFrameRepr {
                root_pos: f.root_pos.to_vec(),
                root_rot: f.root_rot.to_vec(),
                qpos: f.qpos.clone(),
                flags: f.flags,
            })
            .collect(),
        provenance: provenance.cloned(),
    };
    Ok(serde_json::to_string_pretty(&repr)?)
}

/// Parses and validates a GMR document. Root quaternions within 1e-9 of
/// unit norm are kept as written, those within 1e-6 are renormalized, and
/// anything further off is rejected.
pub fn from_gmr_json(text: &str) -> Result<RecoveredTrajectory> {
    let repr: GmrRepr = serde_json::from_str(text).map_err(|e| Error::Motion(e.to_string()))?;
    if repr.format != GMR_FORMAT {
        return Err(Error::Motion(format!(
            "format tag `{}`, expected `{GMR_FORMAT}`",
            repr.format
        )));
    }
    let mut frames = Vec::with_capacity(repr.frames.len());
    for (i, f) in repr.frames.into_iter().enumerate() {
        let root_pos: [f64; 3] = f.root_pos.as_slice().try_into().map_err(|_| {
            Error::Motion(format!("frame {i}: root_pos has {} elements, expected 3", f.root_pos.len()))
        })?;
        let mut root_rot: [f64; 4] = f.root_rot.as_slice().try_into().map_err(|_| {
            Error::Motion(format!("frame {i}: root_rot has {} elements, expected 4", f.root_rot.len()))
        })?;
        let norm = wxyz_norm(root_rot);
        let off = (norm - 1.0).abs();
        if !(off <= 1e-6) {
            return Err(Error::Motion(format!("frame {i}: root_rot norm {norm} is not unit")));
        }
        if off > 1e-9 {
            let q = UnitQuaternion::from_quaternion(Quaternion::new(
                root_rot[0],
                root_rot[1],
                root_rot[2],
                root_rot[3],
            ));
            root_rot = quat_to_wxyz(&q);
        }
        frames.push(TrajectoryFrame {
            root_pos,
            root_rot,
            qpos: f.qpos,
            flags: f.flags,
        });
    }
    let t = RecoveredTrajectory {
        fps: repr.fps,
        joint_names: repr.joint_names,
        frames,
    };
    t.validate(None)?;
    Ok(t)
}

pub fn export_gmr(
    trajectory: &RecoveredTrajectory,
    path: impl AsRef<Path>,
    provenance: Option<&serde_json::Value>,
) -> Result<()> {
    trajectory.validate(None)?;
    std::fs::write(path, to_gmr_json(trajectory, provenance)?)?;
    Ok(())
}

pub fn import_gmr(path: impl AsRef<Path>) -> Result<RecoveredTrajectory> {
    from_gmr_json(&std::fs::read_to_string(path)?)
}
