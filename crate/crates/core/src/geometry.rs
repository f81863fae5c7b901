//! Small rigid-body helpers shared by the solvers.
//!
//! Quaternions cross module and file boundaries in `(w, x, y, z)` order.

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Builds a unit quaternion from `(w, x, y, z)` without renormalizing.
pub fn quat_from_wxyz_unchecked(v: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::new_unchecked(Quaternion::new(v[0], v[1], v[2], v[3]))
}

pub fn wxyz_norm(v: [f64; 4]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left-multiplicative update `exp(delta) * q`, renormalized.
pub fn compose_increment(q: &UnitQuaternion<f64>, delta: &Vector3<f64>) -> UnitQuaternion<f64> {
    let mut out = UnitQuaternion::from_scaled_axis(*delta) * q;
    out.renormalize();
    out
}

pub fn geodesic_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}

/// Heading of the body x-axis projected on the ground plane, or `None` when
/// that axis is (nearly) vertical.
pub fn heading(q: &UnitQuaternion<f64>) -> Option<f64> {
    let x = q * Vector3::x();
    let h = (x.x * x.x + x.y * x.y).sqrt();
    if h < 1e-6 {
        None
    } else {
        Some(x.y.atan2(x.x))
    }
}

pub fn yaw_rotation(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
}

/// Weighted orthogonal Procrustes about the origin: the rotation `R`
/// minimizing `sum w_i |R src_i - dst_i|^2`.
pub fn procrustes_rotation(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
) -> UnitQuaternion<f64> {
    let mut m = Matrix3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        m += *w * d * s.transpose();
    }
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return UnitQuaternion::identity();
    };
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    UnitQuaternion::from_matrix(&r)
}

/// Serializable rigid pose: translation in meters, rotation as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl PoseRecord {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        Self {
            translation: [t.x, t.y, t.z],
            rotation: quat_to_wxyz(&iso.rotation),
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.rotation[3],
        ));
        Isometry3::from_parts(Translation3::from(Vector3::from(self.translation)), q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn procrustes_recovers_known_rotation() {
        let r = UnitQuaternion::from_euler_angles(0.3, -0.7, 1.9);
        let src: Vec<_> = [
            Vector3::new(1.0, 0.0, 0.2),
            Vector3::new(0.0, 1.0, -0.3),
            Vector3::new(0.4, -0.2, 1.0),
            Vector3::new(-0.5, 0.3, 0.1),
        ]
        .into();
        let dst: Vec<_> = src.iter().map(|p| r * p).collect();
        let est = procrustes_rotation(&src, &dst, &[1.0; 4]);
        assert!(geodesic_angle(&est, &r) < 1e-12);
    }

    #[test]
    fn heading_of_vertical_body_axis_is_undefined() {
        let pitched = UnitQuaternion::from_euler_angles(0.0, -std::f64::consts::FRAC_PI_2, 0.0);
        assert!(heading(&pitched).is_none());
        let yawed = yaw_rotation(0.4);
        assert!((heading(&yawed).unwrap() - 0.4).abs() < 1e-15);
    }
}
