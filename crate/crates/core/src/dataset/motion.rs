//! Synthetic motion for rendering: smooth joint trajectories and a bounded
//! root random walk on the ground plane.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JointConfiguration, KinematicModel};

/// Default excursion scale. Sampling the humanoid's full joint ranges yields
/// self-intersecting poses far from anything a person does; half of each
/// half range around the rest pose keeps the limbs in a human-like envelope.
pub const SPREAD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub fps: f64,
    /// Excursion scale around the rest pose, as a fraction of each joint's
    /// half range.
    pub spread: f64,
    /// Share of the excursion taken by the oscillation; the rest is a
    /// random per-joint offset.
    pub amplitude: f64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    /// Bound on |yaw rate| in rad/s.
    pub max_yaw_rate: f64,
    /// Bound on ground-plane speed in m/s.
    pub max_speed: f64,
    /// Root stays within `[-arena, arena]` on x and y.
    pub arena: f64,
    pub min_height: f64,
    pub max_height: f64,
    /// Bound on root roll and pitch in radians.
    pub max_tilt: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            fps: 30.0,
            spread: SPREAD,
            amplitude: 0.5,
            min_freq_hz: 0.1,
            max_freq_hz: 0.5,
            max_yaw_rate: 1.0,
            max_speed: 0.5,
            arena: 0.5,
            min_height: 0.6,
            max_height: 0.8,
            max_tilt: 0.05,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fps > 0.0
            && self.spread > 0.0
            && self.spread <= 1.0
            && (0.0..=1.0).contains(&self.amplitude)
            && 0.0 < self.min_freq_hz
            && self.min_freq_hz <= self.max_freq_hz
            && self.max_yaw_rate >= 0.0
            && self.max_speed >= 0.0
            && self.arena >= 0.0
            && self.min_height <= self.max_height
            && self.max_tilt >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid motion parameters {self:?}")))
        }
    }
}

/// Joint angles of each dof as a sum of two sinusoids around a random
/// offset from the rest pose (zero, or the nearest limit), clamped strictly
/// inside the limits.
pub fn sample_joint_trajectory(
    model: &KinematicModel,
    params: &MotionParams,
    frames: usize,
    rng: &mut impl Rng,
) -> Vec<JointConfiguration> {
    let a = params.amplitude;
    let waves: Vec<_> = model
        .limits()
        .iter()
        .map(|l| {
            let half = 0.5 * (l.upper - l.lower);
            let margin = 0.025 * half;
            let rest = 0.0f64.clamp(l.lower + margin, l.upper - margin);
            let span = params.spread * half * 0.95;
            let offset = rng.gen_range(-1.0..=1.0) * (1.0 - a);
            let mut comp = [(0.0, 0.0); 2];
            for c in &mut comp {
                let f = rng.gen_range(params.min_freq_hz..=params.max_freq_hz);
                *c = (std::f64::consts::TAU * f, rng.gen_range(0.0..std::f64::consts::TAU));
            }
            (rest, span, offset, comp, (l.lower + margin, l.upper - margin))
        })
        .collect();
    (0..frames)
        .map(|k| {
            let t = k as f64 / params.fps;
            JointConfiguration(
                waves
                    .iter()
                    .map(|(rest, span, offset, comp, (lo, hi))| {
                        let s: f64 = comp.iter().map(|(w, p)| (w * t + p).sin()).sum();
                        (rest + span * (offset + 0.5 * a * s)).clamp(*lo, *hi)
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Root poses: heading with a bounded, randomly drifting yaw rate, forward
/// speed within bounds, reflection at the arena walls, pelvis height in the
/// configured band and a slight tilt.
pub fn sample_root_walk(
    params: &MotionParams,
    frames: usize,
    rng: &mut impl Rng,
) -> Vec<Isometry3<f64>> {
    let dt = 1.0 / params.fps;
    let mut x = rng.gen_range(-params.arena..=params.arena);
    let mut y = rng.gen_range(-params.arena..=params.arena);
    let mut yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut yaw_rate = 0.0f64;
    let mut speed = rng.gen_range(0.0..=params.max_speed);
    let h_mid = 0.5 * (params.min_height + params.max_height);
    let h_amp = 0.5 * (params.max_height - params.min_height);
    let h_w = std::f64::consts::TAU * rng.gen_range(0.2..0.8);
    let h_p = rng.gen_range(0.0..std::f64::consts::TAU);
    let tilt_w = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let t = k as f64 * dt;
        let z = h_mid + h_amp * (h_w * t + h_p).sin();
        let roll = params.max_tilt * (std::f64::consts::TAU * tilt_w[0] * t).sin();
        let pitch = params.max_tilt * (std::f64::consts::TAU * tilt_w[1] * t + 1.0).sin();
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
            * UnitQuaternion::from_euler_angles(roll, pitch, 0.0);
        out.push(Isometry3::from_parts(Translation3::new(x, y, z), rot));

        yaw_rate = (yaw_rate + rng.gen_range(-0.2..=0.2) * params.max_yaw_rate)
            .clamp(-params.max_yaw_rate, params.max_yaw_rate);
        speed = (speed + rng.gen_range(-0.1..=0.1) * params.max_speed).clamp(0.0, params.max_speed);
        yaw += yaw_rate * dt;
        x += speed * yaw.cos() * dt;
        y += speed * yaw.sin() * dt;
        if x.abs() > params.arena {
            x = x.signum() * (2.0 * params.arena - x.abs());
            yaw = std::f64::consts::PI - yaw;
        }
        if y.abs() > params.arena {
            y = y.signum() * (2.0 * params.arena - y.abs());
            yaw = -yaw;
        }
    }
    out
}

/// Joint and root trajectories for one seeded sequence.
pub fn sample_motion(
    model: &KinematicModel,
    params: &MotionParams,
    frames: usize,
    seed: u64,
) -> Result<(Vec<JointConfiguration>, Vec<Isometry3<f64>>)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = sample_joint_trajectory(model, params, frames, &mut rng);
    let roots = sample_root_walk(params, frames, &mut rng);
    Ok((q, roots))
}

/// Many independent sequences concatenated: the long motion corpus that
/// keyframe distillation draws from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub sequences: usize,
    pub frames_per_sequence: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPool {
    /// Row-major, one row of `dof` angles per frame.
    pub angles: Vec<f64>,
    pub dof: usize,
    pub roots: Vec<Isometry3<f64>>,
}

impl MotionPool {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn configuration(&self, i: usize) -> JointConfiguration {
        JointConfiguration(self.angles[i * self.dof..(i + 1) * self.dof].to_vec())
    }

    /// Farthest-point keyframes of the whole pool.
    pub fn distill(&self, k: usize) -> Result<Vec<usize>> {
        super::distill_flat(&self.angles, self.dof, k)
    }

    pub fn select(&self, indices: &[usize]) -> (Vec<JointConfiguration>, Vec<Isometry3<f64>>) {
        indices
            .iter()
            .map(|&i| (self.configuration(i), self.roots[i]))
            .unzip()
    }
}

/// Sequence `s` draws from stream `s` of a generator seeded with
/// `spec.seed`, so sequences are independent of the pool size.
pub fn sample_pool(model: &KinematicModel, params: &MotionParams, spec: &PoolSpec) -> Result<MotionPool> {
    params.validate()?;
    let total = spec
        .sequences
        .checked_mul(spec.frames_per_sequence)
        .filter(|t| *t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("pool of {spec:?} is empty or too large")))?;
    let dof = model.dof();
    let mut angles = Vec::with_capacity(total * dof);
    let mut roots = Vec::with_capacity(total);
    for s in 0..spec.sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s as u64);
        for q in sample_joint_trajectory(model, params, spec.frames_per_sequence, &mut rng) {
            angles.extend_from_slice(q.values());
        }
        roots.extend(sample_root_walk(params, spec.frames_per_sequence, &mut rng));
    }
    Ok(MotionPool { angles, dof, roots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn joints_stay_feasible_and_smooth() {
        let m = fixtures::humanoid();
        let p = MotionParams::default();
        let (q, _) = sample_motion(&m, &p, 600, 3).unwrap();
        let rate = std::f64::consts::TAU * p.max_freq_hz * p.amplitude * p.spread * 0.95 / p.fps;
        for w in q.windows(2) {
            assert!(w[1].is_feasible(&m));
            for ((a, b), l) in w[0].values().iter().zip(w[1].values()).zip(m.limits()) {
                let half = 0.5 * (l.upper - l.lower);
                assert!((a - b).abs() <= half * rate + 1e-12);
            }
        }
    }

    #[test]
    fn pool_sequences_do_not_depend_on_pool_size() {
        let m = fixtures::humanoid();
        let p = MotionParams::default();
        let small = sample_pool(&m, &p, &PoolSpec { sequences: 2, frames_per_sequence: 5, seed: 4 }).unwrap();
        let big = sample_pool(&m, &p, &PoolSpec { sequences: 3, frames_per_sequence: 5, seed: 4 }).unwrap();
        assert_eq!(small.len(), 10);
        assert_eq!(small.angles[..], big.angles[..small.angles.len()]);
        assert_eq!(small.roots[..], big.roots[..10]);
        let (q, r) = big.select(&[7]);
        assert_eq!(q[0], big.configuration(7));
        assert_eq!(r[0], big.roots[7]);
        assert!(sample_pool(&m, &p, &PoolSpec { sequences: 0, frames_per_sequence: 5, seed: 4 }).is_err());
    }

    #[test]
    fn root_walk_respects_bounds() {
        let p = MotionParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let roots = sample_root_walk(&p, 2000, &mut rng);
        for (a, b) in roots.iter().zip(&roots[1..]) {
            let t = b.translation.vector;
            assert!(t.x.abs() <= p.arena + 1e-12 && t.y.abs() <= p.arena + 1e-12);
            assert!((p.min_height - 1e-12..=p.max_height + 1e-12).contains(&t.z));
            let d = b.translation.vector - a.translation.vector;
            assert!(d.xy().norm() <= p.max_speed / p.fps + 1e-12);
            let up = b.rotation * Vector3::z();
            assert!(up.z > (2.0 * p.max_tilt).cos() - 1e-9);
        }
    }

    #[test]
    fn seeded_motion_is_reproducible() {
        let m = fixtures::planar_2link();
        let a = sample_motion(&m, &MotionParams::default(), 50, 1).unwrap();
        let b = sample_motion(&m, &MotionParams::default(), 50, 1).unwrap();
        assert_eq!(a, b);
    }
}
