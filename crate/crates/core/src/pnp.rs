//! Perspective-n-point by Levenberg-Marquardt on reprojection error.
//!
//! The pose maps local points into the camera frame, `X = R P + t`. Steps
//! are 6-vectors: an axis-angle increment left-composed onto `R` and a
//! translation increment. Without an initial pose, the 24 axis-aligned
//! rotations are tried: each gets a depth from the ratio of the rotated
//! model's lateral spread to the pixel spread and a lateral offset from the
//! back-projected pixel centroid; hypotheses placing a weighted point behind
//! the camera are dropped, the rest are refined, and the lowest final
//! residual wins.
//!
//! Because `P` carries the robot's true dimensions, the recovered `t` is in
//! meters.

use nalgebra::{Isometry3, Matrix2x3, Matrix3, Matrix6, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Z_NEAR};
use crate::error::{Error, Result};
use crate::geometry::{compose_increment, skew};

const MAX_DAMPING: f64 = 1e10;
/// Cost gradient norm (px^2 per unit increment) required before stopping.
const GRAD_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnpOptions {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the RMS reprojection error by less
    /// than this (pixels).
    pub tol_px: f64,
    pub damping_init: f64,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol_px: 1e-6,
            damping_init: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpProblem {
    pub local_points: Vec<Vector3<f64>>,
    pub pixels: Vec<Vector2<f64>>,
    pub weights: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    pub pose_init: Option<Isometry3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnpSolution {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub reproj_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PnpSolution {
    pub fn pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }
}

/// The 24 proper rotations whose matrices are signed permutations.
pub fn axis_aligned_rotations() -> Vec<UnitQuaternion<f64>> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(UnitQuaternion::from_rotation_matrix(
                    &Rotation3::from_matrix_unchecked(m),
                ));
            }
        }
    }
    out
}

fn validate(problem: &PnpProblem) -> Result<()> {
    let n = problem.local_points.len();
    if problem.pixels.len() != n {
        return Err(Error::ShapeMismatch {
            what: "PnP pixels",
            expected: n,
            got: problem.pixels.len(),
        });
    }
    if problem.weights.len() != n {
        return Err(Error::ShapeMismatch {
            what: "PnP weights",
            expected: n,
            got: problem.weights.len(),
        });
    }
    problem.intrinsics.validate()?;
    if problem.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("PnP weights must be finite and >= 0".into()));
    }
    let weighted: Vec<usize> = (0..n).filter(|&i| problem.weights[i] > 0.0).collect();
    if weighted.len() < 4 {
        return Err(Error::UnderConstrained {
            weighted: weighted.len(),
            required: 4,
        });
    }
    let finite = weighted.iter().all(|&i| {
        problem.local_points[i].iter().all(|v| v.is_finite())
            && problem.pixels[i].iter().all(|v| v.is_finite())
    });
    if !finite {
        return Err(Error::InvalidArgument("non-finite PnP input".into()));
    }
    let mean = weighted.iter().map(|&i| problem.local_points[i]).sum::<Vector3<f64>>()
        / weighted.len() as f64;
    let mut scatter = Matrix3::zeros();
    for &i in &weighted {
        let d = problem.local_points[i] - mean;
        scatter += d * d.transpose();
    }
    let mut sv: Vec<f64> = scatter.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 || sv[1] <= 1e-9 * sv[0] {
        return Err(Error::Collinear);
    }
    Ok(())
}

struct Lm<'a> {
    problem: &'a PnpProblem,
    options: &'a PnpOptions,
    weight_sum: f64,
}

impl Lm<'_> {
    /// Weighted squared reprojection error, or `None` if a weighted point is
    /// not in front of the camera.
    fn cost(&self, rot: &UnitQuaternion<f64>, t: &Vector3<f64>) -> Option<f64> {
        let k = &self.problem.intrinsics;
        let mut c = 0.0;
        for ((p, u), w) in self.problem.local_points.iter().zip(&self.problem.pixels).zip(&self.problem.weights) {
            if *w <= 0.0 {
                continue;
            }
            let x = rot * p + t;
            if x.z <= Z_NEAR {
                return None;
            }
            let e = Vector2::new(k.fx * x.x / x.z + k.cx - u.x, k.fy * x.y / x.z + k.cy - u.y);
            c += w * e.norm_squared();
        }
        c.is_finite().then_some(c)
    }

    fn normal_equations(&self, rot: &UnitQuaternion<f64>, t: &Vector3<f64>) -> (Matrix6<f64>, Vector6<f64>) {
        let k = &self.problem.intrinsics;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for ((p, u), w) in self.problem.local_points.iter().zip(&self.problem.pixels).zip(&self.problem.weights) {
            if *w <= 0.0 {
                continue;
            }
            let rp = rot * p;
            let x = rp + t;
            let iz = 1.0 / x.z;
            let e = Vector2::new(k.fx * x.x * iz + k.cx - u.x, k.fy * x.y * iz + k.cy - u.y);
            let dpi = Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * x.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * x.y * iz * iz,
            );
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_columns_mut::<3>(0).copy_from(&(dpi * -skew(&rp)));
            j.fixed_columns_mut::<3>(3).copy_from(&dpi);
            h += *w * j.transpose() * j;
            g += *w * j.transpose() * e;
        }
        (h, g)
    }

    fn rms(&self, cost: f64) -> f64 {
        (cost / self.weight_sum).sqrt()
    }

    fn refine(&self, mut rot: UnitQuaternion<f64>, mut t: Vector3<f64>) -> Result<PnpSolution> {
        let Some(mut cost) = self.cost(&rot, &t) else {
            return Err(Error::Degenerate("initial pose places points behind the camera".into()));
        };
        let mut lambda = self.options.damping_init;
        let mut iterations = 0;
        let mut converged = self.rms(cost) <= 1e-12;
        while !converged && iterations < self.options.max_iters {
            iterations += 1;
            let (h, g) = self.normal_equations(&rot, &t);
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "PnP",
                    iteration: iterations,
                });
            }
            let mut accepted = false;
            let step = (h + Matrix6::identity() * lambda).cholesky().map(|c| c.solve(&-g));
            if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                let cand_rot = compose_increment(&rot, &step.fixed_rows::<3>(0).into_owned());
                let cand_t = t + step.fixed_rows::<3>(3);
                // near the optimum the cost change drops below rounding; a
                // step that leaves the cost flat but shrinks the gradient is
                // still progress
                let better = |c: &f64| {
                    *c < cost
                        || (*c <= cost * (1.0 + 1e-12)
                            && self.normal_equations(&cand_rot, &cand_t).1.norm() < g.norm())
                };
                if let Some(c) = self.cost(&cand_rot, &cand_t).filter(better) {
                    let drop = self.rms(cost) - self.rms(c);
                    rot = cand_rot;
                    t = cand_t;
                    cost = c;
                    lambda *= 0.5;
                    accepted = true;
                    // a small drop alone can stop short of the optimum
                    let stationary = || 2.0 * self.normal_equations(&rot, &t).1.norm() < GRAD_TOL;
                    if self.rms(cost) <= 1e-12 || (drop < self.options.tol_px && stationary()) {
                        converged = true;
                    }
                }
            }
            if !accepted {
                lambda *= 4.0;
                if lambda > MAX_DAMPING {
                    converged = true;
                }
            }
        }
        Ok(PnpSolution {
            rotation: rot,
            translation: t,
            reproj_rms: self.rms(cost),
            iterations,
            converged,
        })
    }

    /// Translation placing the rotated points at the depth where their
    /// spread matches the pixel spread, centered on the pixel centroid.
    fn seed(&self, rot: UnitQuaternion<f64>) -> Option<(UnitQuaternion<f64>, Vector3<f64>)> {
        let p = self.problem;
        let k = &p.intrinsics;
        let idx: Vec<usize> = (0..p.weights.len()).filter(|&i| p.weights[i] > 0.0).collect();
        let wsum = self.weight_sum;
        let pix_c = idx.iter().map(|&i| p.weights[i] * p.pixels[i]).sum::<Vector2<f64>>() / wsum;
        let pix_spread = (idx
            .iter()
            .map(|&i| p.weights[i] * (p.pixels[i] - pix_c).norm_squared())
            .sum::<f64>()
            / wsum)
            .sqrt();
        let focal = 0.5 * (k.fx + k.fy);
        let q: Vec<Vector3<f64>> = idx.iter().map(|&i| rot * p.local_points[i]).collect();
        let c = idx.iter().zip(&q).map(|(&i, v)| p.weights[i] * v).sum::<Vector3<f64>>() / wsum;
        let spread = (idx
            .iter()
            .zip(&q)
            .map(|(&i, v)| p.weights[i] * (v - c).xy().norm_squared())
            .sum::<f64>()
            / wsum)
            .sqrt();
        if !(spread > 0.0 && pix_spread > 0.0) {
            return None;
        }
        let z0 = focal * spread / pix_spread;
        let t = k.back_project(&pix_c, z0) - c;
        q.iter().all(|v| (v + t).z > Z_NEAR).then_some((rot, t))
    }

    fn hypotheses(&self) -> Vec<(UnitQuaternion<f64>, Vector3<f64>)> {
        axis_aligned_rotations().into_iter().filter_map(|r| self.seed(r)).collect()
    }
}

/// Refines from `rotation` with a translation seeded from the pixel spread,
/// for callers that already know the orientation approximately.
pub fn solve_pnp_from_rotation(
    problem: &PnpProblem,
    rotation: UnitQuaternion<f64>,
    options: &PnpOptions,
) -> Result<PnpSolution> {
    validate(problem)?;
    let lm = Lm {
        problem,
        options,
        weight_sum: problem.weights.iter().sum(),
    };
    let (rot, t) = lm
        .seed(rotation)
        .ok_or_else(|| Error::Degenerate("rotation seed puts points behind the camera".into()))?;
    lm.refine(rot, t)
}

pub fn solve_pnp(problem: &PnpProblem, options: &PnpOptions) -> Result<PnpSolution> {
    validate(problem)?;
    let lm = Lm {
        problem,
        options,
        weight_sum: problem.weights.iter().sum(),
    };
    if let Some(init) = problem.pose_init {
        return lm.refine(init.rotation, init.translation.vector);
    }
    let mut best: Option<PnpSolution> = None;
    for (rot, t) in lm.hypotheses() {
        let sol = lm.refine(rot, t)?;
        if best.as_ref().map_or(true, |b| sol.reproj_rms < b.reproj_rms) {
            best = Some(sol);
        }
    }
    best.ok_or_else(|| Error::Degenerate("no pose hypothesis keeps the points in front of the camera".into()))
}

/// Solves a frame sequence, each frame starting from the previous pose.
/// `None` entries are skipped (and do not reset the chain).
pub fn solve_pnp_sequence(
    problems: &[Option<PnpProblem>],
    options: &PnpOptions,
) -> Vec<Option<Result<PnpSolution>>> {
    let mut prev: Option<Isometry3<f64>> = None;
    problems
        .iter()
        .map(|p| {
            p.as_ref().map(|p| {
                let mut p = p.clone();
                if p.pose_init.is_none() {
                    p.pose_init = prev;
                }
                let sol = solve_pnp(&p, options);
                if let Ok(s) = &sol {
                    prev = Some(s.pose());
                }
                sol
            })
        })
        .collect()
}

/// Solution of `problem` and of the same problem with local points scaled
/// by `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleCheck {
    pub base: PnpSolution,
    pub scaled: PnpSolution,
    /// `|t_scaled| / |t_base|`.
    pub translation_ratio: f64,
    /// Geodesic angle between the two rotations.
    pub rotation_gap: f64,
}

pub fn metric_scale_check(problem: &PnpProblem, s: f64, options: &PnpOptions) -> Result<ScaleCheck> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {s}")));
    }
    let base = solve_pnp(problem, options)?;
    let mut scaled_problem = problem.clone();
    for p in &mut scaled_problem.local_points {
        *p *= s;
    }
    if let Some(init) = &mut scaled_problem.pose_init {
        init.translation.vector *= s;
    }
    let scaled = solve_pnp(&scaled_problem, options)?;
    Ok(ScaleCheck {
        translation_ratio: scaled.translation.norm() / base.translation.norm(),
        rotation_gap: base.rotation.angle_to(&scaled.rotation),
        base,
        scaled,
    })
}

/// Reprojection of `local_points` under `pose`.
pub fn reproject(
    intrinsics: &CameraIntrinsics,
    pose: &Isometry3<f64>,
    local_points: &[Vector3<f64>],
) -> Vec<Vector2<f64>> {
    local_points
        .iter()
        .map(|p| intrinsics.project_point(&(pose * nalgebra::Point3::from(*p)).coords).pixel)
        .collect()
}

/// Gradient of the weighted squared reprojection cost with respect to the
/// 6-parameter increment at `pose`.
pub fn cost_gradient(problem: &PnpProblem, pose: &Isometry3<f64>) -> Vector6<f64> {
    let lm = Lm {
        problem,
        options: &PnpOptions::default(),
        weight_sum: problem.weights.iter().sum(),
    };
    2.0 * lm.normal_equations(&pose.rotation, &pose.translation.vector).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};

    fn humanoid_problem(rot: UnitQuaternion<f64>, t: Vector3<f64>) -> PnpProblem {
        let m = fixtures::humanoid();
        let local = m
            .forward_kinematics(&m.mid_configuration(), &Isometry3::identity())
            .unwrap();
        let k = CameraIntrinsics::default();
        let pose = Isometry3::from_parts(Translation3::from(t), rot);
        let pixels = reproject(&k, &pose, &local);
        PnpProblem {
            weights: vec![1.0; local.len()],
            local_points: local,
            pixels,
            intrinsics: k,
            pose_init: None,
        }
    }

    #[test]
    fn twenty_four_distinct_rotations() {
        let r = axis_aligned_rotations();
        assert_eq!(r.len(), 24);
        for (i, a) in r.iter().enumerate() {
            for b in &r[..i] {
                assert!(a.angle_to(b) > 0.1);
            }
        }
    }

    #[test]
    fn recovers_synthetic_poses() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let rot = UnitQuaternion::from_euler_angles(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            );
            let t = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(2.5..4.0));
            let p = humanoid_problem(rot, t);
            let s = solve_pnp(&p, &PnpOptions::default()).unwrap();
            assert!(s.rotation.angle_to(&rot) < 1e-6, "{}", s.rotation.angle_to(&rot));
            assert!((s.translation - t).norm() < 1e-6);
            assert!(s.translation.z > 0.0);
            assert!(cost_gradient(&p, &s.pose()).norm() < 1e-6);
            assert!((s.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pose_reprojects_exactly() {
        let rot = UnitQuaternion::identity();
        let t = Vector3::new(0.0, 0.0, 2.0);
        let p = humanoid_problem(rot, t);
        let s = solve_pnp(&p, &PnpOptions::default()).unwrap();
        for (a, b) in reproject(&p.intrinsics, &s.pose(), &p.local_points).iter().zip(&p.pixels) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_ill_posed_problems() {
        let mut p = humanoid_problem(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 3.0));
        p.weights = vec![0.0; p.weights.len()];
        p.weights[..3].fill(1.0);
        assert!(matches!(
            solve_pnp(&p, &PnpOptions::default()),
            Err(Error::UnderConstrained { weighted: 3, .. })
        ));
        let line: Vec<_> = (0..6).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let q = PnpProblem {
            pixels: reproject(&p.intrinsics, &Isometry3::translation(0.0, 0.0, 3.0), &line),
            local_points: line,
            weights: vec![1.0; 6],
            intrinsics: p.intrinsics,
            pose_init: None,
        };
        assert!(matches!(solve_pnp(&q, &PnpOptions::default()), Err(Error::Collinear)));
    }

    #[test]
    fn translation_scales_with_the_model() {
        let rot = UnitQuaternion::from_euler_angles(0.2, -0.4, 1.0);
        let p = humanoid_problem(rot, Vector3::new(0.1, -0.1, 3.0));
        let same = metric_scale_check(&p, 1.0, &PnpOptions::default()).unwrap();
        assert_eq!(same.base, same.scaled);
        for s in [0.5, 2.0] {
            let c = metric_scale_check(&p, s, &PnpOptions::default()).unwrap();
            assert!((c.translation_ratio - s).abs() < 1e-6);
            assert!((c.scaled.translation - s * c.base.translation).norm() < 1e-6);
            assert!(c.rotation_gap < 1e-6);
        }
    }

    #[test]
    fn chaining_uses_previous_pose() {
        let rot = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        let a = humanoid_problem(rot, Vector3::new(0.0, 0.0, 3.0));
        let b = humanoid_problem(rot, Vector3::new(0.01, 0.0, 3.0));
        let out = solve_pnp_sequence(&[Some(a), None, Some(b)], &PnpOptions::default());
        assert!(out[1].is_none());
        let last = out[2].as_ref().unwrap().as_ref().unwrap();
        assert!((last.translation - Vector3::new(0.01, 0.0, 3.0)).norm() < 1e-6);
    }
}
