//! Position-only inverse kinematics under box joint limits.
//!
//! Minimizes `sum_i w_i |FK_i(q) - target_i|^2` with the root link fixed at
//! the origin, by damped Gauss-Newton (Levenberg-Marquardt damping `lambda I`,
//! halved on an accepted step and quadrupled on a rejected one). Every
//! candidate is clamped into `[q_min + 1e-6, q_max - 1e-6]` before it is
//! scored, and only a strictly cheaper candidate is accepted, so the accepted
//! cost never increases and no iterate leaves the limits. Joints resting on
//! a bound whose gradient pushes outward are frozen for that step.
//!
//! When the targets live in an unknown rotated frame (camera-frame points
//! from a lifter, say) the solver can also estimate the root orientation as a
//! nuisance: the cost becomes `sum_i w_i |R FK_i(q) - target_i|^2` with `R`
//! initialized by weighted Procrustes and updated by left-multiplied
//! axis-angle increments.

use nalgebra::{DMatrix, DVector, Isometry3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose_increment, procrustes_rotation, skew};
use crate::model::{FkScratch, JointConfiguration, KinematicModel};

/// Distance kept from each joint limit by every iterate.
pub const LIMIT_MARGIN: f64 = 1e-6;
const MAX_DAMPING: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkOptions {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the RMS residual by less than this (m).
    pub tol_rms: f64,
    pub damping_init: f64,
    /// Also try `multi_start_count` seeded random starts and keep the
    /// cheapest solution.
    pub multi_start: bool,
    pub multi_start_count: usize,
    pub multi_start_seed: u64,
    /// Solve for a free root orientation alongside `q`.
    pub estimate_root_rotation: bool,
    pub min_weighted_keypoints: usize,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol_rms: 1e-7,
            damping_init: 1e-3,
            multi_start: false,
            multi_start_count: 5,
            multi_start_seed: 0,
            estimate_root_rotation: false,
            min_weighted_keypoints: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkProblem<'a> {
    pub model: &'a KinematicModel,
    /// Root-relative targets, one per keypoint (meters).
    pub targets: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    pub q_init: JointConfiguration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub q_star: JointConfiguration,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Estimated root orientation (identity unless requested).
    pub root_rotation: UnitQuaternion<f64>,
}

/// Subtracts the root row from every row.
pub fn center_targets(points: &[Vector3<f64>], root_index: usize) -> Vec<Vector3<f64>> {
    crate::lifting::root_relative(points, root_index)
}

/// Unit weights for visible keypoints, zero otherwise.
pub fn visibility_weights(visibility: &[bool]) -> Vec<f64> {
    visibility.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect()
}

pub fn solve_ik(problem: &IkProblem, options: &IkOptions) -> Result<IkSolution> {
    solve_ik_observed(problem, options, &mut |_| {})
}

/// [`solve_ik`] calling `observer` with every configuration the solver
/// evaluates, including rejected candidates.
pub fn solve_ik_observed(
    problem: &IkProblem,
    options: &IkOptions,
    observer: &mut dyn FnMut(&[f64]),
) -> Result<IkSolution> {
    validate(problem, options)?;
    let mut best = Solver::new(problem, options).run(problem.q_init.values(), observer)?;
    if options.multi_start {
        let mut rng = ChaCha8Rng::seed_from_u64(options.multi_start_seed);
        for _ in 0..options.multi_start_count {
            let start: Vec<f64> = problem
                .model
                .limits()
                .iter()
                .map(|l| rng.gen_range(l.lower..=l.upper))
                .collect();
            let sol = Solver::new(problem, options).run(&start, observer)?;
            if sol.residual_rms < best.residual_rms {
                best = sol;
            }
        }
    }
    Ok(best)
}

/// Sweep initialization followed by [`solve_ik`], then `limb_tries` seeded
/// restarts of each limb in turn, deepest limbs first, keeping any restart
/// that lowers the residual. A limb is the subtree below a branching point
/// of the joint tree. With noisy targets a single sweep often settles a limb
/// on a mirrored branch; since limbs barely interact, fixing them one at a
/// time succeeds where whole-body restarts have to get every limb right at
/// once.
pub fn cold_start(
    problem: &IkProblem,
    options: &IkOptions,
    sweeps: usize,
    limb_tries: usize,
    seed: u64,
) -> Result<IkSolution> {
    let (q0, _) = sweep_initialize(problem, options, sweeps)?;
    let mut best = solve_ik(&IkProblem { q_init: q0, ..problem.clone() }, options)?;
    if limb_tries == 0 {
        return Ok(best);
    }
    let model = problem.model;
    let limbs = limbs(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for limb in &limbs {
        for _ in 0..limb_tries {
            let mut q = best.q_star.0.clone();
            for &d in limb {
                let l = &model.limits()[d];
                q[d] = rng.gen_range(l.lower..=l.upper);
            }
            let sol = solve_ik(&IkProblem { q_init: JointConfiguration(q), ..problem.clone() }, options)?;
            if sol.residual_rms < best.residual_rms {
                best = sol;
            }
        }
    }
    Ok(best)
}

/// Degree-of-freedom subtrees rooted just below each branching point, the
/// smallest first.
fn limbs(model: &KinematicModel) -> Vec<Vec<usize>> {
    let n = model.dof();
    // parent dof along the keypoint chains; `n` stands for the root
    let mut parent = vec![n; n];
    for k in 0..model.keypoint_count() {
        let chain = model.keypoint_chain(k);
        for w in chain.windows(2) {
            parent[w[1]] = w[0];
        }
    }
    let mut children = vec![0usize; n + 1];
    for &p in &parent {
        children[p] += 1;
    }
    let under = |mut d: usize, top: usize| loop {
        if d == top {
            return true;
        }
        if d == n {
            return false;
        }
        d = parent[d];
    };
    let mut out: Vec<Vec<usize>> = (0..n)
        .filter(|&d| children[parent[d]] >= 2)
        .map(|r| (0..n).filter(|&d| under(d, r)).collect())
        .collect();
    out.sort_by_key(|l| l.len());
    out
}

/// Solves each frame in turn, warm-starting from the previous solution;
/// the first frame starts from `q_first` (mid-range when `None`).
pub fn solve_ik_sequence(
    model: &KinematicModel,
    targets: &[Vec<Vector3<f64>>],
    weights: &[Vec<f64>],
    q_first: Option<JointConfiguration>,
    options: &IkOptions,
) -> Result<Vec<IkSolution>> {
    if targets.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            what: "weight sequence",
            expected: targets.len(),
            got: weights.len(),
        });
    }
    let mut q = q_first.unwrap_or_else(|| model.mid_configuration());
    let mut out = Vec::with_capacity(targets.len());
    for (t, w) in targets.iter().zip(weights) {
        let problem = IkProblem {
            model,
            targets: t.clone(),
            weights: w.clone(),
            q_init: q.clone(),
        };
        let sol = solve_ik(&problem, options)?;
        q = sol.q_star.clone();
        out.push(sol);
    }
    Ok(out)
}

/// Coarse initializer for cold starts. The root rotation comes from the
/// keypoints that depend least on `q`. Joints are then visited parent-first
/// and each angle is set in closed form so that rotating about the joint
/// axis best aligns its witnesses with their targets: the keypoints it moves
/// with no other moving joint below it. A second phase repeats the same
/// update over every keypoint a joint moves, alternating with a full
/// Procrustes rotation. On exact targets with an identifiable keypoint set
/// this lands on the true solution, which plain Gauss-Newton from the
/// mid-range often does not.
pub fn sweep_initialize(
    problem: &IkProblem,
    options: &IkOptions,
    sweeps: usize,
) -> Result<(JointConfiguration, UnitQuaternion<f64>)> {
    validate(problem, options)?;
    let estimate_root_rotation = options.estimate_root_rotation;
    let model = problem.model;
    let n = model.keypoint_count();
    let mut q = problem.q_init.0.clone();
    model.clamp_into(&mut q, LIMIT_MARGIN);
    let mut scratch = model.scratch();
    let mut points = Vec::new();
    let mut axes = Vec::new();

    // for each joint, the weighted keypoints it moves with the fewest other
    // moving joints below it (ideally none)
    model.joint_axes_into(&q, &mut scratch, &mut points, &mut axes)?;
    let moves = |d: usize, k: usize| {
        let (a, o) = &axes[d];
        a.cross(&(points[k] - o)).norm() > 1e-9
    };
    let mut below: Vec<Vec<(usize, usize)>> = vec![Vec::new(); model.dof()];
    let mut depth = vec![0usize; n];
    for k in 0..n {
        if problem.weights[k] <= 0.0 {
            continue;
        }
        let chain: Vec<usize> = model.keypoint_chain(k).iter().copied().filter(|&d| moves(d, k)).collect();
        depth[k] = chain.len();
        for (i, &d) in chain.iter().enumerate() {
            below[d].push((chain.len() - 1 - i, k));
        }
    }
    // without an exclusive witness, also take keypoints one joint further
    // down: a lone point near the axis is too weak on its own
    let witnesses: Vec<Vec<usize>> = below
        .iter()
        .map(|b| {
            let min = b.iter().map(|x| x.0).min().unwrap_or(0);
            let reach = if min == 0 { 0 } else { min + 1 };
            b.iter().filter(|x| x.0 <= reach).map(|x| x.1).collect()
        })
        .collect();

    let mut rot = UnitQuaternion::identity();
    if estimate_root_rotation {
        // the root orientation from the keypoints that depend least on q;
        // re-estimating it between sweeps lets the first joints absorb it
        let max_depth = depth.iter().copied().max().unwrap_or(0);
        let mut cap = 0;
        let weights = loop {
            let w: Vec<f64> = (0..n)
                .map(|k| if depth[k] <= cap { problem.weights[k] } else { 0.0 })
                .collect();
            if w.iter().filter(|w| **w > 0.0).count() >= 3 || cap >= max_depth {
                break w;
            }
            cap += 1;
        };
        model.forward_kinematics_into(&q, &Isometry3::identity(), &mut scratch, &mut points)?;
        rot = procrustes_rotation(&points, &problem.targets, &weights);
    }
    let order = model.dof_order();
    let mut align = |q: &mut Vec<f64>, rot: &UnitQuaternion<f64>, d: usize, set: &[usize]| -> Result<()> {
        if set.is_empty() {
            return Ok(());
        }
        model.joint_axes_into(q, &mut scratch, &mut points, &mut axes)?;
        let axis = rot * axes[d].0;
        let origin = rot * axes[d].1;
        let (mut num, mut den) = (0.0, 0.0);
        for &k in set {
            let a = rot * points[k] - origin;
            let b = problem.targets[k] - origin;
            let a = a - axis * axis.dot(&a);
            let b = b - axis * axis.dot(&b);
            let w = problem.weights[k];
            num += w * axis.dot(&a.cross(&b));
            den += w * a.dot(&b);
        }
        if num.abs() + den.abs() > 1e-15 {
            let lim = &model.limits()[d];
            q[d] = (q[d] + num.atan2(den)).clamp(lim.lower + LIMIT_MARGIN, lim.upper - LIMIT_MARGIN);
        }
        Ok(())
    };
    for _ in 0..sweeps {
        for &d in &order {
            align(&mut q, &rot, d, &witnesses[d])?;
        }
    }
    // witnesses near an axis are noise sensitive; refine with every point
    // each joint moves, which never raises the residual
    let movers: Vec<Vec<usize>> = below.iter().map(|b| b.iter().map(|x| x.1).collect()).collect();
    let fk = |q: &[f64]| -> Result<Vec<Vector3<f64>>> {
        let mut s = model.scratch();
        let mut p = Vec::new();
        model.forward_kinematics_into(q, &Isometry3::identity(), &mut s, &mut p)?;
        Ok(p)
    };
    for _ in 0..sweeps {
        if estimate_root_rotation {
            rot = procrustes_rotation(&fk(&q)?, &problem.targets, &problem.weights);
        }
        for &d in &order {
            align(&mut q, &rot, d, &movers[d])?;
        }
    }
    if estimate_root_rotation {
        rot = procrustes_rotation(&fk(&q)?, &problem.targets, &problem.weights);
    }
    Ok((JointConfiguration(q), rot))
}

fn validate(problem: &IkProblem, options: &IkOptions) -> Result<()> {
    let model = problem.model;
    let n = model.keypoint_count();
    if problem.targets.len() != n {
        return Err(Error::ShapeMismatch {
            what: "IK targets",
            expected: n,
            got: problem.targets.len(),
        });
    }
    if problem.weights.len() != n {
        return Err(Error::ShapeMismatch {
            what: "IK weights",
            expected: n,
            got: problem.weights.len(),
        });
    }
    if problem.q_init.len() != model.dof() {
        return Err(Error::ShapeMismatch {
            what: "initial configuration",
            expected: model.dof(),
            got: problem.q_init.len(),
        });
    }
    if problem.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("IK weights must be finite and >= 0".into()));
    }
    if problem.targets.iter().any(|t| !t.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidArgument("IK targets must be finite".into()));
    }
    let weighted = problem.weights.iter().filter(|w| **w > 0.0).count();
    if weighted < options.min_weighted_keypoints.max(1) {
        return Err(Error::UnderConstrained {
            weighted,
            required: options.min_weighted_keypoints.max(1),
        });
    }
    Ok(())
}

struct Solver<'p, 'm> {
    problem: &'p IkProblem<'m>,
    options: &'p IkOptions,
    weight_sum: f64,
    scratch: FkScratch,
    points: Vec<Vector3<f64>>,
    jac: DMatrix<f64>,
}

impl<'p, 'm> Solver<'p, 'm> {
    fn new(problem: &'p IkProblem<'m>, options: &'p IkOptions) -> Self {
        Self {
            problem,
            options,
            weight_sum: problem.weights.iter().sum(),
            scratch: problem.model.scratch(),
            points: Vec::new(),
            jac: DMatrix::zeros(0, 0),
        }
    }

    fn cost(&mut self, q: &[f64], rot: &UnitQuaternion<f64>, iteration: usize) -> Result<f64> {
        self.problem
            .model
            .forward_kinematics_into(q, &Isometry3::identity(), &mut self.scratch, &mut self.points)?;
        let mut c = 0.0;
        for ((p, t), w) in self.points.iter().zip(&self.problem.targets).zip(&self.problem.weights) {
            if *w > 0.0 {
                c += w * (rot * p - t).norm_squared();
            }
        }
        if !c.is_finite() {
            return Err(Error::NonFinite {
                stage: "inverse kinematics",
                iteration,
            });
        }
        Ok(c)
    }

    fn rms(&self, cost: f64) -> f64 {
        (cost / self.weight_sum).sqrt()
    }

    /// Gradient `g = J^T W r` and Gauss-Newton matrix `J^T W J` at `q`.
    fn linearize(&mut self, q: &[f64], rot: &UnitQuaternion<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let model = self.problem.model;
        model.jacobian_into(q, &mut self.scratch, &mut self.points, &mut self.jac)?;
        let dof = model.dof();
        let nvar = dof + if self.options.estimate_root_rotation { 3 } else { 0 };
        let rm = rot.to_rotation_matrix();
        let mut h = DMatrix::zeros(nvar, nvar);
        let mut g = DVector::zeros(nvar);
        let mut a = DMatrix::zeros(3, nvar);
        for (k, (t, w)) in self.problem.targets.iter().zip(&self.problem.weights).enumerate() {
            if *w <= 0.0 {
                continue;
            }
            let rp = rm * self.points[k];
            let e = rp - t;
            let jk = self.jac.fixed_rows::<3>(3 * k);
            a.columns_mut(0, dof).copy_from(&(rm.matrix() * jk));
            if nvar > dof {
                a.columns_mut(dof, 3).copy_from(&(-skew(&rp)));
            }
            h.gemm_tr(*w, &a, &a, 1.0);
            g.gemv_tr(*w, &a, &e, 1.0);
        }
        Ok((h, g))
    }

    fn run(mut self, start: &[f64], observer: &mut dyn FnMut(&[f64])) -> Result<IkSolution> {
        let model = self.problem.model;
        let dof = model.dof();
        let limits = model.limits().to_vec();
        let mut q = start.to_vec();
        model.clamp_into(&mut q, LIMIT_MARGIN);
        observer(&q);

        let mut rot = UnitQuaternion::identity();
        if self.options.estimate_root_rotation {
            model.forward_kinematics_into(&q, &Isometry3::identity(), &mut self.scratch, &mut self.points)?;
            rot = procrustes_rotation(&self.points, &self.problem.targets, &self.problem.weights);
        }
        let mut cost = self.cost(&q, &rot, 0)?;
        let mut lambda = self.options.damping_init;
        let mut iterations = 0;
        let mut converged = self.rms(cost) <= 1e-12;

        while !converged && iterations < self.options.max_iters {
            iterations += 1;
            let (h, g) = self.linearize(&q, &rot)?;
            let nvar = g.len();
            let free: Vec<usize> = (0..nvar)
                .filter(|&j| {
                    if j >= dof {
                        return true;
                    }
                    let at_lower = q[j] <= limits[j].lower + LIMIT_MARGIN && g[j] > 0.0;
                    let at_upper = q[j] >= limits[j].upper - LIMIT_MARGIN && g[j] < 0.0;
                    !(at_lower || at_upper)
                })
                .collect();
            if free.is_empty() {
                converged = true;
                break;
            }
            let mut hr = h.select_rows(&free).select_columns(&free);
            for i in 0..free.len() {
                hr[(i, i)] += lambda;
            }
            let gr = DVector::from_iterator(free.len(), free.iter().map(|&j| -g[j]));
            let step = hr.cholesky().map(|c| c.solve(&gr));

            let mut accepted = false;
            if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                let mut cand = q.clone();
                let mut drot = Vector3::zeros();
                for (i, &j) in free.iter().enumerate() {
                    if j < dof {
                        cand[j] += step[i];
                    } else {
                        drot[j - dof] = step[i];
                    }
                }
                model.clamp_into(&mut cand, LIMIT_MARGIN);
                observer(&cand);
                let cand_rot = if nvar > dof {
                    compose_increment(&rot, &drot)
                } else {
                    rot
                };
                let cand_cost = self.cost(&cand, &cand_rot, iterations)?;
                if cand_cost < cost {
                    let drop = self.rms(cost) - self.rms(cand_cost);
                    q = cand;
                    rot = cand_rot;
                    cost = cand_cost;
                    lambda *= 0.5;
                    accepted = true;
                    if drop < self.options.tol_rms || self.rms(cost) <= 1e-12 {
                        converged = true;
                    }
                }
            }
            if !accepted {
                lambda *= 4.0;
                if lambda > MAX_DAMPING {
                    // no descent left at this point
                    converged = true;
                }
            }
        }
        Ok(IkSolution {
            q_star: JointConfiguration(q),
            residual_rms: self.rms(cost),
            iterations,
            converged,
            root_rotation: rot,
        })
    }
}
