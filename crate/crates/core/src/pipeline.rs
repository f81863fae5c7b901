//! End-to-end recovery of a robot motion from one camera's keypoint track,
//! and the synthetic round-trip harness built on it.
//!
//! Per frame: 3D keypoints in the camera frame (from one of the
//! [`ThreeDSource`]s) are centered on the root and fitted by IK with a free
//! root rotation. The solved configuration is re-posed by forward
//! kinematics at the identity root, and PnP against the 2D keypoints gives
//! the camera-from-root transform. Composing with the camera extrinsics
//! yields the world root pose. The sequence then goes through gap filling,
//! EMA smoothing and the egocentric base change.

use nalgebra::{DMatrix, Isometry3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraRig};
use crate::dataset::motion::{sample_pool, MotionParams, PoolSpec};
use crate::dataset::{add_noise, render_annotations, render_frame, KeypointFrame, NoiseSpec, MIN_VISIBLE_KEYPOINTS};
use crate::error::{Error, Result};
use crate::ik::{self, IkOptions, IkProblem};
use crate::lifting::{self, LifterNetwork, LiftingData, LinearBaseline, TrainConfig, TrainHistory};
use crate::metrics::{self, Alignment, EvalInput, EvalReport};
use crate::model::{JointConfiguration, KinematicModel};
use crate::pnp::{self, PnpOptions, PnpProblem};
use crate::trajectory::{self, FrameFlags, RecoveredTrajectory, TrajectoryFrame};

/// Where the per-frame 3D keypoints come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThreeDSource {
    /// The record's exact camera-frame points.
    GroundTruth3d,
    /// Each observed pixel back-projected at its true depth, so 2D noise
    /// reaches the IK targets.
    #[default]
    BackProjectTrueDepth,
    /// A trained lifting network applied to the observed pixels.
    Lifter,
}

impl ThreeDSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ground_truth_3d" => Ok(Self::GroundTruth3d),
            "back_project_true_depth" => Ok(Self::BackProjectTrueDepth),
            "lifter" => Ok(Self::Lifter),
            other => Err(Error::InvalidArgument(format!("unknown 3D source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoverOptions {
    pub source: ThreeDSource,
    pub ik: IkOptions,
    pub pnp: PnpOptions,
    /// Initialize PnP from the previous frame's pose.
    pub pnp_chaining: bool,
    pub ema_alpha: f64,
    /// Failed runs shorter than this many frames are interpolated.
    pub max_gap: usize,
    pub fps: f64,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self {
            source: ThreeDSource::default(),
            ik: IkOptions::default(),
            pnp: PnpOptions::default(),
            pnp_chaining: true,
            ema_alpha: 0.3,
            max_gap: 10,
            fps: 30.0,
        }
    }
}

impl RecoverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("ema_alpha must be in (0, 1], got {}", self.ema_alpha)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

/// Per-frame solver record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame_id: u64,
    /// Both solvers produced a result for this frame.
    pub solved: bool,
    pub ik_residual_rms: Option<f64>,
    pub ik_iterations: usize,
    pub pnp_reproj_rms: Option<f64>,
    pub pnp_iterations: usize,
    pub flags: FrameFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Recovery {
    /// World-frame solutions before post-processing. Frames that were not
    /// solved hold the nearest solved values.
    pub raw: RecoveredTrajectory,
    /// After gap filling, smoothing and the egocentric base change.
    pub trajectory: RecoveredTrajectory,
    pub segments: Vec<std::ops::Range<usize>>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

/// A warm-started IK residual above `RESTART_RATIO * previous + RESTART_FLOOR`
/// triggers a retry from the closed-form sweep.
pub const RESTART_RATIO: f64 = 2.0;
pub const RESTART_FLOOR: f64 = 1e-6;
/// Closed-form joint sweeps before the first solved frame.
pub const SWEEPS: usize = 8;
/// Seeded restarts per limb on a cold start.
pub const LIMB_TRIES: usize = 12;

/// Index of the keypoint attached to the model's root link.
pub fn root_keypoint(model: &KinematicModel) -> Result<usize> {
    model
        .keypoint_links()
        .iter()
        .position(|l| l == model.root_link())
        .ok_or_else(|| Error::InvalidModel(format!("root link `{}` carries no keypoint", model.root_link())))
}

/// Root-relative camera-frame targets for one record.
fn camera_targets(
    frame: &KeypointFrame,
    camera: &Camera,
    source: ThreeDSource,
    lifter: Option<&LifterNetwork>,
    root: usize,
) -> Result<Vec<Vector3<f64>>> {
    let n = frame.keypoint_count();
    let need_3d = || -> Result<Vec<Vector3<f64>>> {
        if frame.camera_3d.len() != n {
            return Err(Error::InvalidArgument(format!(
                "frame {} has no camera-frame 3D keypoints",
                frame.frame_id
            )));
        }
        Ok(frame.camera_points())
    };
    let points = match source {
        ThreeDSource::GroundTruth3d => need_3d()?,
        ThreeDSource::BackProjectTrueDepth => need_3d()?
            .iter()
            .zip(frame.pixels())
            .map(|(p, px)| camera.intrinsics.back_project(&px, p.z))
            .collect(),
        ThreeDSource::Lifter => {
            let net = lifter.ok_or_else(|| Error::InvalidArgument("lifter source needs a network".into()))?;
            if net.keypoints() != n || net.root_index() != root {
                return Err(Error::ShapeMismatch {
                    what: "lifter keypoints",
                    expected: n,
                    got: net.keypoints(),
                });
            }
            return lifting::lift_pixels(net, &frame.pixel_2d, &frame.visibility);
        }
    };
    Ok(lifting::root_relative(&points, root))
}

struct FrameSolution {
    q: JointConfiguration,
    cam_from_root: Isometry3<f64>,
    ik_converged: bool,
    pnp_converged: bool,
    ik_rms: f64,
    ik_iters: usize,
    pnp_rms: f64,
    pnp_iters: usize,
}

/// Recovers the motion seen in `frames`, which must all come from `camera`
/// and be in temporal order.
pub fn recover(
    model: &KinematicModel,
    camera: &Camera,
    frames: &[KeypointFrame],
    lifter: Option<&LifterNetwork>,
    options: &RecoverOptions,
) -> Result<Recovery> {
    options.validate()?;
    if frames.is_empty() {
        return Err(Error::Empty("keypoint frames"));
    }
    let root = root_keypoint(model)?;
    let n = model.keypoint_count();
    for f in frames {
        if f.camera_id != camera.id {
            return Err(Error::InvalidArgument(format!(
                "frame {} is from camera `{}`, expected `{}`",
                f.frame_id, f.camera_id, camera.id
            )));
        }
        if f.keypoint_count() != n || f.visibility.len() != n {
            return Err(Error::ShapeMismatch {
                what: "frame keypoints",
                expected: n,
                got: f.keypoint_count(),
            });
        }
    }
    let mut ik_opts = options.ik.clone();
    ik_opts.estimate_root_rotation = true;
    let world_from_cam = camera.extrinsics.to_isometry().inverse();

    let mut q_warm = model.mid_configuration();
    let mut prev_pose: Option<Isometry3<f64>> = None;
    let mut prev_rms: Option<f64> = None;
    let mut solutions: Vec<Option<FrameSolution>> = Vec::with_capacity(frames.len());
    let mut diagnostics = Vec::with_capacity(frames.len());
    for f in frames {
        let outcome = solve_frame(model, camera, f, lifter, options, &ik_opts, root, &q_warm, prev_pose, prev_rms);
        let diag = match &outcome {
            Ok(s) => FrameDiagnostics {
                frame_id: f.frame_id,
                solved: true,
                ik_residual_rms: Some(s.ik_rms),
                ik_iterations: s.ik_iters,
                pnp_reproj_rms: Some(s.pnp_rms),
                pnp_iterations: s.pnp_iters,
                flags: FrameFlags {
                    ik_converged: s.ik_converged,
                    pnp_converged: s.pnp_converged,
                    ..FrameFlags::default()
                },
                error: None,
            },
            Err(e) => FrameDiagnostics {
                frame_id: f.frame_id,
                solved: false,
                ik_residual_rms: None,
                ik_iterations: 0,
                pnp_reproj_rms: None,
                pnp_iterations: 0,
                flags: FrameFlags {
                    ik_converged: false,
                    pnp_converged: false,
                    ..FrameFlags::default()
                },
                error: Some(e.to_string()),
            },
        };
        diagnostics.push(diag);
        match outcome {
            Ok(s) => {
                q_warm = s.q.clone();
                prev_pose = Some(s.cam_from_root);
                prev_rms = Some(s.ik_rms);
                solutions.push(Some(s));
            }
            Err(e) if e.is_numeric() || matches!(e, Error::Stage { .. }) => solutions.push(None),
            Err(e) => return Err(e),
        }
    }
    if solutions.iter().all(Option::is_none) {
        return Err(Error::Degenerate("no frame could be solved".into()).at("recover"));
    }

    let mut out_frames = Vec::with_capacity(frames.len());
    for (i, s) in solutions.iter().enumerate() {
        // unsolved frames take the nearest solved values until gap filling
        let src = s.as_ref().or_else(|| nearest_solved(&solutions, i)).expect("one frame solved");
        let world_root = world_from_cam * src.cam_from_root;
        let mut tf = TrajectoryFrame::new(world_root.translation.vector, world_root.rotation, src.q.0.clone());
        tf.flags = diagnostics[i].flags;
        out_frames.push(tf);
    }
    let raw = RecoveredTrajectory {
        fps: options.fps,
        joint_names: model.joint_names(),
        frames: out_frames,
    };
    let (trajectory, segments) = post_process(&raw, options)?;
    Ok(Recovery {
        raw,
        trajectory,
        segments,
        diagnostics,
    })
}

fn nearest_solved<T>(items: &[Option<T>], i: usize) -> Option<&T> {
    (1..items.len()).find_map(|d| {
        let before = i.checked_sub(d).and_then(|j| items[j].as_ref());
        before.or_else(|| items.get(i + d).and_then(Option::as_ref))
    })
}

/// Gap filling, EMA and egocentric projection, in that order.
pub fn post_process(
    raw: &RecoveredTrajectory,
    options: &RecoverOptions,
) -> Result<(RecoveredTrajectory, Vec<std::ops::Range<usize>>)> {
    let filled = trajectory::interpolate_gaps(raw, options.max_gap);
    let smooth = trajectory::ema_smooth(&filled.trajectory, options.ema_alpha).map_err(|e| e.at("smoothing"))?;
    let ego = trajectory::to_egocentric(&smooth).map_err(|e| e.at("egocentric"))?;
    Ok((ego, filled.segments))
}

#[allow(clippy::too_many_arguments)]
fn solve_frame(
    model: &KinematicModel,
    camera: &Camera,
    frame: &KeypointFrame,
    lifter: Option<&LifterNetwork>,
    options: &RecoverOptions,
    ik_opts: &IkOptions,
    root: usize,
    q_warm: &JointConfiguration,
    prev_pose: Option<Isometry3<f64>>,
    prev_rms: Option<f64>,
) -> Result<FrameSolution> {
    if frame.visible_count() < MIN_VISIBLE_KEYPOINTS {
        return Err(Error::UnderConstrained {
            weighted: frame.visible_count(),
            required: MIN_VISIBLE_KEYPOINTS,
        }
        .at("input"));
    }
    let targets =
        camera_targets(frame, camera, options.source, lifter, root).map_err(|e| e.at("3d keypoints"))?;
    let weights = ik::visibility_weights(&frame.visibility);
    let problem = IkProblem {
        model,
        targets,
        weights: weights.clone(),
        q_init: q_warm.clone(),
    };
    let seed = ik_opts.multi_start_seed ^ frame.frame_id;
    let cold = |q_init: JointConfiguration| -> Result<ik::IkSolution> {
        ik::cold_start(&IkProblem { q_init, ..problem.clone() }, ik_opts, SWEEPS, LIMB_TRIES, seed)
    };
    let mut ik_sol = match prev_rms {
        None => cold(q_warm.clone()),
        Some(_) => ik::solve_ik(&problem, ik_opts),
    }
    .map_err(|e| e.at("inverse kinematics"))?;
    // a warm start far above the previous residual may have changed branch
    if let Some(r) = prev_rms {
        if ik_sol.residual_rms > RESTART_RATIO * r + RESTART_FLOOR {
            let alt = cold(q_warm.clone()).map_err(|e| e.at("inverse kinematics"))?;
            if alt.residual_rms < ik_sol.residual_rms {
                ik_sol = alt;
            }
        }
    }
    let local = model
        .forward_kinematics(&ik_sol.q_star, &Isometry3::identity())
        .map_err(|e| e.at("forward kinematics"))?;
    let pnp_problem = PnpProblem {
        local_points: local,
        pixels: frame.pixels(),
        weights,
        intrinsics: camera.intrinsics.clone(),
        pose_init: if options.pnp_chaining { prev_pose } else { None },
    };
    // candidates: the chained pose and the IK root orientation; the 24
    // axis-aligned hypotheses only when both fail
    let mut pnp_sol: Option<pnp::PnpSolution> = None;
    let mut keep = |s: pnp::PnpSolution| {
        if pnp_sol.as_ref().map_or(true, |b| s.reproj_rms < b.reproj_rms) {
            pnp_sol = Some(s);
        }
    };
    if pnp_problem.pose_init.is_some() {
        if let Ok(s) = pnp::solve_pnp(&pnp_problem, &options.pnp) {
            keep(s);
        }
    }
    if let Ok(s) = pnp::solve_pnp_from_rotation(&pnp_problem, ik_sol.root_rotation, &options.pnp) {
        keep(s);
    }
    let pnp_sol = match pnp_sol {
        Some(s) => s,
        None => pnp::solve_pnp(&PnpProblem { pose_init: None, ..pnp_problem }, &options.pnp).map_err(|e| e.at("pnp"))?,
    };
    Ok(FrameSolution {
        q: ik_sol.q_star,
        cam_from_root: pnp_sol.pose(),
        ik_converged: ik_sol.converged,
        pnp_converged: pnp_sol.converged,
        ik_rms: ik_sol.residual_rms,
        ik_iters: ik_sol.iterations,
        pnp_rms: pnp_sol.reproj_rms,
        pnp_iters: pnp_sol.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundtripConfig {
    /// Camera to observe from; when `None`, the rig camera that sees the
    /// most keypoints over the sequence.
    pub camera_id: Option<String>,
    pub noise: NoiseSpec,
    pub recover: RecoverOptions,
    pub pck_thresholds: Vec<f64>,
}

impl Default for RoundtripConfig {
    fn default() -> Self {
        Self {
            camera_id: None,
            noise: NoiseSpec::none(),
            recover: RecoverOptions::default(),
            pck_thresholds: vec![0.05, 0.1],
        }
    }
}

/// Errors of a post-processed trajectory against equally post-processed
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostErrors {
    pub joint_rms_rad: f64,
    pub root_rms_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub camera_id: String,
    pub frame_count: usize,
    /// Frames whose IK or PnP did not converge (or did not run).
    pub failed_frames: usize,
    pub unsolved_frames: usize,
    /// Over solved frames, before post-processing.
    pub joint_rms_rad: f64,
    pub joint_mean_abs_rad: f64,
    pub root_rms_m: f64,
    /// World-frame keypoints of the recovered motion against ground truth,
    /// no alignment.
    pub refk_mpjpe_mm: f64,
    pub post: PostErrors,
    pub eval: EvalReport,
}

fn rms(sum_sq: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        (sum_sq / count as f64).sqrt()
    }
}

/// Renders the motion from one rig camera, perturbs it with `config.noise`,
/// recovers it and scores the result against the ground truth.
pub fn roundtrip_eval(
    model: &KinematicModel,
    rig: &CameraRig,
    q_sequence: &[JointConfiguration],
    root_sequence: &[Isometry3<f64>],
    lifter: Option<&LifterNetwork>,
    config: &RoundtripConfig,
) -> Result<(RoundtripReport, Recovery)> {
    if q_sequence.len() != root_sequence.len() {
        return Err(Error::ShapeMismatch {
            what: "root pose sequence",
            expected: q_sequence.len(),
            got: root_sequence.len(),
        });
    }
    if q_sequence.is_empty() {
        return Err(Error::Empty("joint sequence"));
    }
    let render = |camera: &Camera| {
        q_sequence
            .iter()
            .zip(root_sequence)
            .enumerate()
            .map(|(i, (q, r))| render_frame(model, camera, i as u64, q, r))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at("render"))
    };
    let (camera, clean) = match &config.camera_id {
        Some(id) => {
            let cam = rig
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("no camera `{id}` in rig")))?;
            (cam, render(cam)?)
        }
        None => {
            // the camera that sees the most keypoints, first in rig order on ties
            let mut best: Option<(&Camera, Vec<KeypointFrame>, usize)> = None;
            for cam in &rig.cameras {
                let frames = render(cam)?;
                let seen = frames.iter().map(KeypointFrame::visible_count).sum::<usize>();
                if best.as_ref().map_or(true, |b| seen > b.2) {
                    best = Some((cam, frames, seen));
                }
            }
            let (cam, frames, _) = best.ok_or(Error::Empty("camera rig"))?;
            (cam, frames)
        }
    };
    let observed = add_noise(&clean, &config.noise).map_err(|e| e.at("noise"))?;
    let recovery = recover(model, camera, &observed, lifter, &config.recover)?;

    let dof = model.dof();
    let (mut q_sq, mut q_abs, mut root_sq, mut solved) = (0.0, 0.0, 0.0, 0usize);
    let mut pred_3d = Vec::new();
    let mut gt_3d = Vec::new();
    let mut input = EvalInput::default();
    for (i, d) in recovery.diagnostics.iter().enumerate() {
        if !d.solved {
            continue;
        }
        solved += 1;
        let rf = &recovery.raw.frames[i];
        for (a, b) in rf.qpos.iter().zip(q_sequence[i].values()) {
            q_sq += (a - b).powi(2);
            q_abs += (a - b).abs();
        }
        root_sq += (rf.position() - root_sequence[i].translation.vector).norm_squared();
        let pose = Isometry3::from_parts(rf.position().into(), rf.rotation());
        let pred = model.forward_kinematics(&JointConfiguration(rf.qpos.clone()), &pose)?;
        let gt = clean[i].world_points();
        let proj: Vec<Vector2<f64>> = camera
            .world_to_camera(&pred)
            .iter()
            .map(|p| camera.intrinsics.project_point(p).pixel)
            .collect();
        input.pred_2d.push(proj);
        input.gt_2d.push(clean[i].pixels());
        input.visibility.push(clean[i].visibility.clone());
        input.bboxes.push(clean[i].bbox);
        pred_3d.push(pred);
        gt_3d.push(gt);
    }
    let refk_mpjpe_mm = metrics::mpjpe(&pred_3d, &gt_3d, Alignment::None)?;
    input.pred_3d = pred_3d;
    input.gt_3d = gt_3d;
    let eval = metrics::evaluate(
        &input,
        Alignment::Root(root_keypoint(model)?),
        &config.pck_thresholds,
        None,
    )
    .map_err(|e| e.at("metrics"))?;

    // ground truth through the same post-processing, failures included
    let gt_raw = RecoveredTrajectory {
        fps: config.recover.fps,
        joint_names: model.joint_names(),
        frames: q_sequence
            .iter()
            .zip(root_sequence)
            .zip(&recovery.raw.frames)
            .map(|((q, r), rf)| {
                let mut f = TrajectoryFrame::new(r.translation.vector, r.rotation, q.0.clone());
                f.flags = rf.flags;
                f
            })
            .collect(),
    };
    let (gt_post, _) = post_process(&gt_raw, &config.recover)?;
    let (mut pq, mut pr) = (0.0, 0.0);
    for (a, b) in recovery.trajectory.frames.iter().zip(&gt_post.frames) {
        pq += a.qpos.iter().zip(&b.qpos).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        pr += (a.position() - b.position()).norm_squared();
    }
    let n_frames = q_sequence.len();
    let report = RoundtripReport {
        camera_id: camera.id.clone(),
        frame_count: n_frames,
        failed_frames: recovery.diagnostics.iter().filter(|d| d.flags.failed()).count(),
        unsolved_frames: n_frames - solved,
        joint_rms_rad: rms(q_sq, solved * dof),
        joint_mean_abs_rad: if solved == 0 { 0.0 } else { q_abs / (solved * dof) as f64 },
        root_rms_m: rms(root_sq, solved),
        refk_mpjpe_mm,
        post: PostErrors {
            joint_rms_rad: rms(pq, n_frames * dof),
            root_rms_m: rms(pr, n_frames),
        },
        eval,
    };
    Ok((report, recovery))
}

/// Rotation angle between two unit quaternions, in radians.
pub fn rotation_gap(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}

/// Keyframe-distilled lifting experiment: sample a motion pool, distill it,
/// render every keyframe through the rig, hold out a fraction of the
/// keyframes (all their views), then train the lifter and fit the linear
/// baseline on the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftingBenchmarkConfig {
    pub pool: PoolSpec,
    pub motion: MotionParams,
    pub keyframes: usize,
    pub holdout_fraction: f64,
    pub ridge: f64,
    pub train: TrainConfig,
}

impl Default for LiftingBenchmarkConfig {
    fn default() -> Self {
        Self {
            // about 1000 pool frames per keyframe
            pool: PoolSpec {
                sequences: 1000,
                frames_per_sequence: 5000,
                seed: 0,
            },
            motion: MotionParams::default(),
            keyframes: 5000,
            holdout_fraction: 0.1,
            ridge: 1e-6,
            train: TrainConfig {
                learning_rate: 0.1,
                epochs: 300,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiftingBenchmark {
    /// Root-relative MPJPE on the held-out records.
    pub lifter_mpjpe_mm: f64,
    pub baseline_mpjpe_mm: f64,
    pub pool_frames: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub history: TrainHistory,
    pub network: LifterNetwork,
}

pub fn lifting_benchmark(
    model: &KinematicModel,
    rig: &CameraRig,
    config: &LiftingBenchmarkConfig,
) -> Result<LiftingBenchmark> {
    let root = root_keypoint(model)?;
    let pool = sample_pool(model, &config.motion, &config.pool).map_err(|e| e.at("motion pool"))?;
    let keys = pool.distill(config.keyframes).map_err(|e| e.at("distillation"))?;
    let (q, roots) = pool.select(&keys);
    let pool_frames = pool.len();
    drop(pool);
    let records = render_annotations(model, rig, &q, &roots).map_err(|e| e.at("rendering"))?;
    let (_, held) = lifting::split_indices(keys.len(), config.holdout_fraction, config.train.seed ^ HOLDOUT_SALT);
    let held: std::collections::HashSet<u64> = held.into_iter().map(|i| i as u64).collect();
    let (test, train): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| held.contains(&r.frame_id));
    let train = LiftingData::from_frames(&train, root)?;
    let test = LiftingData::from_frames(&test, root)?;
    let (network, history) = lifting::train(&train, &config.train).map_err(|e| e.at("lifter training"))?;
    let baseline = LinearBaseline::fit(&train, config.ridge).map_err(|e| e.at("linear baseline"))?;
    let mm = |pred: DMatrix<f64>| 1e3 * lifting::mean_keypoint_error(&pred, &test.targets);
    Ok(LiftingBenchmark {
        lifter_mpjpe_mm: mm(network.forward_batch(&test.inputs)),
        baseline_mpjpe_mm: mm(baseline.predict_batch(&test.inputs)),
        pool_frames,
        train_records: train.len(),
        test_records: test.len(),
        history,
        network,
    })
}

/// Keeps the keyframe hold-out independent of the training split.
const HOLDOUT_SALT: u64 = 0x5eed_4b1d;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{build_rig, RigParams};
    use crate::dataset::motion::{sample_motion, MotionParams};
    use crate::fixtures;

    fn motion(frames: usize, seed: u64) -> (KinematicModel, Vec<JointConfiguration>, Vec<Isometry3<f64>>) {
        let model = fixtures::humanoid();
        let (q, r) = sample_motion(&model, &MotionParams::default(), frames, seed).unwrap();
        (model, q, r)
    }

    #[test]
    fn noiseless_ground_truth_roundtrip_is_exact() {
        let (model, q, r) = motion(30, 3);
        let rig = build_rig(&RigParams::default()).unwrap();
        let config = RoundtripConfig {
            recover: RecoverOptions {
                source: ThreeDSource::GroundTruth3d,
                ..RecoverOptions::default()
            },
            ..RoundtripConfig::default()
        };
        let (report, recovery) = roundtrip_eval(&model, &rig, &q, &r, None, &config).unwrap();
        assert_eq!(report.unsolved_frames, 0);
        assert!(report.joint_rms_rad < 1e-3, "{report:?}");
        assert!(report.root_rms_m < 2e-3, "{report:?}");
        assert!(report.refk_mpjpe_mm < 5.0, "{report:?}");
        assert!(report.post.root_rms_m < 2e-3, "{report:?}");
        recovery.trajectory.validate(Some(&model)).unwrap();
        assert!(report.eval.ap > 0.99);
    }

    #[test]
    fn pixel_noise_increases_error() {
        let (model, q, r) = motion(20, 5);
        let rig = build_rig(&RigParams::default()).unwrap();
        let base = RoundtripConfig::default();
        let noisy = RoundtripConfig {
            noise: NoiseSpec::gaussian(1.0, 9),
            ..RoundtripConfig::default()
        };
        let (clean, _) = roundtrip_eval(&model, &rig, &q, &r, None, &base).unwrap();
        let (dirty, _) = roundtrip_eval(&model, &rig, &q, &r, None, &noisy).unwrap();
        assert!(dirty.joint_mean_abs_rad > clean.joint_mean_abs_rad);
        assert!(dirty.refk_mpjpe_mm > clean.refk_mpjpe_mm);
    }

    #[test]
    fn dropped_frames_are_interpolated_and_flagged() {
        let (model, q, r) = motion(20, 7);
        let rig = build_rig(&RigParams::default()).unwrap();
        let cam = &rig.cameras[0];
        let mut frames: Vec<_> = q
            .iter()
            .zip(&r)
            .enumerate()
            .map(|(i, (q, r))| render_frame(&model, cam, i as u64, q, r).unwrap())
            .collect();
        for i in [4, 11, 12] {
            frames[i].visibility.fill(false);
            frames[i].degenerate = true;
        }
        let rec = recover(&model, cam, &frames, None, &RecoverOptions::default()).unwrap();
        let flagged: Vec<usize> = (0..20).filter(|&i| rec.trajectory.frames[i].flags.interpolated).collect();
        assert_eq!(flagged, vec![4, 11, 12]);
        assert_eq!(rec.segments, vec![0..20]);
        assert!(rec.diagnostics[4].error.as_deref().unwrap().starts_with("input"));
    }

    #[test]
    fn single_frame_post_processing_is_a_base_change() {
        let (model, q, r) = motion(1, 2);
        let rig = build_rig(&RigParams::default()).unwrap();
        let cam = &rig.cameras[0];
        let f = render_frame(&model, cam, 0, &q[0], &r[0]).unwrap();
        let rec = recover(&model, cam, &[f], None, &RecoverOptions::default()).unwrap();
        let out = &rec.trajectory.frames[0];
        assert!(out.root_pos[0].abs() < 1e-12 && out.root_pos[1].abs() < 1e-12);
        assert!((out.root_pos[2] - rec.raw.frames[0].root_pos[2]).abs() < 1e-12);
        assert_eq!(out.qpos, rec.raw.frames[0].qpos);
    }

    #[test]
    fn wrong_camera_and_empty_input_are_rejected() {
        let (model, q, r) = motion(2, 1);
        let rig = build_rig(&RigParams::default()).unwrap();
        let f = render_frame(&model, &rig.cameras[1], 0, &q[0], &r[0]).unwrap();
        let opts = RecoverOptions::default();
        assert!(recover(&model, &rig.cameras[0], &[f], None, &opts).is_err());
        assert!(recover(&model, &rig.cameras[0], &[], None, &opts).is_err());
    }

    #[test]
    fn small_lifting_benchmark_holds_out_whole_keyframes() {
        let model = fixtures::humanoid();
        let rig = build_rig(&RigParams::default()).unwrap();
        let config = LiftingBenchmarkConfig {
            pool: PoolSpec {
                sequences: 4,
                frames_per_sequence: 200,
                seed: 1,
            },
            keyframes: 40,
            train: TrainConfig {
                epochs: 3,
                batch_size: 16,
                hidden: vec![16],
                ..LiftingBenchmarkConfig::default().train
            },
            ..LiftingBenchmarkConfig::default()
        };
        let b = lifting_benchmark(&model, &rig, &config).unwrap();
        assert_eq!(b.pool_frames, 800);
        // 4 of 40 keyframes held out, 9 views each, minus views without the root
        assert!(b.test_records <= 36 && b.test_records >= 30, "{}", b.test_records);
        assert!(b.train_records + b.test_records <= 360);
        assert!(b.lifter_mpjpe_mm.is_finite() && b.baseline_mpjpe_mm.is_finite());
        assert_eq!(b.history.train_loss.len(), 4);
    }
}
