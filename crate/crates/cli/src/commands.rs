//! One function per subcommand. Each returns a one-line summary for stdout.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use kinrecover::camera::{build_rig, Camera, CameraRig};
use kinrecover::dataset::motion::sample_motion;
use kinrecover::dataset::{add_noise, distill_keyframes, read_dataset, render_annotations, to_jsonl, KeypointFrame, NoiseSpec};
use kinrecover::lifting::{train, LifterNetwork, LiftingData};
use kinrecover::metrics::{evaluate, Alignment, EvalInput, EvalReport};
use kinrecover::pipeline::{self, roundtrip_eval, RoundtripConfig, RoundtripReport, ThreeDSource};
use kinrecover::trajectory::{self, RecoveredTrajectory, TrajectoryFrame};
use kinrecover::{JointConfiguration, KinematicModel};
use nalgebra::{Isometry3, Vector2};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::{sidecar, write_json, write_text, CliError, PipelineConfig, Provenance, StageExt};

#[derive(Serialize)]
struct Manifest<'a> {
    provenance: Provenance,
    records: usize,
    frames: usize,
    cameras: Vec<&'a str>,
    sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected_frames: Option<Vec<u64>>,
}

fn write_records(
    records: &[KeypointFrame],
    out: &Path,
    provenance: Provenance,
    selected_frames: Option<Vec<u64>>,
) -> Result<(), CliError> {
    let text = to_jsonl(records).stage("serialize")?;
    write_text(out, &text)?;
    let cameras: BTreeSet<&str> = records.iter().map(|r| r.camera_id.as_str()).collect();
    let frames: BTreeSet<u64> = records.iter().map(|r| r.frame_id).collect();
    let manifest = Manifest {
        provenance,
        records: records.len(),
        frames: frames.len(),
        cameras: cameras.into_iter().collect(),
        sha256: hex(&Sha256::digest(text.as_bytes())),
        selected_frames,
    };
    write_json(&sidecar(out, "manifest.json"), &manifest)
}

fn read_records(path: &Path) -> Result<Vec<KeypointFrame>, CliError> {
    std::fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    read_dataset(path).stage("read")
}

fn rig(config: &PipelineConfig) -> Result<CameraRig, CliError> {
    build_rig(&config.rig).map_err(|e| CliError::Config {
        key: "rig".into(),
        message: e.to_string(),
    })
}

/// Renders `config.frames` frames of seeded motion from every rig camera.
pub fn synth(config: &PipelineConfig, out: &Path) -> Result<String, CliError> {
    let model = config.load_model()?;
    let rig = rig(config)?;
    let (q, roots) = sample_motion(&model, &config.motion, config.frames, config.seed).stage("motion")?;
    let records = render_annotations(&model, &rig, &q, &roots).stage("render")?;
    write_records(&records, out, Provenance::new("synth", config), None)?;
    Ok(format!("wrote {} records ({} frames x {} cameras) to {}", records.len(), q.len(), rig.len(), out.display()))
}

/// Keeps every record of the `distill_k` most spread-out frames.
pub fn distill(config: &PipelineConfig, input: &Path, out: &Path) -> Result<String, CliError> {
    let records = read_records(input)?;
    let mut by_frame: BTreeMap<u64, &JointConfiguration> = BTreeMap::new();
    for r in &records {
        if r.q.values().is_empty() {
            return Err(CliError::Usage(format!("record of frame {} carries no joint configuration", r.frame_id)));
        }
        by_frame.entry(r.frame_id).or_insert(&r.q);
    }
    if by_frame.is_empty() {
        return Err(CliError::Core {
            stage: "distill",
            source: kinrecover::Error::Empty("dataset"),
        });
    }
    let ids: Vec<u64> = by_frame.keys().copied().collect();
    let qs: Vec<JointConfiguration> = by_frame.values().map(|q| (*q).clone()).collect();
    let k = config.distill_k.min(qs.len());
    let picked = distill_keyframes(&qs, k).stage("distill")?;
    let keep: BTreeSet<u64> = picked.iter().map(|&i| ids[i]).collect();
    let kept: Vec<KeypointFrame> = records.into_iter().filter(|r| keep.contains(&r.frame_id)).collect();
    write_records(&kept, out, Provenance::new("distill", config), Some(keep.iter().copied().collect()))?;
    Ok(format!("kept {} of {} frames ({} records) in {}", k, ids.len(), kept.len(), out.display()))
}

/// Applies the configured detector-noise model.
pub fn noise(config: &PipelineConfig, input: &Path, out: &Path) -> Result<String, CliError> {
    let records = read_records(input)?;
    let noisy = add_noise(&records, &config.noise).stage("noise")?;
    write_records(&noisy, out, Provenance::new("noise", config), None)?;
    Ok(format!("wrote {} noisy records to {}", noisy.len(), out.display()))
}

pub fn train_lifter(config: &PipelineConfig, input: &Path, out: &Path) -> Result<String, CliError> {
    let model = config.load_model()?;
    let root = pipeline::root_keypoint(&model).stage("model")?;
    let records = read_records(input)?;
    if records.iter().any(|r| r.camera_3d.is_empty()) {
        return Err(CliError::Usage("training needs records with camera_3d targets".into()));
    }
    let data = LiftingData::from_frames(&records, root).stage("lifting data")?;
    let (net, history) = train(&data, &config.train).stage("train")?;
    let provenance = Provenance::new("train-lifter", config);
    let network: Value = serde_json::from_str(&net.to_json().stage("serialize")?).expect("network JSON parses");
    write_json(out, &json!({ "provenance": provenance, "network": network }))?;
    let loss_path = sidecar(out, "loss.json");
    write_json(
        &loss_path,
        &json!({
            "provenance": provenance,
            "train_examples": history.train_indices.len(),
            "validation_examples": history.validation_indices.len(),
            "train_loss": history.train_loss,
            "validation_loss": history.validation_loss,
        }),
    )?;
    Ok(format!(
        "trained on {} examples ({} held out), final loss {:.6e}; wrote {} and {}",
        history.train_indices.len(),
        history.validation_indices.len(),
        history.train_loss.last().copied().unwrap_or(f64::NAN),
        out.display(),
        loss_path.display()
    ))
}

/// Reads a lifter written by [`train_lifter`] or a bare network document.
pub fn load_lifter(path: &Path) -> Result<LifterNetwork, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Core {
        stage: "lifter",
        source: e.into(),
    })?;
    let net = value.get("network").cloned().unwrap_or(value);
    LifterNetwork::from_json(&net.to_string()).stage("lifter")
}

fn camera<'a>(rig: &'a CameraRig, id: &str) -> Result<&'a Camera, CliError> {
    rig.get(id).ok_or_else(|| CliError::Config {
        key: "camera_id".into(),
        message: format!("no camera `{id}` in the rig"),
    })
}

/// The camera with the most visible keypoints, first in rig order on ties.
fn busiest_camera(rig: &CameraRig, records: &[KeypointFrame]) -> Option<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *seen.entry(r.camera_id.as_str()).or_default() += r.visible_count();
    }
    let mut best: Option<(&str, usize)> = None;
    for c in &rig.cameras {
        if let Some(&n) = seen.get(c.id.as_str()) {
            if best.is_none_or(|b| n > b.1) {
                best = Some((c.id.as_str(), n));
            }
        }
    }
    best.map(|b| b.0.to_string())
}

fn camera_records(records: Vec<KeypointFrame>, id: &str) -> Vec<KeypointFrame> {
    let mut out: Vec<KeypointFrame> = records.into_iter().filter(|r| r.camera_id == id).collect();
    out.sort_by_key(|r| r.frame_id);
    out
}

pub fn recover(
    config: &PipelineConfig,
    input: &Path,
    lifter: Option<&Path>,
    camera_id: Option<&str>,
    out: &Path,
) -> Result<String, CliError> {
    let model = config.load_model()?;
    let rig = rig(config)?;
    let records = read_records(input)?;
    if records.is_empty() {
        return Err(CliError::Core {
            stage: "recover",
            source: kinrecover::Error::Empty("keypoint records"),
        });
    }
    let id = camera_id
        .map(str::to_string)
        .or_else(|| config.camera_id.clone())
        .or_else(|| busiest_camera(&rig, &records))
        .ok_or_else(|| CliError::Usage("no record comes from a rig camera".into()))?;
    let cam = camera(&rig, &id)?;
    let frames = camera_records(records, &id);
    let mut options = config.recover_options();
    let net = lifter.map(load_lifter).transpose()?;
    if net.is_some() {
        options.source = ThreeDSource::Lifter;
    } else if options.source == ThreeDSource::Lifter {
        return Err(CliError::Usage("source `lifter` needs --lifter".into()));
    }
    let rec = pipeline::recover(&model, cam, &frames, net.as_ref(), &options).stage("recover")?;

    let mut provenance = serde_json::to_value(Provenance::new("recover", config)).expect("provenance serializes");
    provenance["camera_id"] = json!(id);
    rec.trajectory.validate(Some(&model)).stage("export")?;
    write_text(out, &(trajectory::to_gmr_json(&rec.trajectory, Some(&provenance)).stage("export")? + "\n"))?;
    let failed = rec.diagnostics.iter().filter(|d| d.flags.failed()).count();
    write_json(
        &sidecar(out, "diagnostics.json"),
        &json!({
            "provenance": provenance,
            "camera_id": id,
            "segments": rec.segments,
            "failed_frames": failed,
            "frames": rec.diagnostics,
        }),
    )?;
    Ok(format!(
        "recovered {} frames from `{id}` ({failed} failed, {} segments) into {}",
        frames.len(),
        rec.segments.len(),
        out.display()
    ))
}

fn pose(f: &TrajectoryFrame) -> Isometry3<f64> {
    Isometry3::from_parts(f.position().into(), f.rotation())
}

/// Scores a recovered motion file against ground-truth records. The
/// recovered motion is egocentric, so it is placed in the world with the
/// ground truth's own frame-0 base before comparing.
pub fn eval(
    config: &PipelineConfig,
    pred_path: &Path,
    truth_path: &Path,
    camera_id: Option<&str>,
    out: &Path,
) -> Result<String, CliError> {
    let model = config.load_model()?;
    let rig = rig(config)?;
    let text = std::fs::read_to_string(pred_path).map_err(|e| CliError::io(pred_path, e))?;
    let pred = trajectory::from_gmr_json(&text).stage("eval")?;
    let written: Option<String> = serde_json::from_str::<Value>(&text)
        .ok()
        .and_then(|v| v["provenance"]["camera_id"].as_str().map(str::to_string));
    let id = camera_id
        .map(str::to_string)
        .or(written)
        .or_else(|| config.camera_id.clone())
        .ok_or_else(|| CliError::Usage("cannot tell which camera the motion came from; pass --camera".into()))?;
    let cam = camera(&rig, &id)?;
    let truth = camera_records(read_records(truth_path)?, &id);
    if truth.len() != pred.len() {
        return Err(CliError::Usage(format!(
            "{} ground-truth records for `{id}` but {} recovered frames",
            truth.len(),
            pred.len()
        )));
    }
    let mut gt_frames = Vec::with_capacity(truth.len());
    for r in &truth {
        let root = r
            .root_pose_world
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("record of frame {} has no root pose", r.frame_id)))?
            .to_isometry();
        gt_frames.push(TrajectoryFrame::new(root.translation.vector, root.rotation, r.q.0.clone()));
    }
    let gt = RecoveredTrajectory {
        fps: pred.fps,
        joint_names: model.joint_names(),
        frames: gt_frames,
    };
    let ego = trajectory::to_egocentric(&gt).stage("eval")?;
    let base = pose(&gt.frames[0]) * pose(&ego.frames[0]).inverse();

    let mut input = EvalInput::default();
    for ((p, g), r) in pred.frames.iter().zip(&gt.frames).zip(&truth) {
        let pts = model
            .forward_kinematics(&JointConfiguration(p.qpos.clone()), &(base * pose(p)))
            .stage("eval")?;
        input.pred_2d.push(
            cam.world_to_camera(&pts)
                .iter()
                .map(|x| cam.intrinsics.project_point(x).pixel)
                .collect::<Vec<Vector2<f64>>>(),
        );
        input.pred_3d.push(pts);
        input
            .gt_3d
            .push(model.forward_kinematics(&JointConfiguration(g.qpos.clone()), &pose(g)).stage("eval")?);
        input.gt_2d.push(r.pixels());
        input.visibility.push(r.visibility.clone());
        input.bboxes.push(r.bbox);
    }
    let root = pipeline::root_keypoint(&model).stage("model")?;
    let report: EvalReport =
        evaluate(&input, Alignment::Root(root), &config.pck_thresholds, None).stage("metrics")?;
    let mut provenance = serde_json::to_value(Provenance::new("eval", config)).expect("provenance serializes");
    provenance["camera_id"] = json!(id);
    write_json(out, &json!({ "provenance": provenance, "report": report }))?;
    Ok(format!("MPJPE {:.2} mm, AP {:.3} over {} frames; wrote {}", report.mpjpe_mm, report.ap, report.frame_count, out.display()))
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseRun {
    pub noise_sigma: f64,
    /// Mean absolute joint error over all trials (radians).
    pub mean_joint_abs_rad: f64,
    pub reports: Vec<RoundtripReport>,
}

/// Synthesize, observe, recover and score. Each sigma in `sigmas` runs
/// `trials` sequences (seeds `seed..seed + trials`); an empty list uses the
/// configured noise unchanged.
pub fn roundtrip_runs(
    config: &PipelineConfig,
    sigmas: &[f64],
    trials: usize,
    lifter: Option<&LifterNetwork>,
) -> Result<Vec<NoiseRun>, CliError> {
    let model = config.load_model()?;
    let rig = rig(config)?;
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let sigmas: Vec<f64> = if sigmas.is_empty() { vec![config.noise.pixel_sigma] } else { sigmas.to_vec() };
    let mut recover = config.recover_options();
    if lifter.is_some() {
        recover.source = ThreeDSource::Lifter;
    }
    let jobs: Vec<(usize, u64)> = (0..sigmas.len()).flat_map(|s| (0..trials as u64).map(move |t| (s, t))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(s, t)| run_trial(&model, &rig, config, &recover, sigmas[s], t, lifter))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(sigmas
        .iter()
        .zip(reports.chunks(trials))
        .map(|(&sigma, chunk)| NoiseRun {
            noise_sigma: sigma,
            mean_joint_abs_rad: chunk.iter().map(|r| r.joint_mean_abs_rad).sum::<f64>() / chunk.len() as f64,
            reports: chunk.to_vec(),
        })
        .collect())
}

fn run_trial(
    model: &KinematicModel,
    rig: &CameraRig,
    config: &PipelineConfig,
    recover: &kinrecover::pipeline::RecoverOptions,
    sigma: f64,
    trial: u64,
    lifter: Option<&LifterNetwork>,
) -> Result<RoundtripReport, CliError> {
    let seed = config.seed.wrapping_add(trial);
    let (q, roots) = sample_motion(model, &config.motion, config.frames, seed).stage("motion")?;
    let rt = RoundtripConfig {
        camera_id: config.camera_id.clone(),
        noise: NoiseSpec {
            pixel_sigma: sigma,
            seed: config.noise.seed.wrapping_add(trial),
            ..config.noise
        },
        recover: recover.clone(),
        pck_thresholds: config.pck_thresholds.clone(),
    };
    let (report, _) = roundtrip_eval(model, rig, &q, &roots, lifter, &rt).stage("roundtrip")?;
    Ok(report)
}

pub fn roundtrip(
    config: &PipelineConfig,
    sigmas: &[f64],
    trials: usize,
    lifter: Option<&Path>,
    out: &Path,
) -> Result<String, CliError> {
    let net = lifter.map(load_lifter).transpose()?;
    let runs = roundtrip_runs(config, sigmas, trials, net.as_ref())?;
    write_json(out, &json!({ "provenance": Provenance::new("roundtrip", config), "runs": runs }))?;
    let summary: Vec<String> = runs
        .iter()
        .map(|r| format!("sigma {}: {:.4} rad", r.noise_sigma, r.mean_joint_abs_rad))
        .collect();
    Ok(format!("{}; wrote {}", summary.join(", "), out.display()))
}
