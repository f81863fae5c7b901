//! Pose-estimation metrics.
//!
//! MPJPE is reported in millimeters, spatial alignment error in meters.
//! PCK and OKS are asymmetric: the bounding box and visibility always come
//! from the ground truth.

use std::ops::Range;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform per-keypoint OKS falloff constant.
pub const OKS_KAPPA: f64 = 0.1;
/// OKS thresholds averaged by [`oks_ap`].
pub const AP_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    None,
    /// Subtract the given keypoint from both poses first.
    Root(usize),
}

impl Default for Alignment {
    fn default() -> Self {
        Alignment::Root(0)
    }
}

impl Alignment {
    fn root(self) -> Option<usize> {
        match self {
            Alignment::None => None,
            Alignment::Root(r) => Some(r),
        }
    }
}

fn check_frames<T>(pred: &[Vec<T>], gt: &[Vec<T>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            what: "predicted frames",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch {
                what: "predicted joints",
                expected: g.len(),
                got: p.len(),
            });
        }
    }
    Ok(())
}

/// Mean Euclidean error per joint across frames, in millimeters.
pub fn per_joint_errors(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
    alignment: Alignment,
) -> Result<Vec<f64>> {
    check_frames(pred, gt)?;
    let n = gt.first().map(Vec::len).ok_or(Error::Empty("ground-truth frames"))?;
    if gt.iter().any(|g| g.len() != n) {
        return Err(Error::InvalidArgument("frames differ in joint count".into()));
    }
    let mut sums = vec![0.0; n];
    for (p, g) in pred.iter().zip(gt) {
        let (po, go) = match alignment.root() {
            Some(r) if r < n => (p[r], g[r]),
            Some(r) => {
                return Err(Error::InvalidArgument(format!("root index {r} out of range")));
            }
            None => (Vector3::zeros(), Vector3::zeros()),
        };
        for (j, (a, b)) in p.iter().zip(g).enumerate() {
            sums[j] += ((a - po) - (b - go)).norm();
        }
    }
    Ok(sums.into_iter().map(|s| 1e3 * s / gt.len() as f64).collect())
}

/// Mean per-joint position error over joints and frames, in millimeters.
pub fn mpjpe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>], alignment: Alignment) -> Result<f64> {
    let per = per_joint_errors(pred, gt, alignment)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn bbox_dims(bbox: &[f64; 4]) -> (f64, f64) {
    (bbox[2] - bbox[0], bbox[3] - bbox[1])
}

fn check_pair(pred: &[Vector2<f64>], gt: &[Vector2<f64>], visibility: &[bool]) -> Result<()> {
    if pred.len() != gt.len() || visibility.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            what: "2D keypoints",
            expected: gt.len(),
            got: if pred.len() != gt.len() { pred.len() } else { visibility.len() },
        });
    }
    Ok(())
}

/// Fraction of visible ground-truth joints whose prediction lies within
/// `threshold * max(bbox width, bbox height)` pixels.
pub fn pck(
    pred: &[Vector2<f64>],
    gt: &[Vector2<f64>],
    visibility: &[bool],
    bbox: &[f64; 4],
    threshold: f64,
) -> Result<f64> {
    check_pair(pred, gt, visibility)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("PCK threshold must be positive, got {threshold}")));
    }
    let (w, h) = bbox_dims(bbox);
    let size = w.max(h);
    if !(size > 0.0) {
        return Err(Error::Degenerate("empty bounding box".into()));
    }
    let radius = threshold * size;
    let mut hit = 0usize;
    let mut total = 0usize;
    for ((p, g), v) in pred.iter().zip(gt).zip(visibility) {
        if *v {
            total += 1;
            if (p - g).norm() <= radius {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("visible joints"));
    }
    Ok(hit as f64 / total as f64)
}

/// Object keypoint similarity with scale `s^2 = bbox area` and uniform
/// `kappa`: mean over visible joints of `exp(-d^2 / (2 s^2 kappa^2))`.
pub fn oks(pred: &[Vector2<f64>], gt: &[Vector2<f64>], visibility: &[bool], bbox: &[f64; 4]) -> Result<f64> {
    check_pair(pred, gt, visibility)?;
    let (w, h) = bbox_dims(bbox);
    let area = w * h;
    if !(area > 0.0) {
        return Err(Error::Degenerate("empty bounding box".into()));
    }
    let mut sum = 0.0;
    let mut total = 0usize;
    for ((p, g), v) in pred.iter().zip(gt).zip(visibility) {
        if *v {
            sum += (-(p - g).norm_squared() / (2.0 * area * OKS_KAPPA * OKS_KAPPA)).exp();
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("visible joints"));
    }
    Ok(sum / total as f64)
}

/// Mean over [`AP_THRESHOLDS`] of the fraction of images whose OKS reaches
/// the threshold (one prediction per image).
pub fn oks_ap(
    pred: &[Vec<Vector2<f64>>],
    gt: &[Vec<Vector2<f64>>],
    visibility: &[Vec<bool>],
    bboxes: &[[f64; 4]],
) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth poses"));
    }
    check_frames(pred, gt)?;
    if visibility.len() != gt.len() || bboxes.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            what: "visibility/bbox sets",
            expected: gt.len(),
            got: visibility.len().min(bboxes.len()),
        });
    }
    let scores = pred
        .iter()
        .zip(gt)
        .zip(visibility)
        .zip(bboxes)
        .map(|(((p, g), v), b)| oks(p, g, v, b))
        .collect::<Result<Vec<_>>>()?;
    let per_threshold: f64 = AP_THRESHOLDS
        .iter()
        .map(|t| scores.iter().filter(|s| **s >= t - 1e-9).count() as f64 / scores.len() as f64)
        .sum();
    Ok(per_threshold / AP_THRESHOLDS.len() as f64)
}

/// Mean distance between the effector and `contact_point` over the frames
/// in `window`, in meters.
pub fn spatial_alignment_error(
    effector: &[Vector3<f64>],
    contact_point: &Vector3<f64>,
    window: Range<usize>,
) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Empty("alignment window"));
    }
    if window.end > effector.len() {
        return Err(Error::InvalidArgument(format!(
            "window {window:?} exceeds {} frames",
            effector.len()
        )));
    }
    let n = window.len() as f64;
    Ok(effector[window].iter().map(|p| (p - contact_point).norm()).sum::<f64>() / n)
}

/// Keeps the entries whose mask bit is set.
pub fn select_joints<T: Clone>(items: &[T], mask: &[bool]) -> Vec<T> {
    items
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(x, _)| x.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckScore {
    pub threshold: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub pck: Vec<PckScore>,
    pub ap: f64,
    pub per_joint_errors: Vec<f64>,
    pub frame_count: usize,
}

/// Inputs for [`evaluate`]: per-frame 3D and 2D predictions with ground truth.
#[derive(Debug, Clone, Default)]
pub struct EvalInput {
    pub pred_3d: Vec<Vec<Vector3<f64>>>,
    pub gt_3d: Vec<Vec<Vector3<f64>>>,
    pub pred_2d: Vec<Vec<Vector2<f64>>>,
    pub gt_2d: Vec<Vec<Vector2<f64>>>,
    pub visibility: Vec<Vec<bool>>,
    pub bboxes: Vec<[f64; 4]>,
}

/// Computes MPJPE, PCK at each threshold (averaged over frames with a
/// visible joint) and AP. With a mask, only the selected joints count; a
/// masked-out root is still used for alignment.
pub fn evaluate(
    input: &EvalInput,
    alignment: Alignment,
    pck_thresholds: &[f64],
    mask: Option<&[bool]>,
) -> Result<EvalReport> {
    let n_frames = input.gt_3d.len();
    let mut per_joint = per_joint_errors(&input.pred_3d, &input.gt_3d, alignment)?;
    if let Some(m) = mask {
        per_joint = select_joints(&per_joint, m);
    }
    if per_joint.is_empty() {
        return Err(Error::Empty("selected joints"));
    }
    let mpjpe_mm = per_joint.iter().sum::<f64>() / per_joint.len() as f64;

    let pick2 = |v: &Vec<Vector2<f64>>| mask.map_or_else(|| v.clone(), |m| select_joints(v, m));
    let pred2: Vec<_> = input.pred_2d.iter().map(pick2).collect();
    let gt2: Vec<_> = input.gt_2d.iter().map(pick2).collect();
    let vis: Vec<Vec<bool>> = input
        .visibility
        .iter()
        .map(|v| mask.map_or_else(|| v.clone(), |m| select_joints(v, m)))
        .collect();
    check_frames(&pred2, &gt2)?;
    // frames without a visible joint carry no 2D evidence
    let keep: Vec<usize> = (0..gt2.len()).filter(|&i| vis[i].iter().any(|v| *v)).collect();
    let mut pck_scores = Vec::with_capacity(pck_thresholds.len());
    for &t in pck_thresholds {
        let mut sum = 0.0;
        for &i in &keep {
            sum += pck(&pred2[i], &gt2[i], &vis[i], &input.bboxes[i], t)?;
        }
        let value = if keep.is_empty() { 0.0 } else { sum / keep.len() as f64 };
        pck_scores.push(PckScore { threshold: t, value });
    }
    let ap = if keep.is_empty() {
        0.0
    } else {
        let sel = |v: &[Vec<Vector2<f64>>]| keep.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        oks_ap(
            &sel(&pred2),
            &sel(&gt2),
            &keep.iter().map(|&i| vis[i].clone()).collect::<Vec<_>>(),
            &keep.iter().map(|&i| input.bboxes[i]).collect::<Vec<_>>(),
        )?
    };
    Ok(EvalReport {
        mpjpe_mm,
        pck: pck_scores,
        ap,
        per_joint_errors: per_joint,
        frame_count: n_frames,
    })
}
