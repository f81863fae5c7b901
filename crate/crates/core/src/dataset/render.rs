//! Annotation records from FK and pinhole projection.

use nalgebra::Isometry3;
use rayon::prelude::*;

use super::KeypointFrame;
use crate::camera::{Camera, CameraRig};
use crate::error::{Error, Result};
use crate::geometry::PoseRecord;
use crate::model::{JointConfiguration, KinematicModel};

/// Fraction of the box width/height added on each side.
pub const BBOX_MARGIN: f64 = 0.05;
/// Records with fewer visible keypoints are flagged `degenerate`.
pub const MIN_VISIBLE_KEYPOINTS: usize = 4;

/// One clean record of `q` at `root_pose` seen by `camera`.
pub fn render_frame(
    model: &KinematicModel,
    camera: &Camera,
    frame_id: u64,
    q: &JointConfiguration,
    root_pose: &Isometry3<f64>,
) -> Result<KeypointFrame> {
    let world = model.forward_kinematics(q, root_pose)?;
    Ok(annotate(camera, frame_id, q, root_pose, &world))
}

fn annotate(
    camera: &Camera,
    frame_id: u64,
    q: &JointConfiguration,
    root_pose: &Isometry3<f64>,
    world: &[nalgebra::Vector3<f64>],
) -> KeypointFrame {
    let cam = camera.world_to_camera(world);
    let mut pixel_2d = Vec::with_capacity(cam.len());
    let mut visibility = Vec::with_capacity(cam.len());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &cam {
        let proj = camera.intrinsics.project_point(p);
        let px = [proj.pixel.x, proj.pixel.y];
        if proj.visible {
            for a in 0..2 {
                lo[a] = lo[a].min(px[a]);
                hi[a] = hi[a].max(px[a]);
            }
        }
        pixel_2d.push(px);
        visibility.push(proj.visible);
    }
    let visible = visibility.iter().filter(|v| **v).count();
    let bbox = if visible == 0 {
        [0.0; 4]
    } else {
        let mx = BBOX_MARGIN * (hi[0] - lo[0]);
        let my = BBOX_MARGIN * (hi[1] - lo[1]);
        [lo[0] - mx, lo[1] - my, hi[0] + mx, hi[1] + my]
    };
    KeypointFrame {
        frame_id,
        camera_id: camera.id.clone(),
        q: q.clone(),
        root_pose_world: Some(PoseRecord::from_isometry(root_pose)),
        world_3d: world.iter().map(|p| [p.x, p.y, p.z]).collect(),
        camera_3d: cam.iter().map(|p| [p.x, p.y, p.z]).collect(),
        pixel_2d,
        visibility,
        bbox,
        degenerate: visible < MIN_VISIBLE_KEYPOINTS,
    }
}

/// One record per (frame, camera), frame-major in rig camera order.
pub fn render_annotations(
    model: &KinematicModel,
    rig: &CameraRig,
    q_sequence: &[JointConfiguration],
    root_poses: &[Isometry3<f64>],
) -> Result<Vec<KeypointFrame>> {
    if q_sequence.len() != root_poses.len() {
        return Err(Error::ShapeMismatch {
            what: "root pose sequence",
            expected: q_sequence.len(),
            got: root_poses.len(),
        });
    }
    let per_frame: Vec<Vec<KeypointFrame>> = q_sequence
        .par_iter()
        .zip(root_poses.par_iter())
        .enumerate()
        .map(|(i, (q, root))| {
            let world = model.forward_kinematics(q, root)?;
            Ok(rig
                .cameras
                .iter()
                .map(|c| annotate(c, i as u64, q, root, &world))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{build_rig, sim_to_vision, Convention, RigParams};
    use crate::fixtures;
    use nalgebra::{Matrix3, Vector3};

    #[test]
    fn one_record_per_camera() {
        let m = fixtures::humanoid();
        let rig = build_rig(&RigParams::default()).unwrap();
        let recs = render_annotations(
            &m,
            &rig,
            &[m.mid_configuration()],
            &[Isometry3::translation(0.0, 0.0, 0.7)],
        )
        .unwrap();
        assert_eq!(recs.len(), 9);
        assert!(recs.iter().all(|r| !r.degenerate));
    }

    #[test]
    fn pelvis_under_top_camera_hits_principal_point() {
        let m = fixtures::humanoid();
        let rig = build_rig(&RigParams::default()).unwrap();
        let top = rig.get("top").unwrap();
        let r = render_frame(&m, top, 0, &m.mid_configuration(), &Isometry3::identity()).unwrap();
        assert!((r.pixel_2d[0][0] - 320.0).abs() < 1e-9);
        assert!((r.pixel_2d[0][1] - 240.0).abs() < 1e-9);
    }

    #[test]
    fn camera_points_match_body_frame_oracle() {
        let m = fixtures::humanoid();
        let rig = build_rig(&RigParams::default()).unwrap();
        let root = Isometry3::translation(0.1, -0.2, 0.7);
        let q = m.mid_configuration();
        for cam in &rig.cameras {
            let r = render_frame(&m, cam, 3, &q, &root).unwrap();
            // body axes rebuilt from the camera's position and look-at target
            let pos = cam.extrinsics.position();
            let fwd = (Vector3::new(0.0, 0.0, 1.0) - pos).normalize();
            let side = Vector3::z().cross(&fwd);
            let left = if side.norm() < 1e-12 {
                Vector3::x().cross(&fwd).normalize()
            } else {
                side.normalize()
            };
            let up = fwd.cross(&left);
            let basis = Matrix3::from_rows(&[fwd.transpose(), left.transpose(), up.transpose()]);
            let body: Vec<_> = r.world_points().iter().map(|p| basis * (p - pos)).collect();
            let expect = sim_to_vision(&body, Convention::ZUpBody);
            for (a, b) in r.camera_points().iter().zip(&expect) {
                assert!((a - b).norm() < 1e-12, "{}: {a} vs {b}", cam.id);
            }
        }
    }

    #[test]
    fn clean_pixels_reproject_bit_exactly() {
        let m = fixtures::humanoid();
        let rig = build_rig(&RigParams::default()).unwrap();
        let r = render_frame(&m, &rig.cameras[5], 0, &m.mid_configuration(), &Isometry3::translation(0.0, 0.0, 0.7))
            .unwrap();
        for (i, p) in r.camera_points().iter().enumerate() {
            let px = rig.cameras[5].intrinsics.project_point(p).pixel;
            assert_eq!(px.x.to_bits(), r.pixel_2d[i][0].to_bits());
            assert_eq!(px.y.to_bits(), r.pixel_2d[i][1].to_bits());
            if r.visibility[i] {
                assert!(px.x >= r.bbox[0] && px.x <= r.bbox[2]);
                assert!(px.y >= r.bbox[1] && px.y <= r.bbox[3]);
            }
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let m = fixtures::planar_2link();
        let rig = build_rig(&RigParams::default()).unwrap();
        assert!(render_annotations(&m, &rig, &[m.mid_configuration()], &[]).is_err());
    }
}
