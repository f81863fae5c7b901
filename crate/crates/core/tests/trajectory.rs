use kinrecover::trajectory::{
    ema_smooth, export_gmr, from_gmr_json, import_gmr, interpolate_gaps, to_egocentric, RecoveredTrajectory,
    TrajectoryFrame,
};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_trajectory(frames: usize, dof: usize, seed: u64) -> RecoveredTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RecoveredTrajectory {
        fps: 30.0,
        joint_names: (0..dof).map(|d| format!("j{d}")).collect(),
        frames: (0..frames)
            .map(|_| {
                let mut f = TrajectoryFrame::new(
                    Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.3..1.2)),
                    UnitQuaternion::from_scaled_axis(Vector3::new(
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                    )),
                    (0..dof).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                );
                f.flags.ik_converged = rng.gen_bool(0.9);
                f
            })
            .collect(),
    }
}

fn total_variation(t: &RecoveredTrajectory) -> f64 {
    t.frames.windows(2).map(|w| (w[1].position() - w[0].position()).norm()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_never_adds_translation_variation(seed in 0u64..10_000, alpha in 0.01..0.99f64) {
        let t = random_trajectory(40, 2, seed);
        let s = ema_smooth(&t, alpha).unwrap();
        prop_assert!(total_variation(&s) <= total_variation(&t) + 1e-12);
        for f in &s.frames {
            prop_assert!((f.root_rot.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn egocentric_output_ignores_global_yaw_and_planar_shift(
        seed in 0u64..10_000, yaw in -3.1..3.1f64, dx in -10.0..10.0f64, dy in -10.0..10.0f64,
    ) {
        let t = random_trajectory(20, 1, seed);
        let g = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        let mut moved = t.clone();
        for f in &mut moved.frames {
            let p = g * f.position() + Vector3::new(dx, dy, 0.0);
            let r = g * f.rotation();
            f.root_pos = p.into();
            f.root_rot = [r.w, r.i, r.j, r.k];
        }
        let (a, b) = (to_egocentric(&t).unwrap(), to_egocentric(&moved).unwrap());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            prop_assert!((fa.position() - fb.position()).norm() < 1e-9);
            prop_assert!(fa.rotation().angle_to(&fb.rotation()) < 1e-9);
        }
    }
}

#[test]
fn constant_input_is_a_fixed_point() {
    let mut t = random_trajectory(1, 3, 4);
    let f = t.frames[0].clone();
    t.frames = vec![f; 50];
    for alpha in [0.1, 0.3, 0.9] {
        assert_eq!(ema_smooth(&t, alpha).unwrap(), t);
    }
}

#[test]
fn first_frame_defines_the_ground_base() {
    let t = random_trajectory(5, 1, 9);
    let e = to_egocentric(&t).unwrap();
    let f0 = &e.frames[0];
    assert!(f0.root_pos[0].abs() < 1e-12 && f0.root_pos[1].abs() < 1e-12);
    assert_eq!(f0.root_pos[2], t.frames[0].root_pos[2]);
    let x = f0.rotation() * Vector3::x();
    // heading of the body x axis is zero (or undefined when vertical)
    assert!(x.y.abs() < 1e-9 || x.xy().norm() < 1e-9);
}

#[test]
fn five_hundred_frames_round_trip_through_a_file() {
    let t = random_trajectory(500, 29, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("motion.json");
    export_gmr(&t, &path, None).unwrap();
    assert_eq!(import_gmr(&path).unwrap(), t);
}

#[test]
fn short_quaternions_are_rejected_with_the_frame_index() {
    let t = random_trajectory(8, 2, 3);
    let mut doc: serde_json::Value = serde_json::from_str(&kinrecover::trajectory::to_gmr_json(&t, None).unwrap()).unwrap();
    doc["frames"][5]["root_rot"] = serde_json::json!([1.0, 0.0, 0.0]);
    let e = from_gmr_json(&doc.to_string()).unwrap_err().to_string();
    assert!(e.contains("frame 5"), "{e}");
    doc["frames"][5]["root_rot"] = serde_json::json!([1.0, 0.0, 0.0, 0.0]);
    doc["format"] = serde_json::json!("gmr-motion/0");
    assert!(from_gmr_json(&doc.to_string()).is_err());
}

#[test]
fn failed_frame_between_yaw_zero_and_ninety_lands_at_forty_five() {
    let mut t = random_trajectory(3, 1, 0);
    for (i, f) in t.frames.iter_mut().enumerate() {
        let yaw = [0.0f64, 1.0, 90.0][i].to_radians();
        *f = TrajectoryFrame::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw), vec![0.0]);
    }
    t.frames[1].flags.pnp_converged = false;
    let filled = interpolate_gaps(&t, 3);
    let (_, _, yaw) = filled.trajectory.frames[1].rotation().euler_angles();
    assert!((yaw - 45f64.to_radians()).abs() < 1e-9);
    assert_eq!(filled.segments, vec![0..3]);
}
