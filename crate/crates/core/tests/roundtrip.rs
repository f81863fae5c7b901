use kinrecover::camera::{build_rig, CameraRig, RigParams};
use kinrecover::dataset::motion::{sample_motion, MotionParams};
use kinrecover::dataset::NoiseSpec;
use kinrecover::pipeline::{roundtrip_eval, RecoverOptions, RoundtripConfig, RoundtripReport, ThreeDSource};
use kinrecover::{fixtures, KinematicModel};

fn run(model: &KinematicModel, rig: &CameraRig, frames: usize, seed: u64, config: &RoundtripConfig) -> RoundtripReport {
    let (q, r) = sample_motion(model, &MotionParams::default(), frames, seed).unwrap();
    roundtrip_eval(model, rig, &q, &r, None, config).unwrap().0
}

fn ground_truth_config() -> RoundtripConfig {
    RoundtripConfig {
        recover: RecoverOptions {
            source: ThreeDSource::GroundTruth3d,
            ..RecoverOptions::default()
        },
        ..RoundtripConfig::default()
    }
}

#[test]
fn noiseless_ground_truth_targets_recover_the_motion() {
    let m = fixtures::humanoid();
    let rig = build_rig(&RigParams::default()).unwrap();
    for seed in [3, 17] {
        let rep = run(&m, &rig, 40, seed, &ground_truth_config());
        assert_eq!(rep.unsolved_frames, 0);
        assert!(rep.joint_rms_rad < 1e-3, "{rep:?}");
        assert!(rep.root_rms_m < 2e-3, "{rep:?}");
        assert!(rep.refk_mpjpe_mm < 5.0, "{rep:?}");
    }
}

#[test]
fn pixel_noise_makes_errors_strictly_larger() {
    let m = fixtures::humanoid();
    let rig = build_rig(&RigParams::default()).unwrap();
    let clean = run(&m, &rig, 20, 5, &RoundtripConfig::default());
    let noisy = run(
        &m,
        &rig,
        20,
        5,
        &RoundtripConfig {
            noise: NoiseSpec::gaussian(1.0, 9),
            ..RoundtripConfig::default()
        },
    );
    assert!(noisy.joint_mean_abs_rad > clean.joint_mean_abs_rad);
    assert!(noisy.root_rms_m > clean.root_rms_m);
    assert!(noisy.refk_mpjpe_mm > clean.refk_mpjpe_mm);
}

#[test]
fn single_frame_round_trip_is_exact_and_repeatable() {
    let m = fixtures::humanoid();
    let rig = build_rig(&RigParams::default()).unwrap();
    let (q, r) = sample_motion(&m, &MotionParams::default(), 1, 8).unwrap();
    let (a, rec) = roundtrip_eval(&m, &rig, &q, &r, None, &ground_truth_config()).unwrap();
    assert_eq!(rec.trajectory.len(), 1);
    assert!(a.joint_rms_rad < 1e-6 && a.post.joint_rms_rad < 1e-6, "{a:?}");
    let (b, _) = roundtrip_eval(&m, &rig, &q, &r, None, &ground_truth_config()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn lifter_mode_requires_a_network() {
    let m = fixtures::humanoid();
    let rig = build_rig(&RigParams::default()).unwrap();
    let (q, r) = sample_motion(&m, &MotionParams::default(), 2, 1).unwrap();
    let config = RoundtripConfig {
        recover: RecoverOptions {
            source: ThreeDSource::Lifter,
            ..RecoverOptions::default()
        },
        ..RoundtripConfig::default()
    };
    assert!(roundtrip_eval(&m, &rig, &q, &r, None, &config).is_err());
}
