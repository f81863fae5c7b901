use kinrecover::{fixtures, parse_model, JointConfiguration, KinematicModel};
use nalgebra::{DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;

fn humanoid() -> &'static KinematicModel {
    use std::sync::OnceLock;
    static M: OnceLock<KinematicModel> = OnceLock::new();
    M.get_or_init(fixtures::humanoid)
}

/// Feasible configuration from unit-interval fractions of each range.
fn config_from(model: &KinematicModel, u: &[f64]) -> JointConfiguration {
    JointConfiguration(
        model
            .limits()
            .iter()
            .zip(u)
            .map(|(l, t)| l.lower + t * (l.upper - l.lower))
            .collect(),
    )
}

fn fractions() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 29)
}

fn rigid() -> impl Strategy<Value = Isometry3<f64>> {
    (prop::array::uniform3(-5.0..5.0f64), prop::array::uniform3(-3.0..3.0f64)).prop_map(|(t, r)| {
        Isometry3::from_parts(
            Translation3::new(t[0], t[1], t[2]),
            UnitQuaternion::from_scaled_axis(Vector3::from(r)),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fk_is_equivariant_under_rigid_root_motion(u in fractions(), t in rigid()) {
        let m = humanoid();
        let q = config_from(m, &u);
        let at_root = m.forward_kinematics(&q, &t).unwrap();
        let local = m.forward_kinematics(&q, &Isometry3::identity()).unwrap();
        for (a, b) in at_root.iter().zip(&local) {
            prop_assert!((a - t.transform_point(&(*b).into()).coords).norm() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_central_differences_along_random_directions(
        u in prop::collection::vec(0.05..0.95f64, 29),
        d in prop::collection::vec(-1.0..1.0f64, 29),
    ) {
        let m = humanoid();
        let q = config_from(m, &u);
        let d = DVector::from_vec(d).normalize();
        let h = 1e-6;
        let shifted = |s: f64| {
            let v: Vec<f64> = q.values().iter().zip(d.iter()).map(|(a, b)| a + s * h * b).collect();
            m.forward_kinematics(&JointConfiguration(v), &Isometry3::identity()).unwrap()
        };
        let (up, down) = (shifted(1.0), shifted(-1.0));
        let jd = m.keypoint_jacobian(&q).unwrap() * &d;
        for k in 0..m.keypoint_count() {
            let fd = (up[k] - down[k]) / (2.0 * h);
            for a in 0..3 {
                prop_assert!((fd[a] - jd[3 * k + a]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn keypoints_on_one_rigid_body_keep_their_distance(u in fractions(), v in fractions()) {
        let m = humanoid();
        let a = m.forward_kinematics(&config_from(m, &u), &Isometry3::identity()).unwrap();
        let b = m.forward_kinematics(&config_from(m, &v), &Isometry3::identity()).unwrap();
        let n = m.keypoint_count();
        for i in 0..n {
            for j in i + 1..n {
                // identical moving-joint chains: only fixed joints in between
                if m.keypoint_chain(i) == m.keypoint_chain(j) {
                    prop_assert!(((a[i] - a[j]).norm() - (b[i] - b[j]).norm()).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn rigid_pairs_exist_in_the_humanoid() {
    // the toe and hand links hang off fixed joints
    let m = humanoid();
    let links = m.keypoint_links();
    let idx = |name: &str| links.iter().position(|l| l == name).unwrap();
    assert_eq!(m.keypoint_chain(idx("left_toe_link")), m.keypoint_chain(idx("left_ankle_roll_link")));
    assert_eq!(m.keypoint_chain(idx("right_hand_link")), m.keypoint_chain(idx("right_wrist_yaw_link")));
}

#[test]
fn jacobian_is_zero_off_the_root_path() {
    let m = humanoid();
    let q = m.mid_configuration();
    let j = m.keypoint_jacobian(&q).unwrap();
    for k in 0..m.keypoint_count() {
        let chain = m.keypoint_chain(k);
        for d in (0..m.dof()).filter(|d| !chain.contains(d)) {
            for a in 0..3 {
                assert_eq!(j[(3 * k + a, d)], 0.0);
            }
        }
    }
}

#[test]
fn planar_end_jacobian_at_zero_matches_finite_differences() {
    let m = fixtures::planar_2link();
    let q = JointConfiguration(vec![0.0, 0.0]);
    let j = m.keypoint_jacobian(&q).unwrap();
    let h = 1e-6;
    let end = m.keypoint_count() - 1;
    let fk = |a: f64| m.forward_kinematics(&JointConfiguration(vec![a, 0.0]), &Isometry3::identity()).unwrap()[end];
    let fd = (fk(h) - fk(-h)) / (2.0 * h);
    assert!((fd - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-8);
    for a in 0..3 {
        assert!((j[(3 * end + a, 0)] - fd[a]).abs() < 1e-8);
    }
}

#[test]
fn parse_serialize_parse_is_stable_for_both_fixtures() {
    for xml in [fixtures::PLANAR_2LINK_URDF, fixtures::HUMANOID_URDF] {
        let a = parse_model(xml).unwrap();
        let b = parse_model(&a.to_urdf()).unwrap();
        assert_eq!(a.to_urdf(), b.to_urdf());
        assert_eq!(a.keypoint_links(), b.keypoint_links());
        let q = a.mid_configuration();
        assert_eq!(
            a.forward_kinematics(&q, &Isometry3::identity()).unwrap(),
            b.forward_kinematics(&q, &Isometry3::identity()).unwrap()
        );
    }
}
