use kinrecover::dataset::motion::{sample_motion, MotionParams};
use kinrecover::ik::{cold_start, solve_ik, solve_ik_observed, IkOptions, IkProblem};
use kinrecover::{fixtures, JointConfiguration, KinematicModel};
use nalgebra::{Isometry3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 0.001;

/// Closest reachable distance to `(x, y)` for a unit-length two-link arm
/// with both joints on a 0.001 rad grid over `[lo, hi]`.
fn grid_minimum(x: f64, y: f64, lo: f64, hi: f64) -> f64 {
    let n = ((hi - lo) / STEP).floor() as usize + 1;
    let (s, c): (Vec<f64>, Vec<f64>) = (0..n).map(|i| (lo + i as f64 * STEP).sin_cos()).unzip();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let (sa, ca) = (s[i], c[i]);
        for j in 0..n {
            let ex = ca + ca * c[j] - sa * s[j];
            let ey = sa + sa * c[j] + ca * s[j];
            best = best.min((ex - x) * (ex - x) + (ey - y) * (ey - y));
        }
    }
    best.sqrt()
}

#[test]
fn two_dof_residuals_match_grid_search_and_respect_limits() {
    let m = fixtures::planar_2link();
    let (lo, hi) = (m.limits()[0].lower, m.limits()[0].upper);
    // analytic arm agrees with the model
    let q = [0.4, -1.1];
    let tip = m.forward_kinematics(&JointConfiguration(q.to_vec()), &Isometry3::identity()).unwrap()[2];
    assert!((tip - Vector3::new(q[0].cos() + (q[0] + q[1]).cos(), q[0].sin() + (q[0] + q[1]).sin(), 0.0)).norm() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let options = IkOptions {
        min_weighted_keypoints: 1,
        multi_start: true,
        multi_start_count: 20,
        ..IkOptions::default()
    };
    let mut worst: f64 = 0.0;
    let mut violations = 0usize;
    for case in 0..100 {
        // uniform over a disk a little wider than the reach, plus the far
        // unreachable point; limits leave local minima, hence the restarts
        let (x, y) = if case == 0 {
            (3.0, 0.0)
        } else {
            let r = 2.2 * rng.gen::<f64>().sqrt();
            let a = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            (r * a.cos(), r * a.sin())
        };
        let problem = IkProblem {
            model: &m,
            targets: vec![Vector3::zeros(), Vector3::zeros(), Vector3::new(x, y, 0.0)],
            weights: vec![0.0, 0.0, 1.0],
            q_init: m.mid_configuration(),
        };
        let sol = solve_ik_observed(&problem, &options, &mut |q| {
            violations += q.iter().filter(|v| !(lo..=hi).contains(*v)).count();
        })
        .unwrap();
        let g = grid_minimum(x, y, lo, hi);
        worst = worst.max((sol.residual_rms - g).abs());
        violations += sol.q_star.values().iter().filter(|v| !(lo..=hi).contains(*v)).count();
    }
    assert_eq!(violations, 0);
    assert!(worst < 1e-3, "{worst}");
}

fn random_inner(m: &KinematicModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    m.limits()
        .iter()
        .map(|l| {
            let w = l.upper - l.lower;
            rng.gen_range(l.lower + 0.25 * w..l.upper - 0.25 * w)
        })
        .collect()
}

#[test]
fn nearby_starts_recover_the_true_configuration() {
    let m = fixtures::humanoid();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let q_true = random_inner(&m, &mut rng);
        let targets = m.forward_kinematics(&JointConfiguration(q_true.clone()), &Isometry3::identity()).unwrap();
        let mut q_init: Vec<f64> = q_true.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        m.clamp_into(&mut q_init, kinrecover::ik::LIMIT_MARGIN);
        let problem = IkProblem {
            model: &m,
            weights: vec![1.0; targets.len()],
            targets,
            q_init: q_init.into(),
        };
        let sol = solve_ik(&problem, &IkOptions::default()).unwrap();
        for (a, b) in sol.q_star.values().iter().zip(&q_true) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        assert_eq!(solve_ik(&problem, &IkOptions::default()).unwrap(), sol);
    }
}

#[test]
fn warm_starts_need_no_more_iterations_than_cold_starts() {
    let m = fixtures::humanoid();
    let (q, _) = sample_motion(&m, &MotionParams::default(), 60, 13).unwrap();
    let options = IkOptions::default();
    let mut prev = m.mid_configuration();
    let mut wins = 0;
    for (t, qt) in q.iter().enumerate().skip(1) {
        let targets = m.forward_kinematics(qt, &Isometry3::identity()).unwrap();
        let problem = |q_init: JointConfiguration| IkProblem {
            model: &m,
            weights: vec![1.0; targets.len()],
            targets: targets.clone(),
            q_init,
        };
        if t == 1 {
            prev = q[0].clone();
        }
        let warm = solve_ik(&problem(prev.clone()), &options).unwrap();
        let cold = solve_ik(&problem(m.mid_configuration()), &options).unwrap();
        if warm.iterations <= cold.iterations {
            wins += 1;
        }
        prev = warm.q_star;
    }
    assert!(wins as f64 >= 0.9 * (q.len() - 1) as f64, "{wins}");
}

#[test]
fn cold_start_finds_arbitrary_poses_and_is_deterministic() {
    let m = fixtures::humanoid();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..5 {
        let q_true = random_inner(&m, &mut rng);
        let targets = m.forward_kinematics(&JointConfiguration(q_true), &Isometry3::identity()).unwrap();
        let problem = IkProblem {
            model: &m,
            weights: vec![1.0; targets.len()],
            targets,
            q_init: m.mid_configuration(),
        };
        let options = IkOptions {
            estimate_root_rotation: true,
            ..IkOptions::default()
        };
        let sol = cold_start(&problem, &options, 8, 12, 4).unwrap();
        assert!(sol.residual_rms < 1e-6, "{}", sol.residual_rms);
        assert_eq!(cold_start(&problem, &options, 8, 12, 4).unwrap(), sol);
    }
}
