use nalgebra::SVD;
use posevolume_core::solver::{
    aggregate_pose, enumerate_hypotheses, kabsch_align, pose_loss, score_hypotheses, solve, Correspondences,
    SolverParams,
};
use posevolume_core::{Mat3, RigidTransform, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_pose(rng: &mut impl Rng) -> RigidTransform {
    let axis = unit(rng);
    let t = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.5..1.2));
    RigidTransform::from_axis_angle(&axis, rng.random_range(-3.1..3.1), t)
}

fn object_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
        .collect()
}

/// Keypoint-like sets: spread over a shell around the object center.
fn keypoint_set(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| unit(rng) * rng.random_range(0.04..0.08)).collect()
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn noisy(p: Vec3, sigma: f64, rng: &mut impl Rng) -> Vec3 {
    p + Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng)) * sigma
}

fn rotation_error_deg(a: &RigidTransform, b: &RigidTransform) -> f64 {
    a.rotation_angle_to(b).to_degrees()
}

/// Chordal mean computed directly: SVD of the summed rotations with a det fix.
fn oracle_chordal_mean(rotations: &[Mat3], weights: &[f64]) -> Mat3 {
    let m: Mat3 = rotations.iter().zip(weights).map(|(r, &w)| r * w).sum();
    let svd = SVD::new(m, true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * vt
}

#[test]
fn kabsch_recovers_500_random_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..500 {
        let n = rng.random_range(3..30);
        let model = object_points(&mut rng, n);
        let gt = random_pose(&mut rng);
        let scene: Vec<Vec3> = model.iter().map(|p| gt.transform_point(p)).collect();
        let est = kabsch_align(&model, &scene).unwrap();
        assert!((est.rotation() - gt.rotation()).norm() < 1e-9, "trial {trial}");
        assert!((est.translation() - gt.translation()).norm() < 1e-9, "trial {trial}");
    }
}

struct RobustnessStats {
    beats_kabsch: usize,
    rotation_deg: Vec<f64>,
    translation_m: Vec<f64>,
}

fn robustness_trials(trials: usize, seed: u64) -> RobustnessStats {
    let params = SolverParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = RobustnessStats {
        beats_kabsch: 0,
        rotation_deg: Vec::new(),
        translation_m: Vec::new(),
    };
    for _ in 0..trials {
        let model = keypoint_set(&mut rng, 9);
        let gt = random_pose(&mut rng);
        let mut scene: Vec<Vec3> = model.iter().map(|p| noisy(gt.transform_point(p), 0.002, &mut rng)).collect();
        let first = rng.random_range(0..9);
        let second = (first + rng.random_range(1..9)) % 9;
        for i in [first, second] {
            scene[i] += unit(&mut rng) * 0.2;
        }
        let c = Correspondences::new(model.clone(), scene.clone()).unwrap();
        let (est, _) = solve(&c, &params).unwrap();
        let all = kabsch_align(&model, &scene).unwrap();
        if pose_loss(&est, &gt, 1.0) < pose_loss(&all, &gt, 1.0) {
            stats.beats_kabsch += 1;
        }
        stats.rotation_deg.push(rotation_error_deg(&est, &gt));
        stats.translation_m.push((est.translation() - gt.translation()).norm());
    }
    stats
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn soft_ransac_beats_all_point_kabsch_with_outliers() {
    let s = robustness_trials(500, 22);
    assert!(s.beats_kabsch as f64 >= 0.95 * 500.0, "beat Kabsch in {}/500", s.beats_kabsch);
    assert!(median(s.rotation_deg) < 2.0);
    assert!(median(s.translation_m) < 0.005);
}

#[test]
fn no_outlier_error_within_one_and_a_half_kabsch() {
    let params = SolverParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut soft, mut all) = (Vec::new(), Vec::new());
    for _ in 0..500 {
        let model = object_points(&mut rng, 9);
        let gt = random_pose(&mut rng);
        let scene: Vec<Vec3> = model.iter().map(|p| noisy(gt.transform_point(p), 0.002, &mut rng)).collect();
        let (est, _) = solve(&Correspondences::new(model.clone(), scene.clone()).unwrap(), &params).unwrap();
        soft.push(pose_loss(&est, &gt, 1.0));
        all.push(pose_loss(&kabsch_align(&model, &scene).unwrap(), &gt, 1.0));
    }
    let (s, a) = (median(soft), median(all));
    assert!(s <= 1.5 * a, "soft {s} vs all-point {a}");
}

#[test]
fn temperature_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let model = object_points(&mut rng, 7);
    let gt = random_pose(&mut rng);
    let mut scene: Vec<Vec3> = model.iter().map(|p| noisy(gt.transform_point(p), 0.01, &mut rng)).collect();
    scene[2] += Vec3::new(0.1, 0.0, 0.05);
    let c = Correspondences::new(model, scene).unwrap();
    let hyps = enumerate_hypotheses(&c).unwrap();

    let hot = score_hypotheses(&hyps, &c, &SolverParams::new(100.0, 0.02, 1e9).unwrap()).unwrap();
    let pose = aggregate_pose(&hot);
    let k = hyps.poses.len();
    let rotations: Vec<Mat3> = hyps.poses.iter().map(|p| *p.rotation()).collect();
    let mean_r = oracle_chordal_mean(&rotations, &vec![1.0 / k as f64; k]);
    let mean_t: Vec3 = hyps.poses.iter().map(|p| p.translation()).sum::<Vec3>() / k as f64;
    assert!((pose.rotation() - mean_r).norm() < 1e-6);
    assert!((pose.translation() - mean_t).norm() < 1e-6);

    let cold = score_hypotheses(&hyps, &c, &SolverParams::new(100.0, 0.02, 1e-4).unwrap()).unwrap();
    let pose = aggregate_pose(&cold);
    let best = &hyps.poses[cold.best()];
    assert!((pose.rotation() - best.rotation()).norm() < 1e-9);
    assert!((pose.translation() - best.translation()).norm() < 1e-9);
}

#[test]
fn perfect_hypothesis_outweighs_the_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let model = object_points(&mut rng, 9);
    let gt = random_pose(&mut rng);
    let mut scene: Vec<Vec3> = model.iter().map(|p| gt.transform_point(p)).collect();
    // only the first three points stay exact, so only one triple is perfect
    for p in scene.iter_mut().skip(3) {
        *p += unit(&mut rng) * 0.3;
    }
    let c = Correspondences::new(model, scene).unwrap();
    let set = score_hypotheses(&enumerate_hypotheses(&c).unwrap(), &c, &SolverParams::default()).unwrap();
    assert_eq!(set.len(), 84);
    let perfect = set.subsets.iter().position(|s| *s == [0, 1, 2]).unwrap();
    for (k, &w) in set.scores.iter().enumerate() {
        if k != perfect {
            assert!(set.scores[perfect] > w);
        }
    }
    assert!((set.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solve_is_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = object_points(&mut rng, 9);
        let gt = random_pose(&mut rng);
        let g = random_pose(&mut rng);
        let scene: Vec<Vec3> = model.iter().map(|p| gt.transform_point(p)).collect();
        let moved: Vec<Vec3> = scene.iter().map(|p| g.transform_point(p)).collect();
        let params = SolverParams::default();
        let (a, _) = solve(&Correspondences::new(model.clone(), scene).unwrap(), &params).unwrap();
        let (b, _) = solve(&Correspondences::new(model, moved).unwrap(), &params).unwrap();
        let expected = g.compose(&a);
        prop_assert!((b.rotation() - expected.rotation()).norm() < 1e-6);
        prop_assert!((b.translation() - expected.translation()).norm() < 1e-6);
    }

    #[test]
    fn aggregate_is_a_rotation(seed in any::<u64>(), noise in 0.0..0.05f64, temperature in 0.01..100.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = object_points(&mut rng, 6);
        let gt = random_pose(&mut rng);
        let scene: Vec<Vec3> = model.iter().map(|p| noisy(gt.transform_point(p), noise, &mut rng)).collect();
        let params = SolverParams::new(100.0, 0.02, temperature).unwrap();
        let (pose, set) = solve(&Correspondences::new(model, scene).unwrap(), &params).unwrap();
        let r = pose.rotation();
        prop_assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        prop_assert!(set.scores.iter().all(|&s| s >= 0.0));
        prop_assert!((set.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
