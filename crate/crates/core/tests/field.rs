use posevolume_core::field::{
    extract_keypoint, keypoint_loss, kl_divergence, normalize_field, rasterize_heatmap, ScalarGrid, TargetHeatmaps,
};
use posevolume_core::volume::{build_grid, GridSpec};
use posevolume_core::{RigidTransform, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_distribution(spec: GridSpec, rng: &mut impl Rng, sparse: bool) -> ScalarGrid {
    let mut v: Vec<f64> = (0..spec.num_cells())
        .map(|_| if sparse && rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>().powi(3) })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    ScalarGrid::new(spec, v).unwrap()
}

fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(1e-12)).ln())
        .sum()
}

#[test]
fn kl_is_zero_on_itself_and_nonnegative_on_random_pairs() {
    let spec = GridSpec::new(Vec3::zeros(), [4, 3, 5], Vec3::repeat(0.01)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let p = random_distribution(spec, &mut rng, i % 2 == 0);
        let q = random_distribution(spec, &mut rng, i % 3 == 0);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let kl = kl_divergence(&p, &q).unwrap();
        assert!(kl >= 0.0, "pair {i}: {kl}");
        let oracle = oracle_kl(p.values(), q.values());
        assert!((kl - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{kl} vs {oracle}");
    }
}

#[test]
fn rasterized_heatmaps_are_normalized() {
    let spec = build_grid(Vec3::new(0.0, 0.0, 0.8), Vec3::repeat(0.1), 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let kps: Vec<Vec3> = (0..4)
            .map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.7..0.9)))
            .collect();
        let sigma = rng.random_range(0.005..0.04);
        let target = TargetHeatmaps::uniform(kps, RigidTransform::identity(), sigma).unwrap();
        for i in 0..4 {
            let g = rasterize_heatmap(&target, &spec, i).unwrap();
            assert!((g.sum() - 1.0).abs() < 1e-6);
            assert!(g.values().iter().all(|&x| x >= 0.0));
        }
    }
}

/// Median rasterize→extract error over `trials` random keypoints with σ = 2 cells.
fn round_trip_median(cell: f64, trials: usize, seed: u64) -> f64 {
    let center = Vec3::new(0.02, -0.01, 0.8);
    let spec = build_grid(center, Vec3::repeat(0.06), cell).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(trials);
    for _ in 0..trials {
        let kp = center
            + Vec3::new(
                rng.random_range(-0.03..0.03),
                rng.random_range(-0.03..0.03),
                rng.random_range(-0.03..0.03),
            );
        let others = [kp + Vec3::x() * 0.01, kp + Vec3::y() * 0.01, kp + Vec3::z() * 0.01];
        let target = TargetHeatmaps::uniform(vec![kp, others[0], others[1], others[2]], RigidTransform::identity(), 2.0 * cell)
            .unwrap();
        let grid = rasterize_heatmap(&target, &spec, 0).unwrap();
        errors.push((extract_keypoint(&grid).position - kp).norm());
    }
    errors.sort_by(f64::total_cmp);
    errors[trials / 2]
}

#[test]
fn round_trip_error_below_quarter_cell() {
    let median = round_trip_median(0.01, 500, 13);
    assert!(median < 0.0025, "median {median}");
}

#[test]
fn round_trip_error_shrinks_with_cell_size() {
    let errors: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&c| round_trip_median(c, 150, 14))
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn keypoint_loss_convention() {
    let t = [Vec3::zeros()];
    assert_eq!(keypoint_loss(&t, &t).unwrap(), 0.0);
    assert_eq!(keypoint_loss(&[Vec3::new(0.5, 0.0, 0.0)], &t).unwrap(), 0.125);
    assert_eq!(keypoint_loss(&[Vec3::new(2.0, 0.0, 0.0)], &t).unwrap(), 1.5);
}

proptest! {
    #[test]
    fn softmax_always_sums_to_one(values in proptest::collection::vec(-50.0..50.0f64, 24)) {
        let spec = GridSpec::new(Vec3::zeros(), [2, 3, 4], Vec3::repeat(0.01)).unwrap();
        let g = normalize_field(&ScalarGrid::new(spec, values).unwrap()).unwrap();
        prop_assert!((g.sum() - 1.0).abs() < 1e-6);
        prop_assert!(g.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn extraction_is_translation_equivariant(
        seed in any::<u64>(), dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64,
    ) {
        let a = GridSpec::new(Vec3::new(0.0, 0.0, 0.8), [9, 8, 7], Vec3::repeat(0.01)).unwrap();
        let shift = Vec3::new(dx, dy, dz);
        let b = GridSpec::new(a.center() + shift, a.dims(), *a.cell_size()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_distribution(a, &mut rng, false);
        let q = ScalarGrid::new(b, p.values().to_vec()).unwrap();
        let (ea, eb) = (extract_keypoint(&p), extract_keypoint(&q));
        prop_assert!((eb.position - ea.position - shift).norm() < 1e-12);
        prop_assert_eq!(ea.confidence, eb.confidence);
    }
}
