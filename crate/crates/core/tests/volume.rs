use posevolume_core::volume::{build_grid, lift_features, trilinear_weights, FeatureMap, GridSpec};
use posevolume_core::{CameraIntrinsics, Error, Mat3, RigidTransform, Vec3, ViewPair};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_k() -> CameraIntrinsics {
    CameraIntrinsics::new(143.1, 143.4, 80.3, 60.5, 160, 120).unwrap()
}

fn pair() -> ViewPair {
    let query = RigidTransform::from_axis_angle(&Vec3::y(), -0.12, Vec3::new(-0.1, 0.0, 0.01));
    ViewPair::new(small_k(), RigidTransform::identity(), query)
}

fn gaussian_map(k: &CameraIntrinsics, cam: &RigidTransform, world: &[Vec3], sigma: f64, patchy_mask: bool) -> FeatureMap {
    let (w, h) = (k.width() as usize, k.height() as usize);
    let n = world.len();
    let mut data = vec![0.0f32; w * h * n];
    for (c, p) in world.iter().enumerate() {
        let q = cam.transform_point(p);
        let (u0, v0) = (k.fx() * q.x / q.z + k.cx(), k.fy() * q.y / q.z + k.cy());
        for v in 0..h {
            for u in 0..w {
                let r2 = (u as f64 - u0).powi(2) + (v as f64 - v0).powi(2);
                data[(v * w + u) * n + c] = (-r2 / (2.0 * sigma * sigma)).exp() as f32;
            }
        }
    }
    let mask = (0..w * h)
        .map(|i| if patchy_mask && i % 7 == 0 { 0.5 } else { 1.0 })
        .collect();
    FeatureMap::new(w, h, n, data, mask).unwrap()
}

/// Independent per-cell reprojection with a hand-written bilinear blend.
fn brute_force_cell(map: &FeatureMap, k: &CameraIntrinsics, cam: &RigidTransform, world: &Vec3) -> Vec<f64> {
    let q = cam.transform_point(world);
    let n = map.channels();
    if q.z <= 0.0 {
        return vec![0.0; n];
    }
    let (u, v) = (k.fx() * q.x / q.z + k.cx(), k.fy() * q.y / q.z + k.cy());
    let (w, h) = (map.width(), map.height());
    if u < 0.0 || v < 0.0 || u > (w - 1) as f64 || v > (h - 1) as f64 {
        return vec![0.0; n];
    }
    let x0 = (u.floor() as usize).min(w - 2);
    let y0 = (v.floor() as usize).min(h - 2);
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let blend = |get: &dyn Fn(usize, usize) -> f64| {
        get(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + get(x0 + 1, y0) * fx * (1.0 - fy)
            + get(x0, y0 + 1) * (1.0 - fx) * fy
            + get(x0 + 1, y0 + 1) * fx * fy
    };
    let mask = blend(&|x, y| f64::from(map.mask()[y * w + x]));
    (0..n)
        .map(|c| blend(&|x, y| f64::from(map.at(x, y, c))) * mask)
        .collect()
}

#[test]
fn lifting_matches_brute_force_reprojection() {
    let pair = pair();
    let spec = build_grid(Vec3::new(0.0, 0.0, 0.8), Vec3::repeat(0.05), 0.01).unwrap();
    let keypoint = spec.cell_center(5, 5, 5);
    let other = spec.cell_center(2, 7, 3);
    let k = *pair.intrinsics();
    let ref_map = gaussian_map(&k, pair.ref_from_world(), &[keypoint, other], 2.0, true);
    let query_map = gaussian_map(&k, pair.query_from_world(), &[keypoint, other], 2.0, true);
    let volume = lift_features(&spec, &ref_map, &query_map, &pair).unwrap();
    assert_eq!(volume.channels(), 4);
    for cell in 0..spec.num_cells() {
        let c = spec.cell_center_at(cell);
        let mut expected = brute_force_cell(&ref_map, &k, pair.ref_from_world(), &c);
        expected.extend(brute_force_cell(&query_map, &k, pair.query_from_world(), &c));
        for (got, want) in volume.cell(cell).iter().zip(&expected) {
            assert!((f64::from(*got) - want).abs() < 1e-5, "cell {cell}: {got} vs {want}");
        }
    }
}

#[test]
fn lifted_response_peaks_at_keypoint_cell() {
    let query = RigidTransform::from_axis_angle(&Vec3::y(), -0.24, Vec3::new(-0.2, 0.0, 0.03));
    let pair = ViewPair::new(small_k(), RigidTransform::identity(), query);
    let spec = build_grid(Vec3::new(0.0, 0.0, 0.8), Vec3::repeat(0.1), 0.02).unwrap();
    let keypoint = spec.cell_center(5, 5, 5);
    let k = *pair.intrinsics();
    let ref_map = gaussian_map(&k, pair.ref_from_world(), &[keypoint], 3.0, false);
    let query_map = gaussian_map(&k, pair.query_from_world(), &[keypoint], 3.0, false);
    let volume = lift_features(&spec, &ref_map, &query_map, &pair).unwrap();
    let mut best = (0usize, f64::NEG_INFINITY);
    for cell in 0..spec.num_cells() {
        let response = f64::from(volume.cell(cell)[0]) + f64::from(volume.cell(cell)[1]);
        if response > best.1 {
            best = (cell, response);
        }
    }
    assert_eq!(spec.coords(best.0), [5, 5, 5]);
}

#[test]
fn lifting_is_bit_identical_across_runs() {
    let pair = pair();
    let spec = build_grid(Vec3::new(0.01, -0.02, 0.8), Vec3::repeat(0.04), 0.005).unwrap();
    let k = *pair.intrinsics();
    let pts = [Vec3::new(0.0, 0.0, 0.8), Vec3::new(0.02, 0.01, 0.78)];
    let r = gaussian_map(&k, pair.ref_from_world(), &pts, 3.0, true);
    let q = gaussian_map(&k, pair.query_from_world(), &pts, 3.0, true);
    let a = lift_features(&spec, &r, &q, &pair).unwrap();
    let b = lift_features(&spec, &r, &q, &pair).unwrap();
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.values()), bits(b.values()));
}

#[test]
fn cells_outside_both_images_are_zero() {
    let pair = pair();
    // far to the side of both frusta
    let spec = build_grid(Vec3::new(3.0, 0.0, 0.8), Vec3::repeat(0.05), 0.02).unwrap();
    let mut ones = FeatureMap::zeros(160, 120, 3);
    ones.data_mut().fill(1.0);
    ones.mask_mut().fill(1.0);
    let volume = lift_features(&spec, &ones, &ones, &pair).unwrap();
    assert!(volume.values().iter().all(|&x| x == 0.0));
}

#[test]
fn grid_dimension_examples() {
    let coarse = build_grid(Vec3::new(0.0, 0.0, 0.8), Vec3::repeat(0.3), 0.01).unwrap();
    assert_eq!(coarse.dims(), [60, 60, 60]);
    let fine = build_grid(Vec3::zeros(), Vec3::repeat(0.05), 0.005).unwrap();
    assert_eq!(fine.dims(), [20, 20, 20]);
    assert!(matches!(
        build_grid(Vec3::zeros(), Vec3::repeat(10.0), 0.001),
        Err(Error::InvalidRange(_))
    ));
}

/// Largest distance from random in-bounds points to their nearest cell center.
fn worst_nearest_distance(cell: f64, seed: u64) -> f64 {
    let spec = build_grid(Vec3::new(0.0, 0.0, 0.8), Vec3::repeat(0.1), cell).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20000 {
        let p = Vec3::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(0.7..0.9),
        );
        let [i, j, k] = spec.nearest_cell(&p).unwrap();
        worst = worst.max((spec.cell_center(i, j, k) - p).norm());
    }
    worst
}

#[test]
fn halving_cell_size_shrinks_worst_case_distance() {
    let mut last = f64::INFINITY;
    for cell in [0.04, 0.02, 0.01, 0.005] {
        let worst = worst_nearest_distance(cell, 9);
        assert!(worst < last, "cell {cell}: {worst} !< {last}");
        assert!(worst <= 0.5 * cell * 3f64.sqrt() + 1e-12);
        last = worst;
    }
}

fn rotation(axis: Vec3, angle: f64) -> Mat3 {
    *RigidTransform::from_axis_angle(&axis, angle, Vec3::zeros()).rotation()
}

proptest! {
    #[test]
    fn trilinear_weights_partition_unity(
        x in -0.0999..0.0999f64, y in -0.0999..0.0999f64, z in -0.0999..0.0999f64,
        cell in 0.004..0.03f64, angle in -3.0..3.0f64,
    ) {
        let axes = rotation(Vec3::new(0.3, -0.5, 0.8).normalize(), angle);
        let spec = GridSpec::covering(Vec3::new(0.0, 0.0, 0.8), Vec3::repeat(0.1), cell, usize::MAX)
            .unwrap()
            .with_axes(axes);
        let half = Vec3::from(spec.dims().map(|d| d as f64)).component_mul(spec.cell_size()) * 0.5;
        let local = Vec3::new(x, y, z).component_mul(&half) / 0.1;
        let p = spec.center() + axes * local;
        let w = trilinear_weights(&spec, &p).unwrap();
        let total: f64 = w.iter().map(|&(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() <= 1e-15);
        prop_assert!(w.iter().all(|&(_, w)| w >= 0.0));
    }

    #[test]
    fn bilinear_inside_lattice_is_exact(u in 0usize..16, v in 0usize..12, c in 0usize..3) {
        let mut map = FeatureMap::zeros(16, 12, 3);
        for (i, x) in map.data_mut().iter_mut().enumerate() {
            *x = (i as f32).sin();
        }
        prop_assert_eq!(map.bilinear_sample(u as f64, v as f64)[c], map.at(u, v, c));
    }
}
