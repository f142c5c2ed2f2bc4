//! ADD / ADD-S pose errors, the 0.1·diameter success test and
//! occlusion-stratified accuracy.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::ComplexField;

use crate::geometry::RigidTransform;
use crate::{Error, Result, Vec3};

/// Model size above which ADD-S switches from brute force to a spatial grid.
pub const BRUTE_FORCE_LIMIT: usize = 5000;

/// Fraction of the diameter under which a pose counts as correct.
pub const SUCCESS_FRACTION: f64 = 0.1;

/// Object model point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPoints {
    points: Vec<Vec3>,
    diameter: f64,
    symmetric: bool,
}

impl ModelPoints {
    /// Computes the diameter as the largest pairwise distance.
    pub fn new(points: Vec<Vec3>, symmetric: bool) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: points.len(),
            });
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFiniteInput);
        }
        let mut d2: f64 = 0.0;
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                d2 = d2.max((a - b).norm_squared());
            }
        }
        if !(d2 > 0.0) {
            return Err(Error::DegenerateConfiguration);
        }
        Ok(Self {
            points,
            diameter: d2.sqrt(),
            symmetric,
        })
    }

    /// Model-frame points.
    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Largest pairwise distance, meters.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Whether ADD-S is the metric of record.
    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    /// Mean of the points.
    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }
}

/// Mean distance between corresponding model points under both poses.
pub fn add_metric(est: &RigidTransform, gt: &RigidTransform, model: &ModelPoints) -> f64 {
    let total: f64 = model
        .points
        .iter()
        .map(|p| (gt.transform_point(p) - est.transform_point(p)).norm())
        .sum();
    total / model.points.len() as f64
}

/// Mean distance from each estimated model point to the closest
/// ground-truth model point.
pub fn adds_metric(est: &RigidTransform, gt: &RigidTransform, model: &ModelPoints) -> f64 {
    let reference: Vec<Vec3> = model.points.iter().map(|p| gt.transform_point(p)).collect();
    let index = NearestNeighbors::new(&reference);
    let total: f64 = model
        .points
        .iter()
        .map(|p| index.nearest_distance(&est.transform_point(p)))
        .sum();
    total / model.points.len() as f64
}

/// ADD-S for symmetric models, ADD otherwise.
pub fn pose_error(est: &RigidTransform, gt: &RigidTransform, model: &ModelPoints) -> f64 {
    if model.symmetric {
        adds_metric(est, gt, model)
    } else {
        add_metric(est, gt, model)
    }
}

/// True iff the model's metric is strictly below 0.1·diameter.
pub fn success(est: &RigidTransform, gt: &RigidTransform, model: &ModelPoints) -> bool {
    pose_error(est, gt, model) < SUCCESS_FRACTION * model.diameter
}

/// Exact nearest-neighbor distance queries over a fixed point set.
///
/// Small sets are scanned linearly; larger ones are bucketed into a uniform
/// grid searched in growing shells.
#[derive(Debug)]
pub struct NearestNeighbors<'a> {
    points: &'a [Vec3],
    grid: Option<BucketGrid>,
}

#[derive(Debug)]
struct BucketGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> NearestNeighbors<'a> {
    /// Indexes `points` (grid only above [`BRUTE_FORCE_LIMIT`]).
    pub fn new(points: &'a [Vec3]) -> Self {
        let grid = (points.len() > BRUTE_FORCE_LIMIT).then(|| BucketGrid::new(points));
        Self { points, grid }
    }

    /// Distance from `q` to the closest indexed point.
    pub fn nearest_distance(&self, q: &Vec3) -> f64 {
        match &self.grid {
            None => brute_force_nearest(self.points, q),
            Some(g) => g.nearest(self.points, q),
        }
    }
}

fn brute_force_nearest(points: &[Vec3], q: &Vec3) -> f64 {
    points
        .iter()
        .map(|p| (p - q).norm_squared())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

impl BucketGrid {
    fn new(points: &[Vec3]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).map(|e| e.max(1e-9));
        // About two points per occupied cell for surface-like clouds.
        let area = 2.0 * (extent.x * extent.y + extent.y * extent.z + extent.x * extent.z);
        let cell = (2.0 * area / points.len() as f64).sqrt().max(1e-9);
        let dims: [usize; 3] = core::array::from_fn(|a| (extent[a] / cell).floor() as usize + 1);
        let cell_of = |p: &Vec3| -> usize {
            let c: [usize; 3] = core::array::from_fn(|a| (((p[a] - lo[a]) / cell) as usize).min(dims[a] - 1));
            c[0] + dims[0] * (c[1] + dims[1] * c[2])
        };
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; n_cells + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            origin: lo,
            cell,
            dims,
            starts: counts,
            order,
        }
    }

    fn nearest(&self, points: &[Vec3], q: &Vec3) -> f64 {
        let local = (q - self.origin) / self.cell;
        let home: [i64; 3] = core::array::from_fn(|a| {
            (local[a].floor() as i64).clamp(0, self.dims[a] as i64 - 1)
        });
        let max_ring = *self.dims.iter().max().unwrap() as i64;
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let c = [home[0] + dx, home[1] + dy, home[2] + dz];
                        if (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a] as i64) {
                            continue;
                        }
                        let idx = c[0] as usize + self.dims[0] * (c[1] as usize + self.dims[1] * c[2] as usize);
                        for &i in &self.order[self.starts[idx]..self.starts[idx + 1]] {
                            best = best.min((points[i] - q).norm_squared());
                        }
                    }
                }
            }
            // Unvisited cells lie at least `ring` cells beyond the home cell,
            // which holds the projection of q onto the grid box.
            let reach = ring as f64 * self.cell;
            if best.is_finite() && best.sqrt() <= reach {
                break;
            }
        }
        best.sqrt()
    }
}

/// Accuracy of one invisible-fraction bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinAccuracy {
    /// inclusive lower edge
    pub lower: f64,
    /// exclusive upper edge (inclusive for the last bin)
    pub upper: f64,
    /// trials in the bin
    pub total: usize,
    /// successful trials in the bin
    pub successes: usize,
    /// `successes / total`, absent for empty bins
    pub accuracy: Option<f64>,
}

impl BinAccuracy {
    /// Midpoint of the bin.
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Edges `0, width, 2·width, …` up to and including 1.
pub fn uniform_bin_edges(width: f64) -> Vec<f64> {
    let n = (1.0 / width - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|i| (i as f64 * width).min(1.0)).collect()
}

/// Buckets `(success, invisible_fraction)` results by fraction.
///
/// Results outside `[edges[0], edges[last]]` are ignored.
pub fn occlusion_curve(results: &[(bool, f64)], edges: &[f64]) -> Vec<BinAccuracy> {
    let nbins = edges.len().saturating_sub(1);
    let mut bins: Vec<BinAccuracy> = (0..nbins)
        .map(|b| BinAccuracy {
            lower: edges[b],
            upper: edges[b + 1],
            total: 0,
            successes: 0,
            accuracy: None,
        })
        .collect();
    for &(ok, fraction) in results {
        let slot = (0..nbins).find(|&b| {
            fraction >= edges[b] && (fraction < edges[b + 1] || (b + 1 == nbins && fraction <= edges[b + 1]))
        });
        if let Some(b) = slot {
            bins[b].total += 1;
            bins[b].successes += usize::from(ok);
        }
    }
    for b in &mut bins {
        if b.total > 0 {
            b.accuracy = Some(b.successes as f64 / b.total as f64);
        }
    }
    bins
}

/// Least-squares slope of `y` against `x`; `None` with fewer than two
/// distinct abscissae.
pub fn linear_fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Slope of accuracy against bin center over the non-empty bins.
pub fn curve_slope(bins: &[BinAccuracy]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = bins
        .iter()
        .filter_map(|b| b.accuracy.map(|a| (b.center(), a)))
        .collect();
    linear_fit_slope(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn circle(n: usize) -> ModelPoints {
        let pts = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        ModelPoints::new(pts, true).unwrap()
    }

    #[test]
    fn diameter_of_circle() {
        assert!((circle(360).diameter() - 2.0).abs() < 1e-12);
        assert!(ModelPoints::new(alloc::vec![Vec3::zeros()], false).is_err());
        assert!(ModelPoints::new(alloc::vec![Vec3::zeros(); 3], false).is_err());
    }

    #[test]
    fn identical_poses_score_zero() {
        let m = circle(100);
        let t = RigidTransform::from_axis_angle(&Vec3::x(), 0.3, Vec3::new(0.0, 0.1, 1.0));
        assert_eq!(add_metric(&t, &t, &m), 0.0);
        assert_eq!(adds_metric(&t, &t, &m), 0.0);
        assert!(success(&t, &t, &m));
    }

    #[test]
    fn translation_offset_equals_add() {
        let m = circle(50);
        let gt = RigidTransform::from_axis_angle(&Vec3::y(), 1.0, Vec3::new(0.0, 0.0, 1.0));
        let est = RigidTransform::from_translation(Vec3::new(0.03, 0.0, 0.0)).compose(&gt);
        assert!((add_metric(&est, &gt, &m) - 0.03).abs() < 1e-12);
    }

    #[test]
    fn half_turn_about_circle_axis() {
        // Mean chord of a 180° rotation is 2 for every point on the unit
        // circle about its own axis, and 4/π when the axis is a diameter.
        let m = circle(3600);
        let gt = RigidTransform::identity();
        let about_x = RigidTransform::from_axis_angle(&Vec3::x(), PI, Vec3::zeros());
        let expected: f64 = (0..3600)
            .map(|i| {
                let a = 2.0 * PI * (i as f64 + 0.5) / 3600.0;
                2.0 * a.sin().abs()
            })
            .sum::<f64>()
            / 3600.0;
        assert!((add_metric(&about_x, &gt, &m) - expected).abs() < 1e-3);
        assert!((expected - 4.0 / PI).abs() < 1e-3);

        let about_z = RigidTransform::from_axis_angle(&Vec3::z(), PI, Vec3::zeros());
        assert!((add_metric(&about_z, &gt, &m) - 2.0).abs() < 1e-12);
        assert!(adds_metric(&about_z, &gt, &m) < 1e-9);
    }

    #[test]
    fn success_boundary_is_strict() {
        let m = ModelPoints::new(alloc::vec![Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0)], false).unwrap();
        let gt = RigidTransform::identity();
        let at = RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0));
        assert_eq!(add_metric(&at, &gt, &m), 0.1 * m.diameter());
        assert!(!success(&at, &gt, &m));
        let inside = RigidTransform::from_translation(Vec3::new(0.099, 0.0, 0.0));
        assert!(success(&inside, &gt, &m));
    }

    #[test]
    fn grid_nearest_matches_brute_force() {
        let mut pts = Vec::new();
        for i in 0..6000 {
            let a = i as f64 * 0.618_033_988_7 * 2.0 * PI;
            let z = -1.0 + 2.0 * (i as f64 + 0.5) / 6000.0;
            let r = (1.0 - z * z).sqrt();
            pts.push(Vec3::new(r * a.cos(), r * a.sin(), z) * 0.1);
        }
        let nn = NearestNeighbors::new(&pts);
        assert!(nn.grid.is_some());
        for j in 0..300 {
            let t = j as f64 * 0.37;
            let q = Vec3::new(t.sin() * 0.2, (1.3 * t).cos() * 0.15, (0.7 * t).sin() * 0.12);
            assert_eq!(nn.nearest_distance(&q), brute_force_nearest(&pts, &q));
        }
        let far = Vec3::new(3.0, -2.0, 1.0);
        assert_eq!(nn.nearest_distance(&far), brute_force_nearest(&pts, &far));
    }

    #[test]
    fn occlusion_bins() {
        let bins = occlusion_curve(&[(true, 0.1), (false, 0.6)], &uniform_bin_edges(0.5));
        let acc: Vec<_> = bins.iter().map(|b| b.accuracy).collect();
        assert_eq!(acc, alloc::vec![Some(1.0), Some(0.0)]);

        let bins = occlusion_curve(&[(true, 0.05), (true, 1.0)], &uniform_bin_edges(0.25));
        assert_eq!(bins.len(), 4);
        assert_eq!(bins[0].accuracy, Some(1.0));
        assert_eq!(bins[1].accuracy, None);
        assert_eq!(bins[3].total, 1);
    }

    #[test]
    fn slope_of_line() {
        let s = linear_fit_slope(&[(0.0, 1.0), (0.5, 0.0), (1.0, -1.0)]).unwrap();
        assert!((s + 2.0).abs() < 1e-12);
        assert_eq!(linear_fit_slope(&[(1.0, 1.0)]), None);
    }
}
