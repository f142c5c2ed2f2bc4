//! End-to-end drivers: mask-based initialization, one volume level, the
//! coarse-to-fine pipeline and the late-fusion triangulation baseline.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::ComplexField;

use crate::field::{
    extract_keypoint, keypoint_loss, kl_divergence, normalize_field, rasterize_heatmap,
    KeypointEstimate, ScalarGrid, TargetHeatmaps,
};
use crate::geometry::{triangulate, unproject_pixel, CameraIntrinsics, RigidTransform, ViewPair};
use crate::solver::{
    joint_loss, pose_loss, solve, solve_all_points, Correspondences, HypothesisSet, LevelLosses, SolverParams};
use crate::volume::{lift_pyramid, FeatureMap, GeometricVolume, GridSpec, DEFAULT_MAX_CELLS};
use crate::{Error, Result, Vec3};

/// Mask value above which a pixel counts as object.
pub const MASK_THRESHOLD: f32 = 0.5;

/// Keypoints whose confidence is below this multiple of a uniform field's
/// confidence are flagged.
pub const LOW_CONFIDENCE_FACTOR: f64 = 10.0;

/// Settings of the two-level volume pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// coarse grid half extent per axis, meters
    pub coarse_half_range: Vec3,
    /// coarse cell size, meters
    pub coarse_cell: f64,
    /// fine cell size, meters
    pub fine_cell: f64,
    /// fine half extent = factor × model diameter
    pub fine_range_factor: f64,
    /// soft-RANSAC parameters
    pub solver: SolverParams,
    /// rotation weight of the pose loss
    pub alpha: f64,
    /// weights of the pose, keypoint and KL terms in the joint loss
    pub betas: [f64; 3],
    /// scale applied to the summed per-keypoint evidence before the softmax
    pub field_gain: f64,
    /// response level treated as no evidence; features enter the field as
    /// `ln(1 + x / floor)`
    pub evidence_floor: f64,
    /// target heatmap σ in units of the level's cell size
    pub sigma_cells: f64,
    /// cell cap per grid
    pub max_cells: usize,
    /// half-width of the 2D soft-argmax window of the late-fusion baseline, px
    pub window_px: usize,
    /// pose estimator applied to the predicted keypoints
    pub solver_mode: SolverMode,
}

/// Pose estimator used after keypoint localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// soft RANSAC over all minimal triples
    #[default]
    SoftRansac,
    /// one Kabsch fit over every keypoint
    AllPoints,
}

impl SolverMode {
    fn solve(self, c: &Correspondences, params: &SolverParams) -> Result<(RigidTransform, HypothesisSet)> {
        match self {
            SolverMode::SoftRansac => solve(c, params),
            SolverMode::AllPoints => solve_all_points(c, params),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            coarse_half_range: Vec3::repeat(0.3),
            coarse_cell: 0.01,
            fine_cell: 0.005,
            fine_range_factor: 0.75,
            solver: SolverParams::default(),
            alpha: 1.0,
            betas: [1.0, 1.0, 1.0],
            field_gain: 1.5,
            evidence_floor: 1e-4,
            sigma_cells: 2.0,
            max_cells: DEFAULT_MAX_CELLS,
            window_px: 9,
            solver_mode: SolverMode::SoftRansac,
        }
    }
}

impl PipelineConfig {
    /// Checks ranges and the `fine_cell < coarse_cell` ordering.
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !self.coarse_half_range.iter().all(|&h| h > 0.0) {
            return Err(Error::InvalidParameter("coarse range must be positive"));
        }
        if !(self.fine_cell > 0.0 && self.fine_cell < self.coarse_cell) {
            return Err(Error::InvalidParameter("need 0 < fine_cell < coarse_cell"));
        }
        if !(self.fine_range_factor > 0.0
            && self.field_gain > 0.0
            && self.evidence_floor > 0.0
            && self.sigma_cells > 0.0)
        {
            return Err(Error::InvalidParameter("range factor, gain, floor and sigma must be positive"));
        }
        Ok(())
    }
}

/// Everything one scene provides to the estimators.
#[derive(Debug, Clone, Copy)]
pub struct SceneInputs<'a> {
    /// cameras
    pub pair: &'a ViewPair,
    /// reference-view features, finest level first
    pub ref_levels: &'a [FeatureMap],
    /// query-view features, same layout
    pub query_levels: &'a [FeatureMap],
    /// model-frame keypoints; channel `c` of every level belongs to keypoint
    /// `c % N`
    pub model_keypoints: &'a [Vec3],
    /// model-frame point the fine grid is centered on
    pub model_center: Vec3,
    /// model diameter, meters
    pub model_diameter: f64,
    /// depth used to unproject the mask center, meters
    pub prior_depth: f64,
    /// object-to-world pose, when known, for diagnostics
    pub ground_truth: Option<RigidTransform>,
}

/// Centroid of the mask-positive pixels, unprojected at `prior_depth` in the
/// reference camera and returned in world coordinates.
///
/// The mask may be at any resolution; its pixel centers are mapped onto the
/// intrinsics' image.
pub fn initial_guess(
    mask: &FeatureMap,
    k: &CameraIntrinsics,
    ref_from_world: &RigidTransform,
    prior_depth: f64,
) -> Result<Vec3> {
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
    for v in 0..mask.height() {
        for u in 0..mask.width() {
            if mask.mask()[v * mask.width() + u] > MASK_THRESHOLD {
                su += u as f64;
                sv += v as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let sx = f64::from(k.width()) / mask.width() as f64;
    let sy = f64::from(k.height()) / mask.height() as f64;
    let u = (su / n as f64 + 0.5) * sx - 0.5;
    let v = (sv / n as f64 + 0.5) * sy - 0.5;
    let cam = unproject_pixel(u, v, prior_depth, k)?;
    Ok(ref_from_world.inverse().transform_point(&cam))
}

/// Per-keypoint probability grids from a lifted volume. Every channel `c`
/// adds `ln(1 + x / floor)` to keypoint `c % n`; the sums are scaled by
/// `gain` and softmax-normalized, so the field is proportional to the
/// product of the per-view responses wherever they exceed the floor.
pub fn keypoint_fields(volume: &GeometricVolume, n: usize, gain: f64, floor: f64) -> Result<Vec<ScalarGrid>> {
    if n == 0 || !volume.channels().is_multiple_of(n) {
        return Err(Error::ChannelMismatch {
            expected: n,
            found: volume.channels(),
        });
    }
    let cells = volume.spec().num_cells();
    let mut raw = vec![vec![0.0f64; cells]; n];
    for (c, grid) in raw.iter_mut().enumerate() {
        for (cell, v) in grid.iter_mut().enumerate() {
            *v = volume.cell(cell)[c..]
                .iter()
                .step_by(n)
                .map(|&x| ComplexField::ln_1p(f64::from(x).max(0.0) / floor))
                .sum();
        }
    }
    raw.into_iter()
        .map(|mut values| {
            for v in &mut values {
                *v *= gain;
            }
            normalize_field(&ScalarGrid::new(*volume.spec(), values)?)
        })
        .collect()
}

/// Ground-truth comparisons of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDiagnostics {
    /// mean KL divergence over keypoints whose target lies inside the grid
    pub kl: Option<f64>,
    /// smooth-L1 keypoint loss
    pub keypoint_loss: f64,
    /// pose loss with the configured α
    pub pose_loss: f64,
    /// per-keypoint Euclidean errors, meters
    pub keypoint_errors: Vec<f64>,
}

impl LevelDiagnostics {
    /// Loss components for the joint loss (missing KL counts as zero).
    pub fn losses(&self) -> LevelLosses {
        LevelLosses {
            pose: self.pose_loss,
            keypoint: self.keypoint_loss,
            kl: self.kl.unwrap_or(0.0),
        }
    }
}

/// Output of one volume level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutput {
    /// grid used
    pub spec: GridSpec,
    /// per-keypoint readouts
    pub keypoints: Vec<KeypointEstimate>,
    /// flags for readouts with near-uniform fields
    pub low_confidence: Vec<bool>,
    /// aggregated pose
    pub pose: RigidTransform,
    /// scored hypotheses behind the pose
    pub hypotheses: HypothesisSet,
    /// present when ground truth was supplied
    pub diagnostics: Option<LevelDiagnostics>,
}

impl LevelOutput {
    /// Predicted world keypoints.
    pub fn positions(&self) -> Vec<Vec3> {
        self.keypoints.iter().map(|k| k.position).collect()
    }
}

/// Builds a grid around `center`, lifts both views, reads out one keypoint
/// per model keypoint and solves the pose.
pub fn run_level(
    center: Vec3,
    cell: f64,
    half_range: Vec3,
    inputs: &SceneInputs<'_>,
    cfg: &PipelineConfig,
) -> Result<LevelOutput> {
    let n = inputs.model_keypoints.len();
    let axes = inputs.pair.ref_from_world().rotation().transpose();
    let spec = GridSpec::covering(center, half_range, cell, cfg.max_cells)?.with_axes(axes);
    let volume = lift_pyramid(&spec, inputs.ref_levels, inputs.query_levels, inputs.pair)?;
    let fields = keypoint_fields(&volume, n, cfg.field_gain, cfg.evidence_floor)?;
    drop(volume);

    let keypoints: Vec<KeypointEstimate> = fields.iter().map(extract_keypoint).collect();
    let uniform = 1.0 / spec.num_cells() as f64;
    let low_confidence = keypoints
        .iter()
        .map(|k| k.confidence < LOW_CONFIDENCE_FACTOR * uniform)
        .collect();
    let predicted: Vec<Vec3> = keypoints.iter().map(|k| k.position).collect();
    let correspondences = Correspondences::new(inputs.model_keypoints.to_vec(), predicted.clone())?;
    let (pose, hypotheses) = cfg.solver_mode.solve(&correspondences, &cfg.solver)?;

    let diagnostics = match inputs.ground_truth {
        Some(gt) => Some(level_diagnostics(&spec, &fields, &predicted, &pose, &gt, inputs, cfg)?),
        None => None,
    };
    Ok(LevelOutput {
        spec,
        keypoints,
        low_confidence,
        pose,
        hypotheses,
        diagnostics,
    })
}

fn level_diagnostics(
    spec: &GridSpec,
    fields: &[ScalarGrid],
    predicted: &[Vec3],
    pose: &RigidTransform,
    gt: &RigidTransform,
    inputs: &SceneInputs<'_>,
    cfg: &PipelineConfig,
) -> Result<LevelDiagnostics> {
    let sigma = cfg.sigma_cells * spec.cell_size().x;
    let n = inputs.model_keypoints.len();
    let truth: Vec<Vec3> = inputs.model_keypoints.iter().map(|m| gt.transform_point(m)).collect();

    let kl = if n >= 4 {
        let targets = TargetHeatmaps::uniform(inputs.model_keypoints.to_vec(), *gt, sigma)?;
        let (mut total, mut count) = (0.0, 0usize);
        for (i, field) in fields.iter().enumerate() {
            match rasterize_heatmap(&targets, spec, i) {
                Ok(target) => {
                    total += kl_divergence(field, &target)?;
                    count += 1;
                }
                Err(Error::KeypointOutsideGrid { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        (count > 0).then(|| total / count as f64)
    } else {
        None
    };
    Ok(LevelDiagnostics {
        kl,
        keypoint_loss: keypoint_loss(predicted, &truth)?,
        pose_loss: pose_loss(pose, gt, cfg.alpha),
        keypoint_errors: predicted.iter().zip(&truth).map(|(p, t)| (p - t).norm()).collect(),
    })
}

/// Both levels of the volume pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseToFine {
    /// world point the coarse grid is centered on
    pub initial_guess: Vec3,
    /// coarse level
    pub coarse: LevelOutput,
    /// fine level, centered on the coarse pose applied to the model center
    pub fine: LevelOutput,
    /// joint loss over both levels when ground truth was supplied
    pub joint_loss: Option<f64>,
}

impl CoarseToFine {
    /// Final pose estimate.
    pub fn pose(&self) -> &RigidTransform {
        &self.fine.pose
    }
}

/// Initializes from the reference mask and runs coarse then fine.
pub fn run_coarse_to_fine(cfg: &PipelineConfig, inputs: &SceneInputs<'_>) -> Result<CoarseToFine> {
    let mask = inputs.ref_levels.first().ok_or(Error::InvalidParameter("no feature levels"))?;
    let guess = initial_guess(mask, inputs.pair.intrinsics(), inputs.pair.ref_from_world(), inputs.prior_depth)?;
    run_coarse_to_fine_from(guess, cfg, inputs)
}

/// Coarse-to-fine from an explicit coarse center.
pub fn run_coarse_to_fine_from(
    initial: Vec3,
    cfg: &PipelineConfig,
    inputs: &SceneInputs<'_>,
) -> Result<CoarseToFine> {
    cfg.validate()?;
    let coarse = run_level(initial, cfg.coarse_cell, cfg.coarse_half_range, inputs, cfg)?;
    let fine_center = coarse.pose.transform_point(&inputs.model_center);
    let fine_half = Vec3::repeat(cfg.fine_range_factor * inputs.model_diameter);
    let fine = run_level(fine_center, cfg.fine_cell, fine_half, inputs, cfg)?;
    let joint = match (&coarse.diagnostics, &fine.diagnostics) {
        (Some(c), Some(f)) => Some(joint_loss(&[c.losses(), f.losses()], cfg.betas)),
        _ => None,
    };
    Ok(CoarseToFine {
        initial_guess: initial,
        coarse,
        fine,
        joint_loss: joint,
    })
}

/// Probability-weighted mean pixel of one channel (gated by the mask) in a
/// square window around its maximum. An empty channel is uniform and
/// yields the map center.
pub fn soft_argmax_2d(map: &FeatureMap, channel: usize, half_window: usize) -> (f64, f64) {
    let (w, h) = (map.width(), map.height());
    let gated = |u: usize, v: usize| f64::from(map.at(u, v, channel)) * f64::from(map.mask()[v * w + u]);
    let mut best = (0usize, 0usize, 0.0f64);
    for v in 0..h {
        for u in 0..w {
            let x = gated(u, v);
            if x > best.2 {
                best = (u, v, x);
            }
        }
    }
    if !(best.2 > 0.0) {
        return ((w as f64 - 1.0) * 0.5, (h as f64 - 1.0) * 0.5);
    }
    let (u0, v0) = (best.0, best.1);
    let (mut su, mut sv, mut total) = (0.0, 0.0, 0.0);
    for v in v0.saturating_sub(half_window)..=(v0 + half_window).min(h - 1) {
        for u in u0.saturating_sub(half_window)..=(u0 + half_window).min(w - 1) {
            let x = gated(u, v);
            su += x * u as f64;
            sv += x * v as f64;
            total += x;
        }
    }
    (su / total, sv / total)
}

/// Output of the late-fusion baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct LateFusionOutput {
    /// estimated pose
    pub pose: RigidTransform,
    /// triangulated keypoints; `None` where detection or triangulation failed
    pub keypoints: Vec<Option<Vec3>>,
    /// hypotheses of the solve over the surviving keypoints
    pub hypotheses: HypothesisSet,
}

/// Detects each keypoint in both views by 2D soft-argmax on the finest
/// level, triangulates the pairs and solves the pose over the survivors.
pub fn run_late_fusion(inputs: &SceneInputs<'_>, cfg: &PipelineConfig) -> Result<LateFusionOutput> {
    let n = inputs.model_keypoints.len();
    let (ref_map, query_map) = match (inputs.ref_levels.first(), inputs.query_levels.first()) {
        (Some(r), Some(q)) => (r, q),
        _ => return Err(Error::InvalidParameter("no feature levels")),
    };
    if ref_map.channels() < n || query_map.channels() < n {
        return Err(Error::ChannelMismatch {
            expected: n,
            found: ref_map.channels().min(query_map.channels()),
        });
    }
    let k = inputs.pair.intrinsics();
    let to_image = |map: &FeatureMap, (u, v): (f64, f64)| {
        let sx = f64::from(k.width()) / map.width() as f64;
        let sy = f64::from(k.height()) / map.height() as f64;
        ((u + 0.5) * sx - 0.5, (v + 0.5) * sy - 0.5)
    };

    let mut keypoints = Vec::with_capacity(n);
    for i in 0..n {
        let a = soft_argmax_2d(ref_map, i, cfg.window_px);
        let b = soft_argmax_2d(query_map, i, cfg.window_px);
        let point = match triangulate(to_image(ref_map, a), to_image(query_map, b), inputs.pair) {
            Ok(p) => Some(p),
            Err(Error::DegenerateRays { .. }) => None,
            Err(e) => return Err(e),
        };
        keypoints.push(point);
    }

    let (model, scene): (Vec<Vec3>, Vec<Vec3>) = inputs
        .model_keypoints
        .iter()
        .zip(&keypoints)
        .filter_map(|(m, p)| p.map(|p| (*m, p)))
        .unzip();
    let correspondences = Correspondences::new(model, scene)?;
    let (pose, hypotheses) = cfg.solver_mode.solve(&correspondences, &cfg.solver)?;
    Ok(LateFusionOutput {
        pose,
        keypoints,
        hypotheses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn single_pixel_mask_lands_on_optical_axis() {
        let mut m = FeatureMap::zeros(64, 48, 1);
        m.mask_mut()[24 * 64 + 32] = 1.0;
        let g = initial_guess(&m, &k(), &RigidTransform::identity(), 0.8).unwrap();
        assert_abs_diff_eq!(g, Vec3::new(0.0, 0.0, 0.8), epsilon = 1e-15);
    }

    #[test]
    fn square_mask_centroid() {
        let mut m = FeatureMap::zeros(64, 48, 1);
        for v in 10..20 {
            for u in 40..50 {
                m.mask_mut()[v * 64 + u] = 1.0;
            }
        }
        let g = initial_guess(&m, &k(), &RigidTransform::identity(), 1.0).unwrap();
        assert_abs_diff_eq!(g, unproject_pixel(44.5, 14.5, 1.0, &k()).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn guess_is_expressed_in_world_frame() {
        let mut m = FeatureMap::zeros(64, 48, 1);
        m.mask_mut()[24 * 64 + 32] = 1.0;
        let cam_from_world = RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0));
        let g = initial_guess(&m, &k(), &cam_from_world, 0.8).unwrap();
        assert_abs_diff_eq!(g, Vec3::new(-0.1, 0.0, 0.8), epsilon = 1e-15);
    }

    #[test]
    fn low_resolution_mask_maps_to_full_image() {
        let mut m = FeatureMap::zeros(16, 12, 1);
        m.mask_mut()[6 * 16 + 8] = 1.0;
        let g = initial_guess(&m, &k(), &RigidTransform::identity(), 1.0).unwrap();
        // Pixel (8, 6) at quarter resolution covers full-res (33.5, 25.5).
        assert_abs_diff_eq!(g, unproject_pixel(33.5, 25.5, 1.0, &k()).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let m = FeatureMap::zeros(64, 48, 1);
        assert_eq!(initial_guess(&m, &k(), &RigidTransform::identity(), 0.8), Err(Error::EmptyMask));
    }

    fn tetra_keypoints() -> Vec<Vec3> {
        vec![
            Vec3::zeros(),
            Vec3::new(0.05, 0.0, 0.0),
            Vec3::new(0.0, 0.05, 0.0),
            Vec3::new(0.0, 0.0, 0.05),
        ]
    }

    #[test]
    fn zero_features_give_flagged_center_readouts() {
        let pair = ViewPair::new(
            k(),
            RigidTransform::identity(),
            RigidTransform::from_translation(Vec3::new(-0.05, 0.0, 0.0)),
        );
        let zeros = [FeatureMap::zeros(64, 48, 4)];
        let kps = tetra_keypoints();
        let inputs = SceneInputs {
            pair: &pair,
            ref_levels: &zeros,
            query_levels: &zeros,
            model_keypoints: &kps,
            model_center: Vec3::zeros(),
            model_diameter: 0.07,
            prior_depth: 0.8,
            ground_truth: None,
        };
        let cfg = PipelineConfig::default();
        let center = Vec3::new(0.0, 0.0, 0.8);
        let out = run_level(center, 0.02, Vec3::repeat(0.1), &inputs, &cfg).unwrap();
        for (kp, low) in out.keypoints.iter().zip(&out.low_confidence) {
            assert_abs_diff_eq!(kp.position, center, epsilon = 1e-12);
            assert!(*low);
        }
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            fine_cell: 0.02,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn soft_argmax_2d_recovers_symmetric_blob() {
        let mut m = FeatureMap::zeros(40, 30, 1);
        m.mask_mut().fill(1.0);
        let (cu, cv) = (17.3, 11.6);
        for v in 0..30 {
            for u in 0..40 {
                let r2 = (u as f64 - cu).powi(2) + (v as f64 - cv).powi(2);
                m.data_mut()[v * 40 + u] = (-r2 / 18.0).exp() as f32;
            }
        }
        let (u, v) = soft_argmax_2d(&m, 0, 12);
        assert!((u - cu).abs() < 0.05 && (v - cv).abs() < 0.05, "{u} {v}");
        assert_eq!(soft_argmax_2d(&FeatureMap::zeros(4, 4, 1), 0, 2), (1.5, 1.5));
    }
}
