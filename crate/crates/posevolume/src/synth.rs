//! Synthetic two-view scenes and oracle feature maps standing in for the
//! trained 2D extractor.

use nalgebra::{Quaternion, Rotation3, Unit, UnitQuaternion};
use posevolume_core::geometry::{project_point, unproject_pixel};
use posevolume_core::metrics::ModelPoints;
use posevolume_core::pipeline::SceneInputs;
use posevolume_core::volume::FeatureMap;
use posevolume_core::{CameraIntrinsics, Mat3, RigidTransform, Vec3, ViewPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{select_keypoints, ModelSource};

/// Placement attempts before a scene is declared unplaceable.
pub const MAX_ATTEMPTS: usize = 100;

/// Occlusion levels cycled through by an occlusion sweep.
pub const OCCLUSION_SWEEP: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

const FRUSTUM_MARGIN_PX: f64 = 8.0;
const MAX_QUERY_TILT_DEG: f64 = 2.0;
const CENTER_REGION: (f64, f64) = (0.3, 0.7);

/// Pinhole camera shared by both views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// focal length x, pixels
    pub fx_px: f64,
    /// focal length y, pixels
    pub fy_px: f64,
    /// principal point x, pixels
    pub cx_px: f64,
    /// principal point y, pixels
    pub cy_px: f64,
    /// image width
    pub width_px: u32,
    /// image height
    pub height_px: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx_px: 572.4114,
            fy_px: 573.57043,
            cx_px: 325.2611,
            cy_px: 242.04899,
            width_px: 640,
            height_px: 480,
        }
    }
}

impl CameraConfig {
    /// Validated intrinsics.
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::new(
            self.fx_px,
            self.fy_px,
            self.cx_px,
            self.cy_px,
            self.width_px,
            self.height_px,
        )?)
    }
}

/// Scene sampling and oracle parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// root of all randomness
    pub seed: u64,
    /// keypoints per object, centroid included
    pub n_keypoints: usize,
    /// distance between the two camera centers
    pub baseline_m: f64,
    /// std of the 2D response jitter
    pub noise_px: f64,
    /// probability a response is relocated uniformly in the image
    pub outlier_rate: f64,
    /// target fraction of model points hidden in the reference view
    pub occlusion_fraction: f64,
    /// depth used to initialize the pipeline
    pub prior_depth_m: f64,
    /// object depths are drawn uniformly within ± this of the prior
    pub depth_spread_m: f64,
    /// object model
    pub model: ModelSource,
    /// camera intrinsics
    pub camera: CameraConfig,
    /// std of the 2D Gaussian responses, in pixels of each level
    pub response_sigma_px: f64,
    /// splat radius used to render the silhouette mask
    pub silhouette_radius_px: f64,
    /// downsampling factor of the second feature level, 1 disables it
    pub coarse_level_factor: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_keypoints: 9,
            baseline_m: 0.168,
            noise_px: 0.0,
            outlier_rate: 0.0,
            occlusion_fraction: 0.0,
            prior_depth_m: 0.8,
            depth_spread_m: 0.1,
            model: ModelSource::Blob,
            camera: CameraConfig::default(),
            response_sigma_px: 3.0,
            silhouette_radius_px: 3.0,
            coarse_level_factor: 4,
        }
    }
}

impl SynthConfig {
    /// Check ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_keypoints < 4 {
            return bad("n_keypoints must be at least 4");
        }
        if !(self.baseline_m >= 0.0 && self.baseline_m.is_finite()) {
            return bad("baseline_m must be finite and non-negative");
        }
        if !(self.noise_px >= 0.0 && self.noise_px.is_finite()) {
            return bad("noise_px must be finite and non-negative");
        }
        if !unit(self.outlier_rate) || !unit(self.occlusion_fraction) {
            return bad("outlier_rate and occlusion_fraction must lie in [0, 1]");
        }
        if !(self.prior_depth_m > 0.0 && self.depth_spread_m >= 0.0 && self.depth_spread_m < self.prior_depth_m) {
            return bad("need prior_depth_m > 0 and 0 <= depth_spread_m < prior_depth_m");
        }
        if !(self.response_sigma_px > 0.0 && self.silhouette_radius_px >= 0.0) {
            return bad("response_sigma_px must be positive");
        }
        if self.coarse_level_factor == 0 {
            return bad("coarse_level_factor must be at least 1");
        }
        self.camera.intrinsics()?;
        Ok(())
    }
}

/// Axis-aligned rectangle in reference-image pixels, `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    /// left edge
    pub x0: f64,
    /// top edge
    pub y0: f64,
    /// right edge (exclusive)
    pub x1: f64,
    /// bottom edge (exclusive)
    pub y1: f64,
}

impl Occluder {
    /// True when pixel coordinate `(u, v)` is covered.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x0 && u < self.x1 && v >= self.y0 && v < self.y1
    }
}

/// One sampled scene. The world frame is the reference camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// position in the benchmark, also the RNG stream
    pub index: u64,
    /// effective configuration
    pub config: SynthConfig,
    /// object-to-world ground truth
    pub pose: RigidTransform,
    /// cameras
    pub pair: ViewPair,
    /// reference-view occluder
    pub occluder: Option<Occluder>,
    /// fraction of model points occluded or out of frame in the reference view
    pub invisible_fraction: f64,
}

impl Scene {
    /// Stable identifier, `scene_0007`.
    pub fn id(&self) -> String {
        scene_id(self.index)
    }
}

/// Identifier of scene `index`.
pub fn scene_id(index: u64) -> String {
    format!("scene_{index:04}")
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index);
    rng
}

fn feature_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index + 1);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let q = Quaternion::new(normal(rng), normal(rng), normal(rng), normal(rng));
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let d = Vec3::new(normal(rng), normal(rng), normal(rng));
        let n = d.norm();
        if n > 1e-9 {
            return d / n;
        }
    }
}

/// Random unit vector orthogonal to `sight`.
fn tangent_direction(rng: &mut ChaCha8Rng, sight: &Vec3) -> Vec3 {
    let a = sight.normalize();
    loop {
        let d = random_direction(rng);
        let t = d - a * a.dot(&d);
        let n = t.norm();
        if n > 1e-6 {
            return t / n;
        }
    }
}

fn in_view(points: &[Vec3], cam: &RigidTransform, k: &CameraIntrinsics) -> bool {
    let (w, h) = (f64::from(k.width()), f64::from(k.height()));
    points.iter().all(|p| match project_point(&cam.transform_point(p), k) {
        Ok(pr) => {
            pr.u >= FRUSTUM_MARGIN_PX
                && pr.u < w - 1.0 - FRUSTUM_MARGIN_PX
                && pr.v >= FRUSTUM_MARGIN_PX
                && pr.v < h - 1.0 - FRUSTUM_MARGIN_PX
        }
        Err(_) => false,
    })
}

fn in_image(u: f64, v: f64, k: &CameraIntrinsics) -> bool {
    u >= -0.5 && u < f64::from(k.width()) - 0.5 && v >= -0.5 && v < f64::from(k.height()) - 0.5
}

/// Sample an object pose, a query camera and an occluder for scene `index`.
pub fn generate_scene(cfg: &SynthConfig, index: u64, model: &ModelPoints) -> Result<Scene> {
    cfg.validate()?;
    let k = cfg.camera.intrinsics()?;
    let (w, h) = (f64::from(k.width()), f64::from(k.height()));
    let mut rng = scene_rng(cfg.seed, index);
    let centroid = model.centroid();

    for _ in 0..MAX_ATTEMPTS {
        let rotation = random_rotation(&mut rng);
        let u = w * rng.random_range(CENTER_REGION.0..CENTER_REGION.1);
        let v = h * rng.random_range(CENTER_REGION.0..CENTER_REGION.1);
        let depth = cfg.prior_depth_m + cfg.depth_spread_m * rng.random_range(-1.0..=1.0);
        let center = unproject_pixel(u, v, depth, &k)?;
        let pose = RigidTransform::new(rotation, center - rotation * centroid)?;

        let direction = tangent_direction(&mut rng, &center);
        let tilt_axis = random_direction(&mut rng);
        let tilt = MAX_QUERY_TILT_DEG.to_radians() * rng.random::<f64>();
        let side: u8 = rng.random_range(0..4);

        let query_center = direction * cfg.baseline_m;
        let world_from_query = if cfg.baseline_m > 0.0 {
            let a = center.normalize();
            let b = (center - query_center).normalize();
            let align = Rotation3::rotation_between(&a, &b).unwrap_or_else(Rotation3::identity);
            align * Rotation3::from_axis_angle(&Unit::new_normalize(tilt_axis), tilt)
        } else {
            Rotation3::identity()
        };
        let r = world_from_query.into_inner().transpose();
        let query_from_world = RigidTransform::new(r, -(r * query_center))?;
        let ref_from_world = RigidTransform::identity();

        let world: Vec<Vec3> = model.points().iter().map(|p| pose.transform_point(p)).collect();
        if !in_view(&world, &ref_from_world, &k) || !in_view(&world, &query_from_world, &k) {
            continue;
        }
        let pair = ViewPair::new(k, ref_from_world, query_from_world);
        let projected: Vec<(f64, f64)> = world
            .iter()
            .map(|p| {
                let pr = project_point(p, &k).expect("checked in view");
                (pr.u, pr.v)
            })
            .collect();
        let occluder = place_occluder(&projected, cfg.occlusion_fraction, side, w, h);
        let invisible_fraction = invisible_fraction(&projected, occluder.as_ref(), &k);
        return Ok(Scene {
            index,
            config: cfg.clone(),
            pose,
            pair,
            occluder,
            invisible_fraction,
        });
    }
    Err(Error::Unplaceable {
        attempts: MAX_ATTEMPTS,
    })
}

/// Band entering from image side `side` (0 left, 1 right, 2 top, 3 bottom)
/// that covers the nearest `round(fraction·M)` projected points.
fn place_occluder(projected: &[(f64, f64)], fraction: f64, side: u8, w: f64, h: f64) -> Option<Occluder> {
    let m = projected.len();
    let count = (fraction * m as f64).round() as usize;
    if count == 0 {
        return None;
    }
    let full = Occluder {
        x0: -0.5,
        y0: -0.5,
        x1: w - 0.5,
        y1: h - 0.5,
    };
    if count >= m {
        return Some(full);
    }
    let mut coords: Vec<f64> = projected
        .iter()
        .map(|&(u, v)| match side {
            0 => u,
            1 => -u,
            2 => v,
            _ => -v,
        })
        .collect();
    coords.sort_by(f64::total_cmp);
    let edge = 0.5 * (coords[count - 1] + coords[count]);
    Some(match side {
        0 => Occluder { x1: edge, ..full },
        1 => Occluder { x0: -edge, ..full },
        2 => Occluder { y1: edge, ..full },
        _ => Occluder { y0: -edge, ..full },
    })
}

/// Fraction of projected points inside the occluder or outside the image.
pub fn invisible_fraction(projected: &[(f64, f64)], occluder: Option<&Occluder>, k: &CameraIntrinsics) -> f64 {
    if projected.is_empty() {
        return 0.0;
    }
    let hidden = projected
        .iter()
        .filter(|&&(u, v)| !in_image(u, v, k) || occluder.is_some_and(|o| o.contains(u, v)))
        .count();
    hidden as f64 / projected.len() as f64
}

/// Per-view feature pyramids, finest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFeatures {
    /// reference view
    pub ref_levels: Vec<FeatureMap>,
    /// query view
    pub query_levels: Vec<FeatureMap>,
}

struct Canvas {
    factor: usize,
    map: FeatureMap,
}

fn level_dims(k: &CameraIntrinsics, factor: usize) -> (usize, usize) {
    ((k.width() as usize / factor).max(1), (k.height() as usize / factor).max(1))
}

fn splat_gaussian(canvas: &mut Canvas, channel: usize, center: (f64, f64), sigma: f64, occluder: Option<&Occluder>) {
    let s = canvas.factor as f64;
    let (cu, cv) = ((center.0 + 0.5) / s - 0.5, (center.1 + 0.5) / s - 0.5);
    let reach = 4.0 * sigma;
    let (w, h, c) = (canvas.map.width(), canvas.map.height(), canvas.map.channels());
    let lo = |x: f64| (x - reach).floor().max(0.0) as usize;
    let hi = |x: f64, n: usize| ((x + reach).ceil().max(-1.0) as isize).min(n as isize - 1);
    let (u1, v1) = (hi(cu, w), hi(cv, h));
    if u1 < 0 || v1 < 0 {
        return;
    }
    let data = canvas.map.data_mut();
    for v in lo(cv)..=v1 as usize {
        for u in lo(cu)..=u1 as usize {
            let r2 = (u as f64 - cu).powi(2) + (v as f64 - cv).powi(2);
            if r2 > reach * reach {
                continue;
            }
            if let Some(o) = occluder {
                if o.contains((u as f64 + 0.5) * s - 0.5, (v as f64 + 0.5) * s - 0.5) {
                    continue;
                }
            }
            let x = (-r2 / (2.0 * sigma * sigma)).exp() as f32;
            let slot = &mut data[(v * w + u) * c + channel];
            *slot = slot.max(x);
        }
    }
}

fn silhouette(points: &[(f64, f64)], radius: f64, w: usize, h: usize, occluder: Option<&Occluder>) -> Vec<f32> {
    let mut mask = vec![0.0f32; w * h];
    let r = radius.max(0.0);
    for &(pu, pv) in points {
        let u0 = (pu - r).floor().max(0.0) as usize;
        let v0 = (pv - r).floor().max(0.0) as usize;
        let u1 = ((pu + r).ceil() as usize).min(w - 1);
        let v1 = ((pv + r).ceil() as usize).min(h - 1);
        for v in v0..=v1 {
            for u in u0..=u1 {
                if (u as f64 - pu).powi(2) + (v as f64 - pv).powi(2) <= r * r + 0.25 {
                    mask[v * w + u] = 1.0;
                }
            }
        }
    }
    if let Some(o) = occluder {
        for v in 0..h {
            for u in 0..w {
                if o.contains(u as f64, v as f64) {
                    mask[v * w + u] = 0.0;
                }
            }
        }
    }
    mask
}

fn downsample_mask(mask: &[f32], w: usize, h: usize, factor: usize) -> Vec<f32> {
    let (lw, lh) = ((w / factor).max(1), (h / factor).max(1));
    let mut out = vec![0.0f32; lw * lh];
    for y in 0..lh {
        for x in 0..lw {
            let mut acc = 0.0f32;
            let mut n = 0u32;
            for v in y * factor..((y + 1) * factor).min(h) {
                for u in x * factor..((x + 1) * factor).min(w) {
                    acc += mask[v * w + u];
                    n += 1;
                }
            }
            out[y * lw + x] = acc / n.max(1) as f32;
        }
    }
    out
}

/// Oracle responses for both views: one Gaussian channel per keypoint plus
/// the silhouette mask, at full resolution and optionally one coarser level.
///
/// A keypoint whose true reference projection falls inside the occluder
/// leaves its reference channel empty.
pub fn oracle_features(scene: &Scene, keypoints: &[Vec3], model: &ModelPoints) -> Result<SceneFeatures> {
    let cfg = &scene.config;
    let k = *scene.pair.intrinsics();
    let mut rng = feature_rng(cfg.seed, scene.index);
    let n = keypoints.len();
    let factors: Vec<usize> = if cfg.coarse_level_factor > 1 {
        vec![1, cfg.coarse_level_factor]
    } else {
        vec![1]
    };
    let world_kp: Vec<Vec3> = keypoints.iter().map(|m| scene.pose.transform_point(m)).collect();
    let world_pts: Vec<Vec3> = model.points().iter().map(|p| scene.pose.transform_point(p)).collect();
    let (w, h) = (k.width() as usize, k.height() as usize);

    let mut views = Vec::with_capacity(2);
    for (view, cam) in [scene.pair.ref_from_world(), scene.pair.query_from_world()].into_iter().enumerate() {
        let occluder = if view == 0 { scene.occluder.as_ref() } else { None };
        let mut canvases: Vec<Canvas> = factors
            .iter()
            .map(|&f| {
                let (lw, lh) = level_dims(&k, f);
                Canvas {
                    factor: f,
                    map: FeatureMap::zeros(lw, lh, n),
                }
            })
            .collect();
        for (i, p) in world_kp.iter().enumerate() {
            let pr = project_point(&cam.transform_point(p), &k)?;
            let jitter = (normal(&mut rng) * cfg.noise_px, normal(&mut rng) * cfg.noise_px);
            let is_outlier = rng.random::<f64>() < cfg.outlier_rate;
            let relocated = (
                rng.random_range(-0.5..f64::from(k.width()) - 0.5),
                rng.random_range(-0.5..f64::from(k.height()) - 0.5),
            );
            if occluder.is_some_and(|o| o.contains(pr.u, pr.v)) {
                continue;
            }
            let center = if is_outlier {
                relocated
            } else {
                (pr.u + jitter.0, pr.v + jitter.1)
            };
            for canvas in &mut canvases {
                splat_gaussian(canvas, i, center, cfg.response_sigma_px, occluder);
            }
        }
        let projected: Vec<(f64, f64)> = world_pts
            .iter()
            .filter_map(|p| project_point(&cam.transform_point(p), &k).ok().map(|pr| (pr.u, pr.v)))
            .collect();
        let mask = silhouette(&projected, cfg.silhouette_radius_px, w, h, occluder);
        let mut levels = Vec::with_capacity(canvases.len());
        for canvas in canvases {
            let (lw, lh) = (canvas.map.width(), canvas.map.height());
            let level_mask = if canvas.factor == 1 {
                mask.clone()
            } else {
                downsample_mask(&mask, w, h, canvas.factor)
            };
            let data = canvas.map.data().to_vec();
            levels.push(FeatureMap::new(lw, lh, n, data, level_mask)?);
        }
        views.push(levels);
    }
    let query_levels = views.pop().expect("two views");
    let ref_levels = views.pop().expect("two views");
    Ok(SceneFeatures {
        ref_levels,
        query_levels,
    })
}

/// A model with its keypoints and the config that generates scenes for it.
#[derive(Debug, Clone)]
pub struct Benchmark {
    /// base configuration
    pub config: SynthConfig,
    /// object model
    pub model: ModelPoints,
    /// model-frame keypoints, centroid first
    pub keypoints: Vec<Vec3>,
}

impl Benchmark {
    /// Load the model and select keypoints.
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model.load()?;
        let keypoints = select_keypoints(&model, config.n_keypoints)?;
        Ok(Self {
            config,
            model,
            keypoints,
        })
    }

    /// Scene `index` under the base configuration.
    pub fn scene(&self, index: u64) -> Result<Scene> {
        generate_scene(&self.config, index, &self.model)
    }

    /// Scene `index` with a different effective configuration.
    pub fn scene_with(&self, cfg: &SynthConfig, index: u64) -> Result<Scene> {
        generate_scene(cfg, index, &self.model)
    }

    /// Oracle features for a scene of this benchmark.
    pub fn features(&self, scene: &Scene) -> Result<SceneFeatures> {
        oracle_features(scene, &self.keypoints, &self.model)
    }

    /// Pipeline inputs with ground truth attached.
    pub fn inputs<'a>(&'a self, scene: &'a Scene, features: &'a SceneFeatures) -> SceneInputs<'a> {
        SceneInputs {
            pair: &scene.pair,
            ref_levels: &features.ref_levels,
            query_levels: &features.query_levels,
            model_keypoints: &self.keypoints,
            model_center: self.keypoints[0],
            model_diameter: self.model.diameter(),
            prior_depth: scene.config.prior_depth_m,
            ground_truth: Some(scene.pose),
        }
    }
}
