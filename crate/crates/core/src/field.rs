//! Keypoint probability fields: target heatmaps, softmax normalization, KL
//! divergence, keypoint readout and the smooth-L1 keypoint loss.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::ComplexField;

use crate::geometry::RigidTransform;
use crate::volume::{trilinear_weights, GridSpec};
use crate::{Error, Result, Vec3};

/// Floor applied to the target distribution inside the KL logarithm.
pub const KL_FLOOR: f64 = 1e-12;

/// Half-width, in cells, of the full-weight readout window.
pub const READOUT_HALF_WINDOW: f64 = 2.0;

/// Tolerance on the total mass of a normalized grid.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// One scalar per cell of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarGrid {
    /// Wraps values laid out in the grid's cell order.
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.num_cells() {
            return Err(Error::ShapeMismatch {
                expected: spec.num_cells(),
                found: values.len(),
            });
        }
        Ok(Self { spec, values })
    }

    /// Constant grid.
    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Self {
            values: vec![value; spec.num_cells()],
            spec,
        }
    }

    /// Grid geometry.
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Cell values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable cell values.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Total mass.
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// True when all values are non-negative and sum to one.
    pub fn is_normalized(&self) -> bool {
        self.values.iter().all(|&x| x >= 0.0) && (self.sum() - 1.0).abs() <= NORMALIZATION_TOLERANCE
    }

    /// Index of the largest value (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.values.iter().enumerate() {
            if x > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Trilinear evaluation of the field at `p`; zero outside the grid.
    pub fn sample(&self, p: &Vec3) -> f64 {
        trilinear_weights(&self.spec, p)
            .map(|w| w.iter().map(|&(cell, w)| w * self.values[cell]).sum())
            .unwrap_or(0.0)
    }

    /// Sums of the grid along each axis: `[x-marginal, y-marginal, z-marginal]`.
    pub fn marginals(&self) -> [Vec<f64>; 3] {
        let [nx, ny, nz] = self.spec.dims();
        let mut m = [vec![0.0; nx], vec![0.0; ny], vec![0.0; nz]];
        for (i, &x) in self.values.iter().enumerate() {
            let [ix, iy, iz] = self.spec.coords(i);
            m[0][ix] += x;
            m[1][iy] += x;
            m[2][iz] += x;
        }
        m
    }
}

/// Per-keypoint Gaussian targets around the posed model keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetHeatmaps {
    keypoints: Vec<Vec3>,
    pose: RigidTransform,
    sigmas: Vec<f64>,
}

impl TargetHeatmaps {
    /// Requires at least four keypoints and one positive σ per keypoint.
    pub fn new(keypoints: Vec<Vec3>, pose: RigidTransform, sigmas: Vec<f64>) -> Result<Self> {
        if keypoints.len() < 4 {
            return Err(Error::TooFewPoints {
                needed: 4,
                got: keypoints.len(),
            });
        }
        if sigmas.len() != keypoints.len() {
            return Err(Error::CountMismatch {
                left: keypoints.len(),
                right: sigmas.len(),
            });
        }
        if !sigmas.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter("heatmap sigmas must be positive"));
        }
        Ok(Self { keypoints, pose, sigmas })
    }

    /// Same σ for every keypoint.
    pub fn uniform(keypoints: Vec<Vec3>, pose: RigidTransform, sigma: f64) -> Result<Self> {
        let n = keypoints.len();
        Self::new(keypoints, pose, vec![sigma; n])
    }

    /// Number of keypoints.
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    /// Always false; at least four keypoints exist.
    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Model-frame keypoints.
    pub fn keypoints(&self) -> &[Vec3] {
        &self.keypoints
    }

    /// Target pose.
    pub fn pose(&self) -> &RigidTransform {
        &self.pose
    }

    /// Per-keypoint σ, meters.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// World position of keypoint `i` under the target pose.
    pub fn world_keypoint(&self, i: usize) -> Vec3 {
        self.pose.transform_point(&self.keypoints[i])
    }
}

/// Normalized Gaussian heatmap of keypoint `i` sampled at the cell centers.
pub fn rasterize_heatmap(target: &TargetHeatmaps, spec: &GridSpec, i: usize) -> Result<ScalarGrid> {
    let mu = target.world_keypoint(i);
    if !spec.contains(&mu) {
        return Err(Error::KeypointOutsideGrid { index: i });
    }
    let inv = 1.0 / (2.0 * target.sigmas[i] * target.sigmas[i]);
    let logits: Vec<f64> = (0..spec.num_cells())
        .map(|c| -(spec.cell_center_at(c) - mu).norm_squared() * inv)
        .collect();
    Ok(softmax(*spec, &logits))
}

/// Softmax over all cells.
pub fn normalize_field(raw: &ScalarGrid) -> Result<ScalarGrid> {
    if raw.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(softmax(raw.spec, &raw.values))
}

fn softmax(spec: GridSpec, logits: &[f64]) -> ScalarGrid {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = values.iter().sum();
    for v in &mut values {
        *v /= total;
    }
    ScalarGrid { spec, values }
}

/// `Σ Qᵛ ln(Qᵛ / max(Qᵏ, 1e-12))` over all cells, with `0·ln 0 = 0`.
///
/// Cells where the two distributions agree contribute exactly zero, so
/// `KL(Q‖Q) = 0` holds bit-for-bit even where `Q` is below the floor.
pub fn kl_divergence(field: &ScalarGrid, target: &ScalarGrid) -> Result<f64> {
    if !field.spec.same_cells(&target.spec) || field.values.len() != target.values.len() {
        return Err(Error::SpecMismatch);
    }
    let kl: f64 = field
        .values
        .iter()
        .zip(&target.values)
        .filter(|&(&qv, &qk)| qv > 0.0 && qv != qk)
        .map(|(&qv, &qk)| qv * (qv / qk.max(KL_FLOOR)).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Per-keypoint normalized grids over one shared spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    spec: GridSpec,
    grids: Vec<ScalarGrid>,
}

impl ProbabilityVolume {
    /// Checks that every grid shares `spec` and is normalized.
    pub fn new(spec: GridSpec, grids: Vec<ScalarGrid>) -> Result<Self> {
        for g in &grids {
            if !g.spec.same_cells(&spec) {
                return Err(Error::SpecMismatch);
            }
            if !g.is_normalized() {
                return Err(Error::InvalidParameter("probability grid is not normalized"));
            }
        }
        Ok(Self { spec, grids })
    }

    /// Grid geometry.
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Per-keypoint grids.
    pub fn grids(&self) -> &[ScalarGrid] {
        &self.grids
    }

    /// Mean per-keypoint KL divergence against `targets`.
    pub fn mean_kl(&self, targets: &[ScalarGrid]) -> Result<f64> {
        if targets.len() != self.grids.len() {
            return Err(Error::CountMismatch {
                left: self.grids.len(),
                right: targets.len(),
            });
        }
        let mut total = 0.0;
        for (q, t) in self.grids.iter().zip(targets) {
            total += kl_divergence(q, t)?;
        }
        Ok(total / self.grids.len().max(1) as f64)
    }
}

/// A 3D keypoint read out of a probability grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointEstimate {
    /// world position, meters
    pub position: Vec3,
    /// product of the three marginal maxima
    pub confidence: f64,
}

/// Reads a keypoint from a normalized grid by marginal soft-argmax.
///
/// Each axis marginal is searched for its maximum, refined by a three-point
/// parabola, and the probability-weighted mean index is taken over the
/// cells within ±2 of that peak (cells between 2 and 3 cells away get a
/// linearly tapered weight). A perfectly flat marginal reads out as its mean,
/// i.e. the grid center along that axis.
pub fn extract_keypoint(prob: &ScalarGrid) -> KeypointEstimate {
    let marginals = prob.marginals();
    let mut idx = [0.0; 3];
    let mut confidence = 1.0;
    for (a, m) in marginals.iter().enumerate() {
        let (estimate, peak) = soft_argmax_1d(m);
        idx[a] = estimate;
        confidence *= peak;
    }
    KeypointEstimate {
        position: prob.spec.position(idx),
        confidence,
    }
}

/// Windowed soft-argmax of a non-negative 1D profile. Returns the fractional
/// index and the profile maximum.
pub fn soft_argmax_1d(m: &[f64]) -> (f64, f64) {
    let n = m.len();
    let max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = m.iter().copied().fold(f64::INFINITY, f64::min);
    if n == 0 || !(max > min) {
        return ((n as f64 - 1.0) * 0.5, max.max(0.0));
    }
    // Ties go to the maximal cell closest to the middle of the axis.
    let mid = (n as f64 - 1.0) * 0.5;
    let peak = (0..n)
        .filter(|&i| m[i] == max)
        .min_by(|&a, &b| (a as f64 - mid).abs().total_cmp(&(b as f64 - mid).abs()))
        .unwrap_or(0);

    let mut center = peak as f64;
    if peak > 0 && peak + 1 < n {
        let (l, c, r) = (m[peak - 1], m[peak], m[peak + 1]);
        let curvature = l - 2.0 * c + r;
        if curvature < 0.0 {
            center += (0.5 * (l - r) / curvature).clamp(-0.5, 0.5);
        }
    }

    let lo = (center - READOUT_HALF_WINDOW - 1.0).ceil().max(0.0) as usize;
    let hi = ((center + READOUT_HALF_WINDOW + 1.0).floor() as usize).min(n - 1);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &p) in m.iter().enumerate().take(hi + 1).skip(lo) {
        let w = (READOUT_HALF_WINDOW + 1.0 - (i as f64 - center).abs()).clamp(0.0, 1.0) * p;
        num += w * i as f64;
        den += w;
    }
    let estimate = if den > 0.0 { num / den } else { center };
    (estimate, max)
}

/// Smooth-L1 penalty with transition `beta`.
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

/// Smooth-L1 keypoint loss (β = 1 m): summed over coordinates, averaged over
/// keypoints.
pub fn keypoint_loss(predicted: &[Vec3], target: &[Vec3]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::CountMismatch {
            left: predicted.len(),
            right: target.len(),
        });
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).iter().map(|&d| smooth_l1(d, 1.0)).sum::<f64>())
        .sum();
    Ok(total / predicted.len() as f64)
}
