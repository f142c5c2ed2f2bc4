//! Regular 3D grids and the lifting of 2D feature maps into them.
//!
//! Cells are indexed x-fastest: `index = ix + nx·(iy + ny·iz)`. Grid axes are
//! given by a rotation (`axes`, world-from-grid); the pipeline aligns them with
//! the reference camera.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::ComplexField;

use crate::geometry::{project_point, CameraIntrinsics, RigidTransform, ViewPair};
use crate::{Error, Mat3, Result, Vec3};

/// Default cap on the number of cells of a grid (256³).
pub const DEFAULT_MAX_CELLS: usize = 256 * 256 * 256;

/// Geometry of a regular grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    center: Vec3,
    dims: [usize; 3],
    cell_size: Vec3,
    axes: Mat3,
}

/// Builds a cubic-cell grid covering `center ± half_range`.
pub fn build_grid(center: Vec3, half_range: Vec3, cell_size: f64) -> Result<GridSpec> {
    GridSpec::covering(center, half_range, cell_size, DEFAULT_MAX_CELLS)
}

impl GridSpec {
    /// Grid with explicit dimensions; all dims must be ≥ 2 and all cell sizes
    /// positive.
    pub fn new(center: Vec3, dims: [usize; 3], cell_size: Vec3) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidRange("every grid dimension must be at least 2"));
        }
        if !cell_size.iter().all(|&c| c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidRange("cell sizes must be positive"));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            center,
            dims,
            cell_size,
            axes: Mat3::identity(),
        })
    }

    /// Grid with `ceil(2·half_range / cell_size)` cells per axis, rejected when
    /// the total exceeds `max_cells`.
    pub fn covering(center: Vec3, half_range: Vec3, cell_size: f64, max_cells: usize) -> Result<Self> {
        if !half_range.iter().all(|&h| h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidRange("half range must be positive"));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidRange("cell size must be positive"));
        }
        let mut dims = [0usize; 3];
        let mut total: f64 = 1.0;
        for (d, h) in dims.iter_mut().zip(half_range.iter()) {
            // 0.6 / 0.01 is 59.99999999999999 in binary; absorb that before ceil.
            let n = (2.0 * h / cell_size - 1e-9).ceil().max(2.0);
            total *= n;
            *d = n as usize;
        }
        if total > max_cells as f64 {
            return Err(Error::InvalidRange("grid exceeds the cell cap"));
        }
        Self::new(center, dims, Vec3::repeat(cell_size))
    }

    /// Same grid with its axes rotated by `axes` (world-from-grid).
    pub fn with_axes(mut self, axes: Mat3) -> Self {
        self.axes = axes;
        self
    }

    /// World position of the grid center.
    pub fn center(&self) -> &Vec3 {
        &self.center
    }

    /// Cell counts along the grid x, y, z axes.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Cell edge lengths, meters.
    pub fn cell_size(&self) -> &Vec3 {
        &self.cell_size
    }

    /// World-from-grid rotation.
    pub fn axes(&self) -> &Mat3 {
        &self.axes
    }

    /// Total number of cells.
    pub fn num_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Linear index of cell `(ix, iy, iz)`.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    /// Inverse of [`GridSpec::index`].
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let ix = index % self.dims[0];
        let rest = index / self.dims[0];
        [ix, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Offset of a (possibly fractional) index from the grid center, in grid
    /// axes.
    fn local_offset(&self, idx: [f64; 3]) -> Vec3 {
        Vec3::new(
            (idx[0] - (self.dims[0] as f64 - 1.0) * 0.5) * self.cell_size.x,
            (idx[1] - (self.dims[1] as f64 - 1.0) * 0.5) * self.cell_size.y,
            (idx[2] - (self.dims[2] as f64 - 1.0) * 0.5) * self.cell_size.z,
        )
    }

    /// World position at a fractional index.
    pub fn position(&self, idx: [f64; 3]) -> Vec3 {
        self.center + self.axes * self.local_offset(idx)
    }

    /// World position of a cell center.
    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        self.position([ix as f64, iy as f64, iz as f64])
    }

    /// World position of the cell with linear index `index`.
    pub fn cell_center_at(&self, index: usize) -> Vec3 {
        let [ix, iy, iz] = self.coords(index);
        self.cell_center(ix, iy, iz)
    }

    /// Continuous index of a world point (cell centers sit on integers).
    pub fn continuous_index(&self, p: &Vec3) -> [f64; 3] {
        let local = self.axes.transpose() * (p - self.center);
        core::array::from_fn(|a| local[a] / self.cell_size[a] + (self.dims[a] as f64 - 1.0) * 0.5)
    }

    /// True when `p` lies within the outer faces of the boundary cells.
    pub fn contains(&self, p: &Vec3) -> bool {
        let f = self.continuous_index(p);
        (0..3).all(|a| f[a] >= -0.5 && f[a] <= self.dims[a] as f64 - 0.5)
    }

    /// The cell containing `p`, if any.
    pub fn nearest_cell(&self, p: &Vec3) -> Option<[usize; 3]> {
        if !self.contains(p) {
            return None;
        }
        let f = self.continuous_index(p);
        Some(core::array::from_fn(|a| {
            (f[a].round().max(0.0) as usize).min(self.dims[a] - 1)
        }))
    }

    /// Half of the cell-space diagonal, the worst-case distance from a point
    /// inside the grid to its nearest cell center.
    pub fn half_cell_diagonal(&self) -> f64 {
        self.cell_size.norm() * 0.5
    }

    /// Whether two specs describe the same cells.
    pub fn same_cells(&self, other: &GridSpec) -> bool {
        self == other
    }
}

/// The eight trilinear interpolation weights of `p`, as `(cell index, weight)`.
///
/// Returns `None` outside the grid's outer bounds. Between the outermost cell
/// centers and the outer faces the index is clamped, so the weights always
/// form a partition of unity.
pub fn trilinear_weights(spec: &GridSpec, p: &Vec3) -> Option<[(usize, f64); 8]> {
    if !spec.contains(p) {
        return None;
    }
    let f = spec.continuous_index(p);
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let clamped = f[a].clamp(0.0, (spec.dims[a] - 1) as f64);
        let i0 = (clamped.floor() as usize).min(spec.dims[a] - 2);
        base[a] = i0;
        frac[a] = clamped - i0 as f64;
    }
    let mut out = [(0usize, 0.0f64); 8];
    for (corner, slot) in out.iter_mut().enumerate() {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
        let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
        let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
        *slot = (spec.index(base[0] + dx, base[1] + dy, base[2] + dz), wx * wy * wz);
    }
    Some(out)
}

/// A multi-channel 2D feature map with a per-pixel object mask.
///
/// Features are stored pixel-major with interleaved channels:
/// `data[(v·width + u)·channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    mask: Vec<f32>,
}

impl FeatureMap {
    /// Validates buffer lengths against the dimensions.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>, mask: Vec<f32>) -> Result<Self> {
        if width < 1 || height < 1 || channels < 1 {
            return Err(Error::InvalidParameter("feature map dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                expected: width * height * channels,
                found: data.len(),
            });
        }
        if mask.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                found: mask.len(),
            });
        }
        Ok(Self { width, height, channels, data, mask })
    }

    /// All-zero features with an all-zero mask.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            mask: vec![0.0; width * height],
        }
    }

    /// Width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Channels per pixel.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Raw feature buffer.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable raw feature buffer.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Mask buffer, row-major.
    pub fn mask(&self) -> &[f32] {
        &self.mask
    }

    /// Mutable mask buffer.
    pub fn mask_mut(&mut self) -> &mut [f32] {
        &mut self.mask
    }

    /// Feature vector of pixel `(u, v)`.
    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let start = (v * self.width + u) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Value of one channel at `(u, v)`.
    pub fn at(&self, u: usize, v: usize, channel: usize) -> f32 {
        self.data[(v * self.width + u) * self.channels + channel]
    }

    /// Bilinear sample of every channel at continuous pixel `(u, v)`.
    pub fn bilinear_sample(&self, u: f64, v: f64) -> Vec<f32> {
        let mut out = vec![0.0; self.channels];
        self.bilinear_sample_into(u, v, &mut out);
        out
    }

    /// Writes the bilinear sample into `out` (length = channels). Outside
    /// `[0, width−1] × [0, height−1]` the output is zero and `false` is
    /// returned.
    pub fn bilinear_sample_into(&self, u: f64, v: f64, out: &mut [f32]) -> bool {
        debug_assert_eq!(out.len(), self.channels);
        let Some(taps) = self.taps(u, v) else {
            out.fill(0.0);
            return false;
        };
        for (c, o) in out.iter_mut().enumerate() {
            *o = taps
                .iter()
                .map(|&(pixel, w)| w * f64::from(self.data[pixel * self.channels + c]))
                .sum::<f64>() as f32;
        }
        true
    }

    /// Bilinear sample of the mask; zero outside the image.
    pub fn sample_mask(&self, u: f64, v: f64) -> f32 {
        match self.taps(u, v) {
            Some(taps) => taps
                .iter()
                .map(|&(pixel, w)| w * f64::from(self.mask[pixel]))
                .sum::<f64>() as f32,
            None => 0.0,
        }
    }

    /// Four bilinear taps `(pixel index, weight)`, or `None` out of bounds.
    fn taps(&self, u: f64, v: f64) -> Option<[(usize, f64); 4]> {
        let (wmax, hmax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(u >= 0.0 && u <= wmax && v >= 0.0 && v <= hmax) {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        Some([
            (y0 * self.width + x0, (1.0 - fx) * (1.0 - fy)),
            (y0 * self.width + x1, fx * (1.0 - fy)),
            (y1 * self.width + x0, (1.0 - fx) * fy),
            (y1 * self.width + x1, fx * fy),
        ])
    }
}

/// Free-function form of [`FeatureMap::bilinear_sample`].
pub fn bilinear_sample(map: &FeatureMap, u: f64, v: f64) -> Vec<f32> {
    map.bilinear_sample(u, v)
}

/// Per-cell feature vectors lifted from two views.
///
/// `values[cell·channels + c]`; the first half of each vector comes from the
/// reference view, the second from the query view.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricVolume {
    spec: GridSpec,
    channels: usize,
    values: Vec<f32>,
}

impl GeometricVolume {
    /// Wraps an existing buffer, checking its length.
    pub fn from_parts(spec: GridSpec, channels: usize, values: Vec<f32>) -> Result<Self> {
        let expected = spec.num_cells() * channels;
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: values.len(),
            });
        }
        Ok(Self { spec, channels, values })
    }

    /// Grid geometry.
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Channels per cell.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Flat value buffer.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Feature vector of one cell.
    pub fn cell(&self, index: usize) -> &[f32] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    /// Trilinear interpolation of every channel at world point `p`; zeros
    /// outside the grid.
    pub fn trilinear_sample(&self, p: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        if let Some(weights) = trilinear_weights(&self.spec, p) {
            for (cell, w) in weights {
                for (o, &x) in out.iter_mut().zip(self.cell(cell)) {
                    *o += w * f64::from(x);
                }
            }
        }
        out
    }
}

/// Free-function form of [`GeometricVolume::trilinear_sample`].
pub fn trilinear_sample(volume: &GeometricVolume, p: &Vec3) -> Vec<f64> {
    volume.trilinear_sample(p)
}

/// Lifts one map per view into `spec`; see [`lift_pyramid`].
pub fn lift_features(
    spec: &GridSpec,
    ref_map: &FeatureMap,
    query_map: &FeatureMap,
    pair: &ViewPair,
) -> Result<GeometricVolume> {
    lift_pyramid(
        spec,
        core::slice::from_ref(ref_map),
        core::slice::from_ref(query_map),
        pair,
    )
}

/// Lifts multi-scale feature maps of both views into the grid.
///
/// Every cell center is moved into each camera frame and projected; each
/// level is bilinearly sampled at that projection (its intrinsics rescaled to
/// the level's resolution) and multiplied by the level's sampled mask. A cell
/// vector is `[ref level 0, ref level 1, …, query level 0, …]`. Cells behind
/// a camera get zeros for that view.
pub fn lift_pyramid(
    spec: &GridSpec,
    ref_levels: &[FeatureMap],
    query_levels: &[FeatureMap],
    pair: &ViewPair,
) -> Result<GeometricVolume> {
    let view_channels = check_levels(ref_levels)?;
    let query_channels = check_levels(query_levels)?;
    if view_channels != query_channels {
        return Err(Error::ChannelMismatch {
            expected: view_channels,
            found: query_channels,
        });
    }
    if ref_levels.len() != query_levels.len() {
        return Err(Error::CountMismatch {
            left: ref_levels.len(),
            right: query_levels.len(),
        });
    }
    let ref_k = level_intrinsics(pair.intrinsics(), ref_levels)?;
    let query_k = level_intrinsics(pair.intrinsics(), query_levels)?;

    let channels = 2 * view_channels;
    let mut values = vec![0.0f32; spec.num_cells() * channels];
    for (index, cell) in values.chunks_exact_mut(channels).enumerate() {
        let world = spec.cell_center_at(index);
        let (ref_half, query_half) = cell.split_at_mut(view_channels);
        sample_view(&world, pair.ref_from_world(), ref_levels, &ref_k, ref_half);
        sample_view(&world, pair.query_from_world(), query_levels, &query_k, query_half);
    }
    GeometricVolume::from_parts(*spec, channels, values)
}

fn check_levels(levels: &[FeatureMap]) -> Result<usize> {
    let first = levels.first().ok_or(Error::InvalidParameter("no feature levels"))?;
    for level in levels {
        if level.channels != first.channels {
            return Err(Error::ChannelMismatch {
                expected: first.channels,
                found: level.channels,
            });
        }
    }
    Ok(first.channels * levels.len())
}

fn level_intrinsics(k: &CameraIntrinsics, levels: &[FeatureMap]) -> Result<Vec<CameraIntrinsics>> {
    levels
        .iter()
        .map(|m| {
            if m.width as u32 == k.width() && m.height as u32 == k.height() {
                Ok(*k)
            } else {
                k.rescaled(m.width as u32, m.height as u32)
            }
        })
        .collect()
}

fn sample_view(
    world: &Vec3,
    cam_from_world: &RigidTransform,
    levels: &[FeatureMap],
    intrinsics: &[CameraIntrinsics],
    out: &mut [f32],
) {
    let cam = cam_from_world.transform_point(world);
    for ((map, k), slot) in levels
        .iter()
        .zip(intrinsics)
        .zip(out.chunks_exact_mut(levels[0].channels))
    {
        let Ok(px) = project_point(&cam, k) else {
            slot.fill(0.0);
            continue;
        };
        if !map.bilinear_sample_into(px.u, px.v, slot) {
            continue;
        }
        let gate = map.sample_mask(px.u, px.v);
        for x in slot.iter_mut() {
            *x *= gate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use approx::assert_abs_diff_eq;

    #[test]
    fn coarse_and_fine_dims() {
        let g = build_grid(Vec3::new(0.0, 0.0, 0.8), Vec3::repeat(0.3), 0.01).unwrap();
        assert_eq!(g.dims(), [60, 60, 60]);
        let g = build_grid(Vec3::zeros(), Vec3::repeat(0.05), 0.005).unwrap();
        assert_eq!(g.dims(), [20, 20, 20]);
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            build_grid(Vec3::zeros(), Vec3::repeat(10.0), 0.001),
            Err(Error::InvalidRange(_))
        ));
        assert!(build_grid(Vec3::zeros(), Vec3::new(0.1, -0.1, 0.1), 0.01).is_err());
    }

    #[test]
    fn cell_centers_are_symmetric_about_center() {
        let c = Vec3::new(0.1, 0.2, 0.8);
        let g = build_grid(c, Vec3::repeat(0.02), 0.01).unwrap();
        assert_eq!(g.dims(), [4, 4, 4]);
        let first = g.cell_center(0, 0, 0);
        let last = g.cell_center(3, 3, 3);
        assert_abs_diff_eq!((first + last) * 0.5, c, epsilon = 1e-15);
        assert_abs_diff_eq!(first, c - Vec3::repeat(0.015), epsilon = 1e-15);
    }

    #[test]
    fn index_round_trip() {
        let g = GridSpec::new(Vec3::zeros(), [3, 4, 5], Vec3::repeat(1.0)).unwrap();
        for i in 0..g.num_cells() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
    }

    fn ramp_map() -> FeatureMap {
        let (w, h) = (4, 3);
        let data = (0..w * h).flat_map(|i| [i as f32, -(i as f32)]).collect();
        FeatureMap::new(w, h, 2, data, vec![1.0; w * h]).unwrap()
    }

    #[test]
    fn lattice_samples_are_exact() {
        let m = ramp_map();
        assert_eq!(m.bilinear_sample(2.0, 1.0), m.pixel(2, 1).to_vec());
        assert_eq!(m.bilinear_sample(3.0, 2.0), m.pixel(3, 2).to_vec());
    }

    #[test]
    fn midpoint_sample_averages() {
        let m = ramp_map();
        let s = bilinear_sample(&m, 1.5, 1.0);
        let (a, b) = (m.pixel(1, 1), m.pixel(2, 1));
        assert_eq!(s[0], (a[0] + b[0]) / 2.0);
        assert_eq!(s[1], (a[1] + b[1]) / 2.0);
    }

    #[test]
    fn out_of_image_samples_are_zero() {
        let m = ramp_map();
        assert_eq!(m.bilinear_sample(-5.0, -5.0), vec![0.0, 0.0]);
        assert_eq!(m.bilinear_sample(3.01, 1.0), vec![0.0, 0.0]);
        assert_eq!(m.sample_mask(-0.1, 0.0), 0.0);
    }

    #[test]
    fn trilinear_at_centers_edges_and_centroids() {
        let g = GridSpec::new(Vec3::zeros(), [3, 3, 3], Vec3::repeat(0.1)).unwrap();
        let values: Vec<f32> = (0..27).map(|i| i as f32).collect();
        let vol = GeometricVolume::from_parts(g, 1, values).unwrap();
        for i in 0..27 {
            assert_eq!(vol.trilinear_sample(&g.cell_center_at(i))[0], i as f64);
        }
        let mut edge = vec![0.0f32; 27];
        edge[g.index(1, 1, 1)] = 1.0;
        let vol = GeometricVolume::from_parts(g, 1, edge).unwrap();
        let mid = (g.cell_center(0, 1, 1) + g.cell_center(1, 1, 1)) * 0.5;
        assert_abs_diff_eq!(trilinear_sample(&vol, &mid)[0], 0.5, epsilon = 1e-15);

        let vol = GeometricVolume::from_parts(g, 1, vec![2.5; 27]).unwrap();
        let centroid = g.position([0.5, 0.5, 0.5]);
        assert_abs_diff_eq!(vol.trilinear_sample(&centroid)[0], 2.5, epsilon = 1e-15);
        assert_eq!(vol.trilinear_sample(&Vec3::repeat(1.0))[0], 0.0);
    }

    #[test]
    fn weights_partition_unity_near_faces() {
        let g = GridSpec::new(Vec3::zeros(), [4, 5, 6], Vec3::new(0.1, 0.2, 0.3)).unwrap();
        let p = g.position([-0.4, 4.45, 2.3]);
        let w = trilinear_weights(&g, &p).unwrap();
        let sum: f64 = w.iter().map(|x| x.1).sum();
        assert!((sum - 1.0).abs() <= 1e-15);
        assert!(w.iter().all(|x| x.1 >= 0.0));
        assert!(trilinear_weights(&g, &g.position([-0.6, 0.0, 0.0])).is_none());
    }

    #[test]
    fn rotated_axes_round_trip() {
        let axes = *RigidTransform::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.7, Vec3::zeros()).rotation();
        let g = GridSpec::new(Vec3::new(0.1, 0.0, 1.0), [5, 6, 7], Vec3::repeat(0.01))
            .unwrap()
            .with_axes(axes);
        let p = g.cell_center(2, 3, 4);
        let f = g.continuous_index(&p);
        assert_abs_diff_eq!(f[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f[1], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f[2], 4.0, epsilon = 1e-9);
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 10.0, 10.0, 21, 21).unwrap()
    }

    #[test]
    fn lifting_lattice_projection_concatenates_gated_pixels() {
        let k = camera();
        // Cell center (0, 0, 1) projects to (10, 10) in the reference view and
        // to (10 + 100·0.02, 10) = (12, 10) in a query camera shifted by 2 cm.
        let pair = ViewPair::new(
            k,
            RigidTransform::identity(),
            RigidTransform::from_translation(Vec3::new(0.02, 0.0, 0.0)),
        );
        let g = GridSpec::new(Vec3::new(0.0, 0.0, 1.0), [3, 3, 3], Vec3::repeat(0.01)).unwrap();
        let mut r = FeatureMap::zeros(21, 21, 2);
        let mut q = FeatureMap::zeros(21, 21, 2);
        for v in 0..21 {
            for u in 0..21 {
                let i = v * 21 + u;
                r.data_mut()[2 * i] = u as f32;
                r.data_mut()[2 * i + 1] = v as f32;
                q.data_mut()[2 * i] = 2.0 * u as f32;
                q.data_mut()[2 * i + 1] = 1.0;
                r.mask_mut()[i] = 0.5;
                q.mask_mut()[i] = 0.25;
            }
        }
        let vol = lift_features(&g, &r, &q, &pair).unwrap();
        assert_eq!(vol.channels(), 4);
        assert_eq!(vol.cell(g.index(1, 1, 1)), &[5.0, 5.0, 6.0, 0.25]);
    }

    #[test]
    fn zero_maps_lift_to_zero_volume() {
        let k = camera();
        let pair = ViewPair::new(k, RigidTransform::identity(), RigidTransform::identity());
        let g = GridSpec::new(Vec3::new(0.0, 0.0, 1.0), [4, 4, 4], Vec3::repeat(0.05)).unwrap();
        let z = FeatureMap::zeros(21, 21, 3);
        let vol = lift_features(&g, &z, &z, &pair).unwrap();
        assert!(vol.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cells_behind_cameras_are_zero() {
        let k = camera();
        let pair = ViewPair::new(k, RigidTransform::identity(), RigidTransform::identity());
        let g = GridSpec::new(Vec3::new(0.0, 0.0, -1.0), [2, 2, 2], Vec3::repeat(0.01)).unwrap();
        let mut m = FeatureMap::zeros(21, 21, 1);
        m.data_mut().fill(1.0);
        m.mask_mut().fill(1.0);
        let vol = lift_features(&g, &m, &m, &pair).unwrap();
        assert!(vol.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let pair = ViewPair::new(camera(), RigidTransform::identity(), RigidTransform::identity());
        let g = GridSpec::new(Vec3::new(0.0, 0.0, 1.0), [2, 2, 2], Vec3::repeat(0.01)).unwrap();
        let a = FeatureMap::zeros(21, 21, 1);
        let b = FeatureMap::zeros(21, 21, 2);
        assert!(matches!(
            lift_features(&g, &a, &b, &pair),
            Err(Error::ChannelMismatch { .. })
        ));
    }
}
