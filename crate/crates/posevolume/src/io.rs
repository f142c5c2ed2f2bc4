//! File formats: JSON poses and scene manifests, and the binary grid dump
//! (one JSON header line followed by little-endian `f32` values).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use posevolume_core::volume::{FeatureMap, GeometricVolume, GridSpec};
use posevolume_core::{CameraIntrinsics, Mat3, RigidTransform, Vec3, ViewPair};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::model::ModelSource;
use crate::synth::{scene_id, Benchmark, Occluder, Scene, SceneFeatures, SynthConfig};

/// Manifest format tag.
pub const SCENE_FORMAT: &str = "posevolume-scene";
/// Binary dump format tag.
pub const GRID_FORMAT: &str = "posevolume-grid";
/// Current version of both formats.
pub const FORMAT_VERSION: u32 = 1;

/// Rigid transform as a row-major rotation and a translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJson {
    /// rotation rows
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    /// translation, meters
    pub t_m: [f64; 3],
}

impl From<&RigidTransform> for PoseJson {
    fn from(p: &RigidTransform) -> Self {
        let r = p.rotation();
        let t = p.translation();
        Self {
            r: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            t_m: [t.x, t.y, t.z],
        }
    }
}

impl PoseJson {
    /// Validated transform.
    pub fn to_transform(&self) -> posevolume_core::Result<RigidTransform> {
        let r = Mat3::from_fn(|i, j| self.r[i][j]);
        RigidTransform::new(r, Vec3::from(self.t_m))
    }
}

/// Camera intrinsics with units in the field names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsJson {
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

impl From<&CameraIntrinsics> for IntrinsicsJson {
    fn from(k: &CameraIntrinsics) -> Self {
        Self {
            fx_px: k.fx(),
            fy_px: k.fy(),
            cx_px: k.cx(),
            cy_px: k.cy(),
            width_px: k.width(),
            height_px: k.height(),
        }
    }
}

impl IntrinsicsJson {
    /// Validated intrinsics.
    pub fn to_intrinsics(&self) -> posevolume_core::Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx_px, self.fy_px, self.cx_px, self.cy_px, self.width_px, self.height_px)
    }
}

/// Model description stored with each scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInfo {
    /// where the points come from
    pub source: ModelSource,
    /// whether ADD-S applies
    pub symmetric: bool,
    /// diameter, meters
    pub diameter_m: f64,
    /// number of model points
    pub points: usize,
}

/// Relative paths of the per-view feature dumps, finest level first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFiles {
    /// reference view levels
    pub reference: Vec<String>,
    /// query view levels
    pub query: Vec<String>,
}

/// Everything needed to rebuild a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    /// always [`SCENE_FORMAT`]
    pub format: String,
    /// always [`FORMAT_VERSION`]
    pub version: u32,
    /// scene identifier
    pub scene_id: String,
    /// index, also the RNG stream
    pub scene_index: u64,
    /// effective synthesis config
    pub config: SynthConfig,
    /// shared intrinsics
    pub intrinsics: IntrinsicsJson,
    /// reference camera extrinsics
    pub ref_from_world: PoseJson,
    /// query camera extrinsics
    pub query_from_world: PoseJson,
    /// camera center distance, meters
    pub baseline_m: f64,
    /// ground-truth object-to-world pose
    pub object_pose: PoseJson,
    /// reference-view occluder
    pub occluder: Option<Occluder>,
    /// fraction of model points hidden in the reference view
    pub invisible_fraction: f64,
    /// model summary
    pub model: ModelInfo,
    /// model-frame keypoints, meters
    pub keypoints_m: Vec<[f64; 3]>,
    /// feature dumps, absent when features are regenerated on demand
    pub feature_files: Option<FeatureFiles>,
}

impl SceneManifest {
    /// Describe `scene` of `bench`.
    pub fn new(bench: &Benchmark, scene: &Scene, feature_files: Option<FeatureFiles>) -> Self {
        Self {
            format: SCENE_FORMAT.into(),
            version: FORMAT_VERSION,
            scene_id: scene.id(),
            scene_index: scene.index,
            config: scene.config.clone(),
            intrinsics: IntrinsicsJson::from(scene.pair.intrinsics()),
            ref_from_world: PoseJson::from(scene.pair.ref_from_world()),
            query_from_world: PoseJson::from(scene.pair.query_from_world()),
            baseline_m: scene.pair.baseline_m(),
            object_pose: PoseJson::from(&scene.pose),
            occluder: scene.occluder,
            invisible_fraction: scene.invisible_fraction,
            model: ModelInfo {
                source: scene.config.model.clone(),
                symmetric: bench.model.symmetric(),
                diameter_m: bench.model.diameter(),
                points: bench.model.points().len(),
            },
            keypoints_m: bench.keypoints.iter().map(|k| [k.x, k.y, k.z]).collect(),
            feature_files,
        }
    }

    /// Rebuild the scene, checking internal consistency.
    pub fn to_scene(&self, path: &Path) -> Result<Scene> {
        let schema = |message: String| Error::SchemaMismatch {
            path: path.to_path_buf(),
            message,
        };
        if self.format != SCENE_FORMAT || self.version != FORMAT_VERSION {
            return Err(schema(format!("unsupported format {} v{}", self.format, self.version)));
        }
        if self.scene_id != scene_id(self.scene_index) {
            return Err(schema(format!("scene_id {} does not match index {}", self.scene_id, self.scene_index)));
        }
        if self.keypoints_m.len() != self.config.n_keypoints {
            return Err(schema("keypoint count differs from config".into()));
        }
        let core = |e: posevolume_core::Error| schema(e.to_string());
        let k = self.intrinsics.to_intrinsics().map_err(core)?;
        let pair = ViewPair::new(
            k,
            self.ref_from_world.to_transform().map_err(core)?,
            self.query_from_world.to_transform().map_err(core)?,
        );
        if (pair.baseline_m() - self.baseline_m).abs() > 1e-9 {
            return Err(schema("baseline_m disagrees with the camera poses".into()));
        }
        if !(0.0..=1.0).contains(&self.invisible_fraction) {
            return Err(schema("invisible_fraction outside [0, 1]".into()));
        }
        Ok(Scene {
            index: self.scene_index,
            config: self.config.clone(),
            pose: self.object_pose.to_transform().map_err(core)?,
            pair,
            occluder: self.occluder,
            invisible_fraction: self.invisible_fraction,
        })
    }

    /// Model-frame keypoints.
    pub fn keypoints(&self) -> Vec<Vec3> {
        self.keypoints_m.iter().map(|k| Vec3::from(*k)).collect()
    }
}

/// Serialize `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Parse JSON, reporting malformed content as a schema mismatch.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::SchemaMismatch {
        path: path.to_path_buf(),
        message: format!("{} (at `{}`)", e.inner(), e.path()),
    })
}

/// Header line of a binary grid dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridHeader {
    /// a lifted volume, `channels` values per cell, cells x-fastest
    Volume {
        /// format tag
        format: String,
        /// format version
        version: u32,
        /// world-space center, meters
        center_m: [f64; 3],
        /// cells per axis
        dims: [usize; 3],
        /// cell edge per axis, meters
        cell_size_m: [f64; 3],
        /// grid axes as columns, row-major
        axes: [[f64; 3]; 3],
        /// values per cell
        channels: usize,
    },
    /// a feature map, `channels` values per pixel, then one mask plane
    FeatureMap {
        /// format tag
        format: String,
        /// format version
        version: u32,
        /// width in pixels
        width: usize,
        /// height in pixels
        height: usize,
        /// values per pixel
        channels: usize,
    },
}

fn write_dump(path: &Path, header: &GridHeader, planes: &[&[f32]]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut line = serde_json::to_string(header).expect("serializable");
    line.push('\n');
    let result = (|| {
        w.write_all(line.as_bytes())?;
        for plane in planes {
            for x in *plane {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    result.map_err(io_err(path))
}

fn read_dump(path: &Path) -> Result<(GridHeader, Vec<f32>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err(path))?;
    let header: GridHeader = serde_json::from_str(&line).map_err(|e| Error::SchemaMismatch {
        path: path.to_path_buf(),
        message: format!("bad header: {e}"),
    })?;
    let (format, version) = match &header {
        GridHeader::Volume { format, version, .. } | GridHeader::FeatureMap { format, version, .. } => (format, version),
    };
    if format != GRID_FORMAT || *version != FORMAT_VERSION {
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            message: format!("unsupported format {format} v{version}"),
        });
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            message: "payload is not a whole number of f32 values".into(),
        });
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((header, values))
}

fn payload_mismatch(path: &Path, expected: usize, found: usize) -> Error {
    Error::SchemaMismatch {
        path: path.to_path_buf(),
        message: format!("payload has {found} values, header implies {expected}"),
    }
}

/// Write a feature map and its mask.
pub fn write_feature_map(path: &Path, map: &FeatureMap) -> Result<()> {
    let header = GridHeader::FeatureMap {
        format: GRID_FORMAT.into(),
        version: FORMAT_VERSION,
        width: map.width(),
        height: map.height(),
        channels: map.channels(),
    };
    write_dump(path, &header, &[map.data(), map.mask()])
}

/// Read a feature map written by [`write_feature_map`].
pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    match read_dump(path)? {
        (GridHeader::FeatureMap { width, height, channels, .. }, mut values) => {
            let plane = width * height;
            let expected = plane * (channels + 1);
            if values.len() != expected {
                return Err(payload_mismatch(path, expected, values.len()));
            }
            let mask = values.split_off(plane * channels);
            FeatureMap::new(width, height, channels, values, mask).map_err(|e| Error::SchemaMismatch {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        }
        _ => Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            message: "expected a feature map".into(),
        }),
    }
}

/// Write a lifted volume.
pub fn write_volume(path: &Path, volume: &GeometricVolume) -> Result<()> {
    let spec = volume.spec();
    let (c, s, a) = (spec.center(), spec.cell_size(), spec.axes());
    let header = GridHeader::Volume {
        format: GRID_FORMAT.into(),
        version: FORMAT_VERSION,
        center_m: [c.x, c.y, c.z],
        dims: spec.dims(),
        cell_size_m: [s.x, s.y, s.z],
        axes: [0, 1, 2].map(|i| [a[(i, 0)], a[(i, 1)], a[(i, 2)]]),
        channels: volume.channels(),
    };
    write_dump(path, &header, &[volume.values()])
}

/// Read a volume written by [`write_volume`].
pub fn read_volume(path: &Path) -> Result<GeometricVolume> {
    let schema = |message: String| Error::SchemaMismatch {
        path: path.to_path_buf(),
        message,
    };
    match read_dump(path)? {
        (
            GridHeader::Volume {
                center_m,
                dims,
                cell_size_m,
                axes,
                channels,
                ..
            },
            values,
        ) => {
            let expected = dims.iter().product::<usize>() * channels;
            if values.len() != expected {
                return Err(payload_mismatch(path, expected, values.len()));
            }
            let spec = GridSpec::new(Vec3::from(center_m), dims, Vec3::from(cell_size_m))
                .map_err(|e| schema(e.to_string()))?
                .with_axes(Mat3::from_fn(|i, j| axes[i][j]));
            GeometricVolume::from_parts(spec, channels, values).map_err(|e| schema(e.to_string()))
        }
        _ => Err(schema("expected a volume".into())),
    }
}

/// Dump file name for one view and level.
pub fn feature_file_name(scene_id: &str, view: &str, level: usize) -> String {
    format!("{scene_id}.{view}.l{level}.bin")
}

/// Write both views' feature levels next to the manifest.
pub fn write_scene_features(dir: &Path, scene_id: &str, features: &SceneFeatures) -> Result<FeatureFiles> {
    let mut files = FeatureFiles {
        reference: Vec::new(),
        query: Vec::new(),
    };
    for (view, levels, names) in [
        ("ref", &features.ref_levels, &mut files.reference),
        ("query", &features.query_levels, &mut files.query),
    ] {
        for (l, map) in levels.iter().enumerate() {
            let name = feature_file_name(scene_id, view, l);
            write_feature_map(&dir.join(&name), map)?;
            names.push(name);
        }
    }
    Ok(files)
}

/// Read the feature dumps listed in a manifest.
pub fn read_scene_features(dir: &Path, files: &FeatureFiles) -> Result<SceneFeatures> {
    let load = |names: &[String]| names.iter().map(|n| read_feature_map(&dir.join(n))).collect::<Result<Vec<_>>>();
    Ok(SceneFeatures {
        ref_levels: load(&files.reference)?,
        query_levels: load(&files.query)?,
    })
}

/// Manifest paths in a directory, sorted by file name.
pub fn list_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("scene_") && name.ends_with(".json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
