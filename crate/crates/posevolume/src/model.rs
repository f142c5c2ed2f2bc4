//! Object models: built-in shapes, PLY import and keypoint selection.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use posevolume_core::metrics::ModelPoints;
use posevolume_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Surface samples per built-in model.
pub const MODEL_POINTS: usize = 2000;

const MODEL_SEED: u64 = 0x6d6f_6465_6c73;

/// Where the object model comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// 0.1 m cube, treated as symmetric
    Cube,
    /// cylinder of radius 0.04 m and height 0.1 m, symmetric
    Cylinder,
    /// asymmetric union of boxes
    #[default]
    Blob,
    /// point cloud read from a PLY file
    Ply {
        /// file path
        path: PathBuf,
        /// use ADD-S for this model
        #[serde(default)]
        symmetric: bool,
    },
}

impl ModelSource {
    /// Build the model point cloud.
    pub fn load(&self) -> Result<ModelPoints> {
        let (points, symmetric) = match self {
            ModelSource::Cube => (cube_points(0.1, MODEL_POINTS), true),
            ModelSource::Cylinder => (cylinder_points(0.04, 0.1, MODEL_POINTS), true),
            ModelSource::Blob => (blob_points(MODEL_POINTS), false),
            ModelSource::Ply { path, symmetric } => (read_ply(path)?, *symmetric),
        };
        Ok(ModelPoints::new(points, symmetric)?)
    }

    /// Short name used in manifests and logs.
    pub fn name(&self) -> String {
        match self {
            ModelSource::Cube => "cube".into(),
            ModelSource::Cylinder => "cylinder".into(),
            ModelSource::Blob => "blob".into(),
            ModelSource::Ply { path, .. } => format!("ply:{}", path.display()),
        }
    }
}

fn rng_for(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(MODEL_SEED ^ tag)
}

/// Cube surface with its 8 corners first; the rest come in antipodal pairs
/// so the centroid is the origin.
pub fn cube_points(side: f64, count: usize) -> Vec<Vec3> {
    let h = side / 2.0;
    let mut pts = Vec::with_capacity(count);
    for i in 0..8 {
        let s = |b: usize| if i >> b & 1 == 1 { h } else { -h };
        pts.push(Vec3::new(s(0), s(1), s(2)));
    }
    let mut rng = rng_for(1);
    while pts.len() + 1 < count {
        let axis = rng.random_range(0..3);
        let mut p = Vec3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h));
        p[axis] = h;
        pts.push(p);
        pts.push(-p);
    }
    pts
}

/// Closed cylinder along z, area-weighted between side and caps, antipodal pairs.
pub fn cylinder_points(radius: f64, height: f64, count: usize) -> Vec<Vec3> {
    let side_area = std::f64::consts::TAU * radius * height;
    let cap_area = std::f64::consts::TAU * radius * radius;
    let mut rng = rng_for(2);
    let mut pts = Vec::with_capacity(count);
    while pts.len() + 1 < count {
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let p = if rng.random_range(0.0..side_area + cap_area) < side_area {
            Vec3::new(radius * phi.cos(), radius * phi.sin(), rng.random_range(-height / 2.0..height / 2.0))
        } else {
            let r = radius * rng.random::<f64>().sqrt();
            Vec3::new(r * phi.cos(), r * phi.sin(), height / 2.0)
        };
        pts.push(p);
        pts.push(-p);
    }
    pts
}

const BLOB_BOXES: [([f64; 3], [f64; 3]); 5] = [
    ([0.0, 0.0, 0.0], [0.035, 0.03, 0.04]),
    ([0.0, 0.005, 0.058], [0.025, 0.022, 0.02]),
    ([0.045, 0.0, 0.005], [0.012, 0.01, 0.03]),
    ([-0.02, 0.018, 0.085], [0.008, 0.006, 0.01]),
    ([0.012, -0.02, -0.05], [0.02, 0.022, 0.012]),
];

/// Surface of a union of axis-aligned boxes, recentered on its centroid.
pub fn blob_points(count: usize) -> Vec<Vec3> {
    let faces: Vec<(usize, f64, f64)> = BLOB_BOXES
        .iter()
        .enumerate()
        .flat_map(|(b, (_, h))| {
            (0..3).flat_map(move |axis| {
                let area = 4.0 * h[(axis + 1) % 3] * h[(axis + 2) % 3];
                [(b, axis as f64, area), (b, axis as f64 + 0.5, area)]
            })
        })
        .collect();
    let total: f64 = faces.iter().map(|f| f.2).sum();
    let inside_other = |p: &Vec3, own: usize| {
        BLOB_BOXES.iter().enumerate().any(|(b, (c, h))| {
            b != own && (0..3).all(|k| (p[k] - c[k]).abs() < h[k])
        })
    };

    let mut rng = rng_for(3);
    let mut pts = Vec::with_capacity(count);
    while pts.len() < count {
        let mut pick = rng.random_range(0.0..total);
        let mut face = faces[faces.len() - 1];
        for f in &faces {
            if pick < f.2 {
                face = *f;
                break;
            }
            pick -= f.2;
        }
        let (b, code, _) = face;
        let axis = code as usize;
        let sign = if code.fract() > 0.0 { 1.0 } else { -1.0 };
        let (c, h) = BLOB_BOXES[b];
        let mut p = Vec3::zeros();
        for k in 0..3 {
            p[k] = c[k] + rng.random_range(-h[k]..h[k]);
        }
        p[axis] = c[axis] + sign * h[axis];
        if !inside_other(&p, b) {
            pts.push(p);
        }
    }
    let centroid = pts.iter().sum::<Vec3>() / pts.len() as f64;
    pts.iter().map(|p| p - centroid).collect()
}

/// Vertex positions of an ASCII or binary PLY file.
pub fn read_ply(path: &Path) -> Result<Vec<Vec3>> {
    use ply_rs::parser::Parser;
    use ply_rs::ply::{DefaultElement, Property};

    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut reader)
        .map_err(|e| Error::SchemaMismatch {
            path: path.to_path_buf(),
            message: format!("unreadable PLY: {e}"),
        })?;
    let schema = |message: &str| Error::SchemaMismatch {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let vertices = ply.payload.get("vertex").ok_or_else(|| schema("no vertex element"))?;
    let scalar = |v: &DefaultElement, key: &str| -> Result<f64> {
        match v.get(key) {
            Some(Property::Float(x)) => Ok(f64::from(*x)),
            Some(Property::Double(x)) => Ok(*x),
            _ => Err(schema("vertex x/y/z must be float or double")),
        }
    };
    vertices
        .iter()
        .map(|v| Ok(Vec3::new(scalar(v, "x")?, scalar(v, "y")?, scalar(v, "z")?)))
        .collect()
}

/// Model centroid followed by `n − 1` farthest-point samples.
///
/// Sampling starts at the point farthest from the centroid and treats the
/// centroid as already selected. Ties go to the lowest index.
pub fn select_keypoints(model: &ModelPoints, n: usize) -> Result<Vec<Vec3>> {
    if n < 4 {
        return Err(Error::InvalidConfig(format!("need at least 4 keypoints, got {n}")));
    }
    let pts = model.points();
    if pts.len() < n - 1 {
        return Err(Error::TooFewModelPoints {
            needed: n - 1,
            got: pts.len(),
        });
    }
    let centroid = model.centroid();
    let mut selected = vec![centroid];
    let mut min_d: Vec<f64> = pts.iter().map(|p| (p - centroid).norm()).collect();
    while selected.len() < n {
        let mut best = 0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > min_d[best] {
                best = i;
            }
        }
        let chosen = pts[best];
        selected.push(chosen);
        for (d, p) in min_d.iter_mut().zip(pts) {
            *d = d.min((p - chosen).norm());
        }
    }
    Ok(selected)
}
