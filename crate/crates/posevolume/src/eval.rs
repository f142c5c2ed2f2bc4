//! Per-scene evaluation of the volume pipeline and its baselines, result
//! rows and run summaries.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use posevolume_core::metrics::{
    add_metric, adds_metric, curve_slope, occlusion_curve, success, uniform_bin_edges, BinAccuracy, ModelPoints,
};
use posevolume_core::pipeline::{run_coarse_to_fine, run_late_fusion, LevelOutput, PipelineConfig, SolverMode};
use posevolume_core::{RigidTransform, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::PoseJson;
use crate::synth::{Benchmark, Scene, SceneFeatures};

/// First line of every results CSV.
pub const CSV_VERSION_LINE: &str = "# posevolume results v1";

/// Width of the invisible-fraction bins used in summaries.
pub const OCCLUSION_BIN_WIDTH: f64 = 0.2;

/// Pose estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    /// coarse-to-fine geometric volume with soft RANSAC
    Volume,
    /// per-view 2D keypoints, triangulation, soft RANSAC
    LateFusion,
    /// coarse-to-fine volume with a single all-keypoint Kabsch fit
    KabschAll,
}

impl Method {
    /// All methods in a fixed order.
    pub const ALL: [Method; 3] = [Method::Volume, Method::LateFusion, Method::KabschAll];

    /// Snake-case name.
    pub fn name(self) -> &'static str {
        match self {
            Method::Volume => "volume",
            Method::LateFusion => "late_fusion",
            Method::KabschAll => "kabsch_all",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Metrics of one pipeline level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    /// estimated pose
    pub pose: PoseJson,
    /// ADD, meters
    pub add: f64,
    /// ADD-S, meters
    pub adds: f64,
    /// 0.1·d success
    pub success: bool,
    /// distance of each predicted keypoint to the truth
    pub keypoint_errors: Vec<f64>,
    /// keypoints whose field peak is barely above uniform
    pub low_confidence: usize,
    /// mean KL between fields and target heatmaps
    pub kl: Option<f64>,
    /// smooth-L1 keypoint loss
    pub keypoint_loss: f64,
    /// pose loss against ground truth
    pub pose_loss: f64,
}

/// Everything recorded for one scene and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    /// scene identifier
    pub scene_id: String,
    /// method
    pub method: Method,
    /// ADD of the final pose, infinite when the method failed
    pub add: f64,
    /// ADD-S of the final pose, infinite when the method failed
    pub adds: f64,
    /// 0.1·d success of the final pose
    pub success: bool,
    /// invisible fraction of the scene
    pub invisible_fraction: f64,
    /// final pose
    pub pose: Option<PoseJson>,
    /// final per-keypoint errors; `None` for keypoints the method dropped
    pub keypoint_errors: Vec<Option<f64>>,
    /// coarse level of the volume methods
    pub coarse: Option<LevelRecord>,
    /// fine level of the volume methods
    pub fine: Option<LevelRecord>,
    /// β-weighted sum of both levels' losses
    pub joint_loss: Option<f64>,
    /// failure message
    pub error: Option<String>,
}

impl SceneRecord {
    /// CSV projection of the record.
    pub fn row(&self) -> ResultRow {
        ResultRow {
            scene_id: self.scene_id.clone(),
            method: self.method,
            add: self.add,
            adds: self.adds,
            success: self.success,
            invisible_fraction: self.invisible_fraction,
        }
    }

    fn failed(scene: &Scene, method: Method, n: usize, err: impl fmt::Display) -> Self {
        Self {
            scene_id: scene.id(),
            method,
            add: f64::INFINITY,
            adds: f64::INFINITY,
            success: false,
            invisible_fraction: scene.invisible_fraction,
            pose: None,
            keypoint_errors: vec![None; n],
            coarse: None,
            fine: None,
            joint_loss: None,
            error: Some(err.to_string()),
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// scene identifier
    pub scene_id: String,
    /// method
    pub method: Method,
    /// ADD, meters
    pub add: f64,
    /// ADD-S, meters
    pub adds: f64,
    /// 0.1·d success
    pub success: bool,
    /// invisible fraction of the scene
    pub invisible_fraction: f64,
}

fn level_record(level: &LevelOutput, gt: &RigidTransform, model: &ModelPoints) -> LevelRecord {
    let diag = level.diagnostics.as_ref();
    LevelRecord {
        pose: PoseJson::from(&level.pose),
        add: add_metric(&level.pose, gt, model),
        adds: adds_metric(&level.pose, gt, model),
        success: success(&level.pose, gt, model),
        keypoint_errors: diag.map(|d| d.keypoint_errors.clone()).unwrap_or_default(),
        low_confidence: level.low_confidence.iter().filter(|&&x| x).count(),
        kl: diag.and_then(|d| d.kl),
        keypoint_loss: diag.map_or(f64::NAN, |d| d.keypoint_loss),
        pose_loss: diag.map_or(f64::NAN, |d| d.pose_loss),
    }
}

/// Run `method` on one scene with precomputed features.
pub fn evaluate_scene(
    bench: &Benchmark,
    scene: &Scene,
    features: &SceneFeatures,
    method: Method,
    cfg: &PipelineConfig,
) -> SceneRecord {
    let inputs = bench.inputs(scene, features);
    let gt = scene.pose;
    let model = &bench.model;
    let n = bench.keypoints.len();
    let truth: Vec<Vec3> = bench.keypoints.iter().map(|m| gt.transform_point(m)).collect();
    let finish = |pose: RigidTransform, keypoint_errors: Vec<Option<f64>>| SceneRecord {
        scene_id: scene.id(),
        method,
        add: add_metric(&pose, &gt, model),
        adds: adds_metric(&pose, &gt, model),
        success: success(&pose, &gt, model),
        invisible_fraction: scene.invisible_fraction,
        pose: Some(PoseJson::from(&pose)),
        keypoint_errors,
        coarse: None,
        fine: None,
        joint_loss: None,
        error: None,
    };
    match method {
        Method::Volume | Method::KabschAll => {
            let cfg = PipelineConfig {
                solver_mode: if method == Method::Volume {
                    SolverMode::SoftRansac
                } else {
                    SolverMode::AllPoints
                },
                ..*cfg
            };
            match run_coarse_to_fine(&cfg, &inputs) {
                Ok(out) => {
                    let errors = out.fine.positions().iter().zip(&truth).map(|(p, t)| Some((p - t).norm())).collect();
                    let mut rec = finish(*out.pose(), errors);
                    rec.coarse = Some(level_record(&out.coarse, &gt, model));
                    rec.fine = Some(level_record(&out.fine, &gt, model));
                    rec.joint_loss = out.joint_loss;
                    rec
                }
                Err(e) => SceneRecord::failed(scene, method, n, e),
            }
        }
        Method::LateFusion => match run_late_fusion(&inputs, cfg) {
            Ok(out) => {
                let errors = out
                    .keypoints
                    .iter()
                    .zip(&truth)
                    .map(|(p, t)| p.map(|p| (p - t).norm()))
                    .collect();
                finish(out.pose, errors)
            }
            Err(e) => SceneRecord::failed(scene, method, n, e),
        },
    }
}

/// Generate (or load) each scene's features and evaluate, preserving order.
///
/// `load` supplies a scene and its features for an index; it runs on the
/// worker pool, so only a bounded number of feature sets is alive at once.
pub fn evaluate_batch<F>(indices: &[u64], method: Method, cfg: &PipelineConfig, bench: &Benchmark, load: F) -> Result<Vec<SceneRecord>>
where
    F: Fn(u64) -> Result<(Scene, SceneFeatures)> + Sync,
{
    indices
        .par_iter()
        .map(|&i| {
            let (scene, features) = load(i)?;
            Ok(evaluate_scene(bench, &scene, &features, method, cfg))
        })
        .collect()
}

/// Synthesize scene `index` of `bench` with its oracle features.
pub fn synthesize(bench: &Benchmark, index: u64) -> Result<(Scene, SceneFeatures)> {
    let scene = bench.scene(index)?;
    let features = bench.features(&scene)?;
    Ok((scene, features))
}

/// Write rows behind the version comment line.
pub fn write_csv<W: Write>(mut out: W, rows: &[ResultRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Render rows as CSV text.
pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Parse a results CSV, checking the version line.
pub fn read_csv<R: Read>(input: R) -> std::result::Result<Vec<ResultRow>, String> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text).map_err(|e| e.to_string())?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if first.trim_end() != CSV_VERSION_LINE {
        return Err(format!("expected `{CSV_VERSION_LINE}` as first line"));
    }
    csv::Reader::from_reader(rest.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect()
}

/// Per-bin accuracy for the summary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    /// lower edge, inclusive
    pub lower: f64,
    /// upper edge
    pub upper: f64,
    /// scenes in the bin
    pub total: usize,
    /// successes in the bin
    pub successes: usize,
    /// success rate; absent for empty bins
    pub accuracy: Option<f64>,
}

impl From<&BinAccuracy> for BinSummary {
    fn from(b: &BinAccuracy) -> Self {
        Self {
            lower: b.lower,
            upper: b.upper,
            total: b.total,
            successes: b.successes,
            accuracy: b.accuracy,
        }
    }
}

/// Aggregate statistics of one method over a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// method
    pub method: Method,
    /// rows summarized
    pub scenes: usize,
    /// scenes where the method returned an error
    pub failures: usize,
    /// fraction of successes
    pub success_rate: f64,
    /// median ADD, meters
    pub median_add_m: f64,
    /// median ADD-S, meters
    pub median_adds_m: f64,
    /// accuracy by invisible fraction
    pub occlusion_bins: Vec<BinSummary>,
    /// least-squares slope of accuracy against bin center
    pub occlusion_slope: Option<f64>,
}

/// Median with NaN-free total ordering; `NaN` for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else if v[m - 1].is_infinite() || v[m].is_infinite() {
        v[m - 1].max(v[m])
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Summarize rows of a single method.
pub fn summarize(method: Method, rows: &[ResultRow]) -> Summary {
    let rows: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method).collect();
    let n = rows.len();
    let successes = rows.iter().filter(|r| r.success).count();
    let adds: Vec<f64> = rows.iter().map(|r| r.add).collect();
    let addss: Vec<f64> = rows.iter().map(|r| r.adds).collect();
    let curve = occlusion_curve(
        &rows.iter().map(|r| (r.success, r.invisible_fraction)).collect::<Vec<_>>(),
        &uniform_bin_edges(OCCLUSION_BIN_WIDTH),
    );
    Summary {
        method,
        scenes: n,
        failures: rows.iter().filter(|r| r.add.is_infinite()).count(),
        success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
        median_add_m: median(&adds),
        median_adds_m: median(&addss),
        occlusion_slope: curve_slope(&curve),
        occlusion_bins: curve.iter().map(BinSummary::from).collect(),
    }
}
