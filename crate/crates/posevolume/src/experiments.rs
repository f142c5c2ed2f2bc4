//! Seeded Monte-Carlo experiments comparing pipeline levels and methods.

use posevolume_core::metrics::{curve_slope, occlusion_curve, BinAccuracy};
use posevolume_core::pipeline::PipelineConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{evaluate_scene, median, Method, ResultRow, SceneRecord};
use crate::synth::{Benchmark, SynthConfig, OCCLUSION_SWEEP};

/// Bin edges of the occlusion comparison.
pub const OCCLUSION_EDGES: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// Config of scene `index` in an occlusion sweep.
pub fn sweep_config(base: &SynthConfig, index: u64) -> SynthConfig {
    SynthConfig {
        occlusion_fraction: OCCLUSION_SWEEP[(index % OCCLUSION_SWEEP.len() as u64) as usize],
        ..base.clone()
    }
}

/// Evaluate `methods` on scenes `0..scenes`, scene configs from `config_of`.
/// Records come back grouped by method, each in scene order.
pub fn run_methods(
    bench: &Benchmark,
    scenes: u64,
    methods: &[Method],
    cfg: &PipelineConfig,
    config_of: impl Fn(u64) -> SynthConfig + Sync,
) -> Result<Vec<Vec<SceneRecord>>> {
    let per_scene: Vec<Vec<SceneRecord>> = (0..scenes)
        .into_par_iter()
        .map(|i| {
            let scene = bench.scene_with(&config_of(i), i)?;
            let features = bench.features(&scene)?;
            Ok(methods
                .iter()
                .map(|&m| evaluate_scene(bench, &scene, &features, m, cfg))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..methods.len())
        .map(|j| per_scene.iter().map(|recs| recs[j].clone()).collect())
        .collect())
}

/// Coarse versus fine level of the volume pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseFineReport {
    /// scenes evaluated
    pub scenes: usize,
    /// median coarse ADD, meters
    pub coarse_median_add_m: f64,
    /// median fine ADD, meters
    pub fine_median_add_m: f64,
    /// coarse success rate
    pub coarse_success_rate: f64,
    /// fine success rate
    pub fine_success_rate: f64,
    /// median coarse keypoint error, meters
    pub coarse_median_keypoint_error_m: f64,
    /// median fine keypoint error, meters
    pub fine_median_keypoint_error_m: f64,
}

/// Per-level statistics of the volume pipeline over `scenes` scenes.
pub fn coarse_vs_fine(base: &SynthConfig, scenes: u64, cfg: &PipelineConfig) -> Result<CoarseFineReport> {
    let bench = Benchmark::new(base.clone())?;
    let records = run_methods(&bench, scenes, &[Method::Volume], cfg, |_| base.clone())?.remove(0);
    Ok(coarse_fine_report(&records))
}

/// Summarize the coarse and fine levels of volume records. Failed scenes
/// count as infinite error.
pub fn coarse_fine_report(records: &[SceneRecord]) -> CoarseFineReport {
    let n = records.len();
    let level = |fine: bool| {
        let mut adds = Vec::with_capacity(n);
        let mut kps = Vec::new();
        let mut ok = 0usize;
        for r in records {
            match if fine { &r.fine } else { &r.coarse } {
                Some(l) => {
                    adds.push(l.add);
                    kps.extend_from_slice(&l.keypoint_errors);
                    ok += usize::from(l.success);
                }
                None => adds.push(f64::INFINITY),
            }
        }
        (median(&adds), ok as f64 / n.max(1) as f64, median(&kps))
    };
    let (c_add, c_rate, c_kp) = level(false);
    let (f_add, f_rate, f_kp) = level(true);
    CoarseFineReport {
        scenes: n,
        coarse_median_add_m: c_add,
        fine_median_add_m: f_add,
        coarse_success_rate: c_rate,
        fine_success_rate: f_rate,
        coarse_median_keypoint_error_m: c_kp,
        fine_median_keypoint_error_m: f_kp,
    }
}

/// Median 3D keypoint error of both fusion strategies at one baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    /// camera distance, meters
    pub baseline_m: f64,
    /// volume pipeline, fine level
    pub volume_median_keypoint_error_m: f64,
    /// triangulated 2D keypoints
    pub late_fusion_median_keypoint_error_m: f64,
    /// volume success rate
    pub volume_success_rate: f64,
    /// late-fusion success rate
    pub late_fusion_success_rate: f64,
}

impl BaselineComparison {
    /// Late-fusion minus volume median keypoint error.
    pub fn gap(&self) -> f64 {
        self.late_fusion_median_keypoint_error_m - self.volume_median_keypoint_error_m
    }
}

fn keypoint_errors(records: &[SceneRecord]) -> Vec<f64> {
    records
        .iter()
        .flat_map(|r| r.keypoint_errors.iter().map(|e| e.unwrap_or(f64::INFINITY)))
        .collect()
}

fn success_rate(records: &[SceneRecord]) -> f64 {
    records.iter().filter(|r| r.success).count() as f64 / records.len().max(1) as f64
}

/// Early versus late fusion across camera baselines. Keypoints a method
/// could not localize count as infinite error.
pub fn fusion_vs_baseline(
    base: &SynthConfig,
    baselines: &[f64],
    scenes: u64,
    cfg: &PipelineConfig,
) -> Result<Vec<BaselineComparison>> {
    let bench = Benchmark::new(base.clone())?;
    baselines
        .iter()
        .map(|&b| {
            let scene_cfg = SynthConfig {
                baseline_m: b,
                ..base.clone()
            };
            let mut recs = run_methods(&bench, scenes, &[Method::Volume, Method::LateFusion], cfg, |_| scene_cfg.clone())?;
            let late = recs.pop().expect("two methods");
            let volume = recs.pop().expect("two methods");
            Ok(BaselineComparison {
                baseline_m: b,
                volume_median_keypoint_error_m: median(&keypoint_errors(&volume)),
                late_fusion_median_keypoint_error_m: median(&keypoint_errors(&late)),
                volume_success_rate: success_rate(&volume),
                late_fusion_success_rate: success_rate(&late),
            })
        })
        .collect()
}

/// Accuracy against invisible fraction for both fusion strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionReport {
    /// volume pipeline bins
    pub volume: Vec<BinAccuracy>,
    /// late-fusion bins
    pub late_fusion: Vec<BinAccuracy>,
    /// fitted slope of the volume curve
    pub volume_slope: Option<f64>,
    /// fitted slope of the late-fusion curve
    pub late_fusion_slope: Option<f64>,
    /// CSV rows of both methods, volume first
    pub rows: Vec<ResultRow>,
}

/// Occlusion sweep over `scenes` scenes cycling through the sweep levels.
pub fn occlusion_comparison(base: &SynthConfig, scenes: u64, cfg: &PipelineConfig) -> Result<OcclusionReport> {
    let bench = Benchmark::new(base.clone())?;
    let recs = run_methods(&bench, scenes, &[Method::Volume, Method::LateFusion], cfg, |i| sweep_config(base, i))?;
    let curve = |records: &[SceneRecord]| {
        occlusion_curve(
            &records.iter().map(|r| (r.success, r.invisible_fraction)).collect::<Vec<_>>(),
            &OCCLUSION_EDGES,
        )
    };
    let volume = curve(&recs[0]);
    let late_fusion = curve(&recs[1]);
    Ok(OcclusionReport {
        volume_slope: curve_slope(&volume),
        late_fusion_slope: curve_slope(&late_fusion),
        volume,
        late_fusion,
        rows: recs.iter().flatten().map(SceneRecord::row).collect(),
    })
}
