//! JSON configuration files with explicit units in the field names.

use std::fs;
use std::path::Path;

use posevolume_core::pipeline::PipelineConfig;
use posevolume_core::solver::SolverParams;
use posevolume_core::volume::DEFAULT_MAX_CELLS;
use posevolume_core::Vec3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::synth::SynthConfig;

/// Input of `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// number of scenes
    pub scenes: u64,
    /// cycle scenes through the occlusion sweep levels
    pub occlusion_sweep: bool,
    /// write per-view feature dumps next to the manifests
    pub write_features: bool,
    /// scene synthesis parameters
    pub synth: SynthConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            scenes: 10,
            occlusion_sweep: false,
            write_features: true,
            synth: SynthConfig::default(),
        }
    }
}

/// Input of `evaluate`: pipeline and solver parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// coarse grid half-extent per axis
    pub coarse_half_range_m: [f64; 3],
    /// coarse cell edge
    pub coarse_cell_m: f64,
    /// fine cell edge
    pub fine_cell_m: f64,
    /// fine half-extent as a multiple of the model diameter
    pub fine_range_factor: f64,
    /// sigmoid steepness of the soft inlier count
    pub gamma1_per_m: f64,
    /// inlier distance threshold
    pub gamma2_m: f64,
    /// softmax temperature of the hypothesis scores
    pub temperature: f64,
    /// rotation weight of the pose loss
    pub alpha_m: f64,
    /// pose, keypoint and KL weights of the joint loss
    pub betas: [f64; 3],
    /// multiplier applied to the summed evidence before the softmax
    pub field_gain: f64,
    /// response level counted as no evidence
    pub evidence_floor: f64,
    /// target heatmap std in cells
    pub sigma_cells: f64,
    /// 2D soft-argmax half window of the late-fusion baseline
    pub window_px: usize,
    /// grid memory cap
    pub max_cells: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self::from(&PipelineConfig::default())
    }
}

impl From<&PipelineConfig> for EvaluateConfig {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            coarse_half_range_m: [c.coarse_half_range.x, c.coarse_half_range.y, c.coarse_half_range.z],
            coarse_cell_m: c.coarse_cell,
            fine_cell_m: c.fine_cell,
            fine_range_factor: c.fine_range_factor,
            gamma1_per_m: c.solver.gamma1,
            gamma2_m: c.solver.gamma2,
            temperature: c.solver.temperature,
            alpha_m: c.alpha,
            betas: c.betas,
            field_gain: c.field_gain,
            evidence_floor: c.evidence_floor,
            sigma_cells: c.sigma_cells,
            window_px: c.window_px,
            max_cells: c.max_cells,
        }
    }
}

impl EvaluateConfig {
    /// Validated pipeline configuration.
    pub fn to_pipeline(&self) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            coarse_half_range: Vec3::from(self.coarse_half_range_m),
            coarse_cell: self.coarse_cell_m,
            fine_cell: self.fine_cell_m,
            fine_range_factor: self.fine_range_factor,
            solver: SolverParams::new(self.gamma1_per_m, self.gamma2_m, self.temperature)?,
            alpha: self.alpha_m,
            betas: self.betas,
            field_gain: self.field_gain,
            evidence_floor: self.evidence_floor,
            sigma_cells: self.sigma_cells,
            max_cells: if self.max_cells == 0 { DEFAULT_MAX_CELLS } else { self.max_cells },
            window_px: self.window_px,
            ..PipelineConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse a JSON config, reporting the line, column and field of any error.
pub fn parse_config<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        Error::ConfigParse {
            path: path.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}

/// Read and parse a JSON config file.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(path, &text)
}
