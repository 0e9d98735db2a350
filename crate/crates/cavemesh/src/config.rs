//! Run configuration: one TOML file covering every tunable, with the
//! defaults the rest of the crate ships. Unknown keys are rejected at
//! parse time and every section is validated against its owning
//! module's invariants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RewardWeights;
use crate::normals::SmoothingConfig;
use crate::sim::env::PipelineConfig;
use crate::sim::ScannerSpec;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingSection {
    pub radius: f64,
    pub k_max: usize,
    pub beta: f64,
    pub eta: f64,
    pub beta_max: f64,
    pub segments: usize,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        let c = SmoothingConfig::default();
        SmoothingSection {
            radius: c.radius,
            k_max: c.k_max,
            beta: c.beta,
            eta: c.eta,
            beta_max: c.beta_max,
            segments: c.n_segments,
            enabled: true,
        }
    }
}

impl SmoothingSection {
    pub fn to_config(&self) -> SmoothingConfig {
        SmoothingConfig {
            radius: self.radius,
            k_max: self.k_max,
            beta: self.beta,
            eta: self.eta,
            beta_max: self.beta_max,
            n_segments: self.segments,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    pub pitch: f64,
    pub learning_rate: f64,
    pub iters: usize,
    pub eikonal_weight: f64,
    pub eikonal_max_samples: usize,
    pub feature_lr_scale: f64,
    pub max_anchors: usize,
    pub block_voxel: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            pitch: 0.3,
            learning_rate: 2e-3,
            iters: 30,
            eikonal_weight: 0.1,
            eikonal_max_samples: 32,
            feature_lr_scale: 10.0,
            max_anchors: 96,
            block_voxel: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshingSection {
    /// Voxel for final extraction.
    pub voxel: f64,
    /// Voxel for per-step reward meshes.
    pub step_voxel: f64,
    /// Region margin as a multiple of the truncation band.
    pub region_margin_factor: f64,
    /// Support gate for final extraction.
    pub n_nn: usize,
}

impl Default for MeshingSection {
    fn default() -> Self {
        MeshingSection {
            voxel: 0.15,
            step_voxel: 0.2,
            region_margin_factor: 2.0,
            n_nn: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub threshold_cm: f64,
    /// Points per square meter for full evaluations.
    pub sample_density: f64,
    /// Points per square meter for per-step rewards.
    pub step_sample_density: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            threshold_cm: 15.0,
            sample_density: 400.0,
            step_sample_density: 100.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub grad_clip: f64,
    pub iterations: usize,
    pub validation_interval: usize,
    pub n_envs: usize,
}

impl Default for PpoSection {
    fn default() -> Self {
        let c = crate::agent::PpoConfig::default();
        PpoSection {
            gamma: c.gamma,
            gae_lambda: c.gae_lambda,
            clip: c.clip,
            entropy_coef: c.entropy_coef,
            value_coef: c.value_coef,
            epochs: c.epochs,
            batch: c.batch,
            lr_start: c.lr_start,
            lr_end: c.lr_end,
            grad_clip: c.grad_clip,
            iterations: c.iterations,
            validation_interval: c.validation_interval,
            n_envs: c.n_envs,
        }
    }
}

impl PpoSection {
    pub fn to_config(&self) -> crate::agent::PpoConfig {
        crate::agent::PpoConfig {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip: self.clip,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            epochs: self.epochs,
            batch: self.batch,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            grad_clip: self.grad_clip,
            iterations: self.iterations,
            validation_interval: self.validation_interval,
            n_envs: self.n_envs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub accuracy: f64,
    pub completeness: f64,
    pub chamfer: f64,
    pub fscore: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        RewardSection {
            accuracy: w.accuracy,
            completeness: w.completeness,
            chamfer: w.chamfer,
            fscore: w.fscore,
        }
    }
}

impl RewardSection {
    pub fn to_weights(&self) -> RewardWeights {
        RewardWeights {
            accuracy: self.accuracy,
            completeness: self.completeness,
            chamfer: self.chamfer,
            fscore: self.fscore,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScannerSection {
    pub rays_per_frame: usize,
    pub max_range: f64,
    pub range_sigma: f64,
    pub frame_rate: f64,
}

impl Default for ScannerSection {
    fn default() -> Self {
        let s = ScannerSpec::default();
        ScannerSection {
            rays_per_frame: s.rays_per_frame,
            max_range: s.max_range,
            range_sigma: s.range_sigma,
            frame_rate: s.frame_rate,
        }
    }
}

impl ScannerSection {
    pub fn to_spec(&self) -> ScannerSpec {
        ScannerSpec {
            rays_per_frame: self.rays_per_frame,
            max_range: self.max_range,
            range_sigma: self.range_sigma,
            frame_rate: self.frame_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub scanblock_frames: usize,
    pub state_voxel: f64,
    pub encoder_seed: u64,
    /// Trajectory speed (m/s) in simulation.
    pub speed: f64,
    /// Sensor height above the floor (m) in simulation.
    pub sensor_height: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            scanblock_frames: 20,
            state_voxel: 0.5,
            encoder_seed: 0xcafe,
            speed: 1.0,
            sensor_height: 1.5,
        }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub smoothing: SmoothingSection,
    pub field: FieldSection,
    pub meshing: MeshingSection,
    pub metrics: MetricsSection,
    pub ppo: PpoSection,
    pub reward: RewardSection,
    pub scanner: ScannerSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing config: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing.to_config().validate()?;
        self.ppo.to_config().validate()?;
        self.reward.to_weights().validate()?;
        self.scanner.to_spec().validate()?;
        if !(self.field.pitch > 0.0) {
            return Err(Error::Config("field.pitch must be positive".into()));
        }
        if self.field.max_anchors == 0 {
            return Err(Error::Config("field.max_anchors must be positive".into()));
        }
        if !(self.meshing.voxel > 0.0 && self.meshing.step_voxel > 0.0) {
            return Err(Error::Config("meshing voxels must be positive".into()));
        }
        if !(self.metrics.threshold_cm > 0.0) {
            return Err(Error::Config("metrics.threshold_cm must be positive".into()));
        }
        if self.run.scanblock_frames == 0 {
            return Err(Error::Config("run.scanblock_frames must be positive".into()));
        }
        Ok(())
    }

    /// The runtime pipeline configuration this file describes.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            scanblock_frames: self.run.scanblock_frames,
            block_voxel: self.field.block_voxel,
            smoothing: self.smoothing.to_config(),
            smooth_normals: self.smoothing.enabled,
            map_pitch: self.field.pitch,
            learning_rate: self.field.learning_rate,
            train_iters: self.field.iters,
            eikonal_weight: self.field.eikonal_weight,
            eikonal_max_samples: self.field.eikonal_max_samples,
            feature_lr_scale: self.field.feature_lr_scale,
            max_anchors: self.field.max_anchors,
            step_voxel: self.meshing.step_voxel,
            final_voxel: self.meshing.voxel,
            region_margin_factor: self.meshing.region_margin_factor,
            threshold_cm: self.metrics.threshold_cm,
            step_sample_density: self.metrics.step_sample_density,
            eval_sample_density: self.metrics.sample_density,
            reward_weights: self.reward.to_weights(),
            state_voxel: self.run.state_voxel,
        }
    }
}
