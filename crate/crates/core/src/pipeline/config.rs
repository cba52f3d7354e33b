//! Scenario documents and pipeline parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::local_reconstruction::ReconConfig;
use crate::par::Execution;
use crate::registration::{ConstraintConfig, PoseGraphConfig};
use crate::rotation_averaging::AveragingConfig;
use crate::simulator::{Ordering, SceneParams, StreamParams};

/// Pipeline parameters. Angles are in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mu_min: usize,
    pub mu_max: usize,
    /// Single-linkage cut on the Jaccard distance.
    pub eta: f64,
    pub eta_grow: f64,
    pub rho_lmax: f64,
    pub rho_gmax: f64,
    pub lambda_c: f64,
    /// Edge admission threshold on the inlier count.
    pub min_correspondences: u32,
    pub execution: Execution,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mu_min: 5,
            mu_max: 50,
            eta: 0.2,
            eta_grow: 0.15,
            rho_lmax: 10.0,
            rho_gmax: 10.0,
            lambda_c: 0.9,
            min_correspondences: 16,
            execution: Execution::Parallel,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn reconstruction(&self) -> ReconConfig {
        ReconConfig {
            mu_min: self.mu_min,
            mu_max: self.mu_max,
            eta_grow: self.eta_grow,
            rho_lmax_deg: self.rho_lmax,
            seed: self.seed,
            ..ReconConfig::default()
        }
    }

    pub fn averaging(&self) -> AveragingConfig {
        AveragingConfig { rho_gmax_deg: self.rho_gmax, ..AveragingConfig::default() }
    }

    pub fn constraints(&self) -> ConstraintConfig {
        ConstraintConfig { lambda_c: self.lambda_c, seed: self.seed, ..ConstraintConfig::default() }
    }

    pub fn pose_graph(&self) -> PoseGraphConfig {
        PoseGraphConfig::default()
    }
}

/// A complete synthetic run: scene, stream, pipeline parameters and output controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub scene: SceneParams,
    pub stream: StreamParams,
    pub pipeline: PipelineConfig,
    /// Master seed; the scene, stream, shuffles and RANSAC seeds derive from it.
    pub seed: u64,
    pub max_events: Option<usize>,
    pub snapshot_every: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            scene: SceneParams::default(),
            stream: StreamParams::default(),
            pipeline: PipelineConfig::default(),
            seed: 0,
            max_events: None,
            snapshot_every: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid scenario {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })
    }

    /// Replaces the seed everywhere it is used, including a shuffled ordering's.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Ordering::Shuffled { .. } = self.stream.ordering {
            self.stream.ordering = Ordering::Shuffled { seed };
        }
        self
    }

    /// Seeds as used by the run: scene and stream from the master seed, pipeline too.
    pub fn resolved(&self) -> (SceneParams, u64, StreamParams, PipelineConfig) {
        let mut stream = self.stream;
        stream.seed = self.seed;
        let mut pipeline = self.pipeline;
        pipeline.seed = self.seed;
        (self.scene, self.seed, stream, pipeline)
    }
}
