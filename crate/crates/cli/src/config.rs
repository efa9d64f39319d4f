//! Experiment configuration files (`"schema": "cc-tube-mpc/1"`).

use std::path::{Path, PathBuf};

use cctmpc::controllers::ControllerConfig;
use cctmpc::simulator::{SampleSpec, CONVERGENCE_TOL};
use cctmpc::system::SamplingPolicy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA: &str = "cc-tube-mpc/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    /// System file, relative to the config file.
    pub system: PathBuf,
    pub template: TemplateConfig,
    #[serde(default)]
    pub refinement: RefinementConfig,
    #[serde(default)]
    pub rci: RciConfig,
    #[serde(default)]
    pub controllers: Vec<ControllerConfig>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    Simplex,
    Box,
    File,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateConfig {
    pub source: TemplateSource,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Run the transformation NLP on the starting template.
    #[serde(default = "yes")]
    pub nlp: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementConfig {
    #[serde(default)]
    pub i_max: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RciCostName {
    #[default]
    VertexSpread,
    Norm,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RciConfig {
    #[serde(default)]
    pub cost: RciCostName,
    /// Precomputed RCI parameters, relative to the config file.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomStarts {
    pub sampler: SampleSpec,
    /// Number of feasible starts to keep.
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub steps: usize,
    #[serde(default = "one")]
    pub seeds_per_start: usize,
    #[serde(default)]
    pub x0: Vec<Vec<f64>>,
    #[serde(default)]
    pub random_starts: Option<RandomStarts>,
    #[serde(default)]
    pub policy: SamplingPolicy,
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
}

fn one() -> usize {
    1
}

fn default_tol() -> f64 {
    CONVERGENCE_TOL
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Sampler for stabilizable-region probing; defaults to 1000 samples of the bounding box of `X`.
    #[serde(default)]
    pub region_probe: Option<SampleSpec>,
    /// Hausdorff distance from the hull of feasible samples to `X`.
    #[serde(default = "yes")]
    pub hausdorff: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { region_probe: None, hausdorff: true }
    }
}

/// Parsed config with its location and content hash.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base_dir, hash: hex::encode(Sha256::digest(&bytes)) };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        if c.schema != SCHEMA {
            return Err(CliError::Usage(format!("unsupported schema {:?}, expected {SCHEMA:?}", c.schema)));
        }
        let mut files = vec![c.system.clone()];
        match (c.template.source, &c.template.path) {
            (TemplateSource::File, None) => return Err(CliError::Usage("template source \"file\" needs a path".into())),
            (TemplateSource::File, Some(p)) => files.push(p.clone()),
            (_, Some(_)) => return Err(CliError::Usage("template path is only valid with source \"file\"".into())),
            _ => {}
        }
        files.extend(c.rci.file.clone());
        for f in files {
            let p = self.resolve(&f);
            if !p.is_file() {
                return Err(CliError::Usage(format!("referenced file {} does not exist", p.display())));
            }
        }
        for ctrl in &c.controllers {
            if !(ctrl.gamma > 0.0 && ctrl.gamma < 1.0) {
                return Err(CliError::Usage(format!("gamma must lie in (0, 1), got {}", ctrl.gamma)));
            }
            if ctrl.horizon < 1 {
                return Err(CliError::Usage("horizon N must be at least 1".into()));
            }
        }
        Ok(())
    }
}
