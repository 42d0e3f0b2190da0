//! Run configuration, read from TOML.
//!
//! Every key is optional; missing keys take the defaults below. Example:
//!
//! ```toml
//! seed = 7
//!
//! [scene]
//! width = 32
//! height = 32
//! min_layers = 2
//! max_layers = 3
//!
//! [train]
//! steps = 4000
//! batch_size = 16
//! lr = 0.002
//!
//! [infer]
//! ddim_steps = 10
//! variations = 8
//!
//! [eval]
//! ks = [1, 2, 4, 8]
//!
//! [service]
//! port = 8080
//! data_dir = "amodal-data"
//! seeds = 2
//! max_retries = 3
//! ```
//!
//! `AMODAL_DATA_DIR` overrides `service.data_dir`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cosynth::ServiceConfig;
use crate::diffusion::TrainConfig;
use crate::scene::SceneConfig;

pub const DATA_DIR_ENV: &str = "AMODAL_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    /// Native square side of toy models; other sizes are resampled.
    pub model_side: u32,
    pub ddim_steps: usize,
    pub eta: f64,
    /// Clip predicted clean latents to `[-clip, clip]`; 0 disables.
    pub clip: f64,
    /// Variations per instance in full mode.
    pub variations: usize,
    /// Second-pass strength of the global-to-local mode.
    pub two_pass_strength: f64,
    pub two_pass_context: f64,
    pub remote_timeout_secs: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { model_side: 32, ddim_steps: 10, eta: 0.0, clip: 1.0, variations: 8, two_pass_strength: 0.5, two_pass_context: 0.25, remote_timeout_secs: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: crate::eval::DEFAULT_KS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSection {
    pub port: u16,
    pub data_dir: PathBuf,
    #[serde(flatten)]
    pub workflow: ServiceConfig,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self { port: 8080, data_dir: PathBuf::from("amodal-data"), workflow: ServiceConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    /// Root of every random substream.
    pub seed: u64,
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
    pub service: ServiceSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Applies `AMODAL_DATA_DIR` when set.
    pub fn apply_env(&mut self) {
        if let Some(d) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            self.service.data_dir = PathBuf::from(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig { seed: 9, ..Default::default() };
        c.train.t_range = Some((3, 40));
        c.train.optimizer = crate::diffusion::Optimizer::Sgd;
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(toml::from_str::<RunConfig>(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 3\n[train]\nsteps = 10\n[service]\nseeds = 4\n").unwrap();
        assert_eq!((c.seed, c.train.steps, c.train.lr, c.service.workflow.seeds, c.service.port), (3, 10, 2e-3, 4, 8080));
        assert!(toml::from_str::<RunConfig>("seed = \"x\"").is_err());
    }
}
