//! Application configuration: a TOML file mapping onto the pipeline,
//! overlay, depth, and oracle-backend settings, with a stable digest so
//! recorded runs can verify they replay under the same configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::depth_refine::{CameraIntrinsics, GripperSpec};
use crate::oracle::HttpOracleConfig;
use crate::pipeline::{DepthRefineParams, PipelineConfig};
use crate::tiling::OverlayStyle;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Camera and gripper parameters for depth refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    /// Depth hypotheses sampled between the camera and the surface.
    pub samples: u32,
    pub focal_length_px: f64,
    pub gripper_radius_m: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self { samples: 10, focal_length_px: 500.0, gripper_radius_m: 0.04 }
    }
}

/// Oracle backend settings. Only the HTTP backend needs configuration;
/// scripted and replay backends are parameterized on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub http: HttpOracleConfig,
}

/// Root of the configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub overlay: OverlayStyle,
    pub depth: DepthConfig,
    pub oracle: OracleSection,
}

impl AppConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.depth_params().map(|_| ())
    }

    /// Depth-refinement parameters derived from the depth section.
    pub fn depth_params(&self) -> Result<DepthRefineParams, ConfigError> {
        if self.depth.samples == 0 {
            return Err(ConfigError::Invalid("depth.samples must be at least 1".into()));
        }
        let intrinsics = CameraIntrinsics::new(self.depth.focal_length_px)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let gripper = GripperSpec::new(self.depth.gripper_radius_m)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(DepthRefineParams { intrinsics, gripper, samples: self.depth.samples })
    }

    /// Hex SHA-256 over the canonical JSON form. Stable across runs for
    /// equal configurations; used to pair transcripts with the settings
    /// they were recorded under.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("configs serialize");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Load and validate a TOML configuration file.
pub fn load_app_config(path: &Path) -> Result<AppConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config: AppConfig = toml::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_digest_stable() {
        let config = AppConfig::default();
        config.validate().unwrap();
        let d1 = config.digest();
        let d2 = AppConfig::default().digest();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 64);
        assert!(d1.chars().all(|c| c.is_ascii_hexdigit()));

        let mut changed = AppConfig::default();
        changed.pipeline.k = 8;
        changed.pipeline.grid_schedule =
            crate::pipeline::default_grid_schedule(11).unwrap();
        assert_ne!(changed.digest(), d1);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let config = AppConfig::default();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: AppConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);

        // A partial file keeps defaults for everything unspecified.
        let partial: AppConfig = toml::from_str(
            "[pipeline]\nk = 8\nm = 4\n\n[depth]\nsamples = 5\n",
        )
        .unwrap();
        assert_eq!(partial.pipeline.k, 8);
        assert_eq!(partial.pipeline.m, 4);
        assert_eq!(partial.pipeline.gamma, 0.4);
        assert_eq!(partial.depth.samples, 5);
        assert_eq!(partial.overlay, OverlayStyle::default());

        // Unknown keys are rejected rather than silently dropped.
        assert!(toml::from_str::<AppConfig>("[pipeline]\nkk = 8\n").is_err());
        assert!(toml::from_str::<AppConfig>("[pipelines]\nk = 8\n").is_err());
    }

    #[test]
    fn load_validates_file_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");

        std::fs::write(&path, "[pipeline]\nk = 6\nm = 3\n").unwrap();
        let config = load_app_config(&path).unwrap();
        assert_eq!(config.pipeline.k, 6);

        std::fs::write(&path, "[pipeline]\nm = 9\n").unwrap();
        assert!(matches!(load_app_config(&path), Err(ConfigError::Invalid(_))));

        std::fs::write(&path, "not toml [").unwrap();
        assert!(matches!(load_app_config(&path), Err(ConfigError::Parse(_))));

        assert!(matches!(
            load_app_config(&dir.path().join("absent.toml")),
            Err(ConfigError::Io { .. })
        ));
    }

    #[test]
    fn depth_params_bounds() {
        let mut config = AppConfig::default();
        let params = config.depth_params().unwrap();
        assert_eq!(params.samples, 10);
        config.depth.samples = 0;
        assert!(config.depth_params().is_err());
        config.depth.samples = 10;
        config.depth.focal_length_px = -1.0;
        assert!(config.depth_params().is_err());
        config.depth.focal_length_px = 500.0;
        config.depth.gripper_radius_m = 0.0;
        assert!(config.depth_params().is_err());
    }
}
