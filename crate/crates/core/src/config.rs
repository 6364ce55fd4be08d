//! Run configuration: a TOML document tying a data source (synthetic
//! scenario or existing dataset directory) to a list of estimators and an
//! output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dual::EstimatorConfig;
use crate::error::{Error, Result};
use crate::kinematics::RobotGeometry;
use crate::sim::ScenarioConfig;

/// Parsed run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory for datasets, estimates, and metrics.
    pub out_dir: PathBuf,
    /// Synthetic data source. Exactly one of `scenario`/`dataset_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    /// Pre-existing dataset directory (must contain `sensors.csv` and
    /// `truth.csv`). Exactly one of `scenario`/`dataset_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_dir: Option<PathBuf>,
    /// Seed override applied to the scenario when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Leg geometry; the built-in default when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<RobotGeometry>,
    /// Estimators to run, in output order.
    #[serde(default, rename = "estimator")]
    pub estimators: Vec<EstimatorConfig>,
}

impl RunConfig {
    /// Validates the one-data-source / at-least-one-estimator invariants
    /// and every nested block.
    pub fn validate(&self) -> Result<()> {
        match (&self.scenario, &self.dataset_dir) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "config must set exactly one of `scenario` and `dataset_dir`, found both"
                        .into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "config must set one of `scenario` and `dataset_dir`".into(),
                ))
            }
            _ => {}
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one [[estimator]] block required".into()));
        }
        if let Some(scn) = &self.scenario {
            scn.validate()?;
        }
        for est in &self.estimators {
            est.validate()?;
        }
        Ok(())
    }

    /// The scenario with any top-level seed override applied.
    pub fn effective_scenario(&self) -> Option<ScenarioConfig> {
        self.scenario.clone().map(|mut scn| {
            if let Some(seed) = self.seed {
                scn.seed = seed;
            }
            scn
        })
    }

    /// Geometry to run with.
    pub fn effective_geometry(&self) -> RobotGeometry {
        self.geometry.unwrap_or_default()
    }

    /// Directory containing `sensors.csv`/`truth.csv` for estimation runs:
    /// the explicit dataset directory, or the output directory a previous
    /// `simulate` wrote into.
    pub fn data_dir(&self) -> &Path {
        self.dataset_dir.as_deref().unwrap_or(&self.out_dir)
    }
}

/// Parses a TOML run configuration, reporting unknown or malformed keys.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Loads and parses a run configuration file.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_run_config(&text)
}

/// Serializes a configuration back to TOML.
pub fn to_toml(config: &RunConfig) -> Result<String> {
    toml::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))
}
