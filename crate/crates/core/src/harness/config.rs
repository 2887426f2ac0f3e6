//! Declarative experiment configuration, parsed from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::generate::StrategyKind;
use crate::llm::LlmClientConfig;
use crate::utility::GbmConfig;

use super::HarnessError;

/// Sweep specification: every (strategy, feature count, sample size) cell of
/// the cross product runs once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: String,
    /// Real data CSV.
    pub real_data: PathBuf,
    /// Schema descriptor for the real data.
    pub schema: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
    pub strategies: Vec<StrategyKind>,
    /// Group feature used by group-based strategy cells (and for group-KL
    /// breakdowns whenever it survives feature selection).
    #[serde(default)]
    pub group_feature: Option<String>,
    pub feature_counts: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    /// Worker pool width; 0 means one worker per CPU.
    #[serde(default)]
    pub workers: usize,
    /// Real rows handed to the generator as its seed sample (also the MIA
    /// member set).
    #[serde(default = "default_seed_rows")]
    pub seed_rows: usize,
    /// Fraction of real rows held out for across-dataset testing (also the
    /// MIA non-member set).
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub gbm: GbmConfig,
    #[serde(default)]
    pub fidelity: FidelityConfig,
    #[serde(default)]
    pub degrade: DegradeConfig,
}

fn default_version() -> String {
    "1".to_string()
}
fn default_n_boot() -> usize {
    1000
}
fn default_seed_rows() -> usize {
    400
}
fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Reference,
    Remote(LlmClientConfig),
}

impl BackendConfig {
    pub fn kind_str(&self) -> &'static str {
        match self {
            BackendConfig::Reference => "reference",
            BackendConfig::Remote(_) => "remote",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FidelityConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_bins() -> usize {
    crate::fidelity::DEFAULT_BINS
}
fn default_epsilon() -> f64 {
    crate::fidelity::DEFAULT_EPSILON
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            bins: default_bins(),
            epsilon: default_epsilon(),
        }
    }
}

/// Post-generation drift applied to synthetic tables, emulating generators
/// whose output quality decays with requested dimensionality.
///
/// Within a cell the i-th selected covariate gets severity `slope * i`
/// (linear in feature index). When `dim_ref` is nonzero the whole schedule
/// additionally scales by `n_features / dim_ref`, so higher-dimensional
/// cells are degraded across the board, not just in their extra columns.
/// Slope 0 disables the transform.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DegradeConfig {
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub dim_ref: usize,
    /// Exponent on the dimensionality factor; values above 1 make quality
    /// decay compound as the requested feature count grows.
    #[serde(default = "default_dim_power")]
    pub dim_power: f64,
}

fn default_dim_power() -> f64 {
    1.0
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            slope: 0.0,
            dim_ref: 0,
            dim_power: default_dim_power(),
        }
    }
}

impl DegradeConfig {
    /// Severity of the covariate at position `index` (1-based rank) in the
    /// selected order, for a cell requesting `n_features` features.
    pub fn severity(&self, index: usize, n_features: usize) -> f64 {
        let factor = if self.dim_ref == 0 {
            1.0
        } else {
            (n_features as f64 / self.dim_ref as f64).powf(self.dim_power)
        };
        self.slope * (index + 1) as f64 * factor
    }
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {path:?}: {e}")))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{path:?}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.strategies.is_empty() {
            return Err(HarnessError::Config("strategies list is empty".into()));
        }
        if self.feature_counts.is_empty() || self.feature_counts.contains(&0) {
            return Err(HarnessError::Config("feature_counts must be positive".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(HarnessError::Config("sample_sizes must be positive".into()));
        }
        if self.strategies.contains(&StrategyKind::GroupBased) && self.group_feature.is_none() {
            return Err(HarnessError::Config(
                "group_based strategy requires group_feature".into(),
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(HarnessError::Config(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if self.seed_rows == 0 {
            return Err(HarnessError::Config("seed_rows must be positive".into()));
        }
        if self.degrade.slope < 0.0 {
            return Err(HarnessError::Config("degrade slope must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
real_data = "demo/real.csv"
schema = "demo/schema.txt"
output_dir = "out"
strategies = ["naive", "group_based"]
group_feature = "gender"
feature_counts = [5, 10]
sample_sizes = [1000]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        config.validate().unwrap();
        assert_eq!(config.n_boot, 1000);
        assert_eq!(config.gbm.n_trees, 200);
        assert_eq!(config.fidelity.bins, 64);
        assert!(matches!(config.backend, BackendConfig::Reference));
        assert_eq!(config.degrade.slope, 0.0);
    }

    #[test]
    fn group_strategy_without_group_feature_rejected() {
        let text = MINIMAL.replace("group_feature = \"gender\"\n", "");
        let config: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn remote_backend_parses() {
        let text = format!(
            "{MINIMAL}\n[backend]\nkind = \"remote\"\nendpoint = \"http://localhost:9/v1/chat/completions\"\nmodel = \"test\"\n"
        );
        let config: ExperimentConfig = toml::from_str(&text).unwrap();
        match config.backend {
            BackendConfig::Remote(ref c) => {
                assert_eq!(c.model, "test");
                assert_eq!(c.max_in_flight, 4);
            }
            _ => panic!("expected remote backend"),
        }
    }
}
