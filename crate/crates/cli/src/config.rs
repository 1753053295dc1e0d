//! JSON run configuration. Every section is optional; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use screendual_core::fbp::{FbpOptions, RcInterpretation};
use screendual_core::market::MarketOptions;
use screendual_core::model::ModelConfig;
use screendual_core::primal::PrimalOptions;
use screendual_core::region::Thresholds;

/// A problem with the configuration itself (exit status 2).
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub primal: PrimalOptions,
    /// Decreasing regularization levels ending at 0; empty means a direct solve.
    #[serde(default)]
    pub continuation: Vec<f64>,
    #[serde(default)]
    pub dual: DualConfig,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default)]
    pub fbp: FbpOptions,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default)]
    pub rc: RcConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_model() -> ModelConfig {
    ModelConfig::new(0.0, 64).expect("default model is valid")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: default_model(),
            primal: PrimalOptions::default(),
            continuation: Vec::new(),
            dual: DualConfig::default(),
            region: RegionConfig::default(),
            fbp: FbpOptions::default(),
            market: MarketConfig::default(),
            rc: RcConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualConfig {
    /// Membership tolerance; one grid spacing when absent.
    pub tol_gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionConfig {
    pub tau_rank: Option<f64>,
    pub tau_angle_deg: Option<f64>,
    pub tau_bunch: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub resolution: f64,
    pub margin_cells: usize,
    pub tol_bilevel_cells: f64,
    pub bunch_agents: usize,
    pub ic_pairs: usize,
    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        let o = MarketOptions::default();
        MarketConfig {
            resolution: o.resolution,
            margin_cells: o.margin_cells,
            tol_bilevel_cells: o.tol_bilevel_cells,
            bunch_agents: o.bunch_agents,
            ic_pairs: 10_000,
            seed: 11,
        }
    }
}

impl MarketConfig {
    pub fn options(&self) -> MarketOptions {
        MarketOptions {
            resolution: self.resolution,
            margin_cells: self.margin_cells,
            tol_bilevel_cells: self.tol_bilevel_cells,
            bunch_agents: self.bunch_agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RcConfig {
    pub interpretations: Vec<RcInterpretation>,
    pub samples: usize,
}

impl Default for RcConfig {
    fn default() -> Self {
        RcConfig { interpretations: vec![RcInterpretation::Formula, RcInterpretation::Figure], samples: 48 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: screendual_core::Error| ConfigError::Invalid(e.to_string());
        self.model.validate().map_err(invalid)?;
        self.fbp.validate().map_err(invalid)?;
        if let Some(t) = self.dual.tol_gamma {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::Invalid(format!("dual.tol_gamma must be positive, got {t}")));
            }
        }
        for (name, v) in [("region.tau_rank", self.region.tau_rank), ("region.tau_angle_deg", self.region.tau_angle_deg), ("region.tau_bunch", self.region.tau_bunch)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if !(self.market.resolution > 0.0 && self.market.resolution.is_finite()) {
            return Err(ConfigError::Invalid(format!("market.resolution must be positive, got {}", self.market.resolution)));
        }
        if self.rc.samples < 2 {
            return Err(ConfigError::Invalid("rc.samples must be at least 2".into()));
        }
        if !self.continuation.is_empty() && *self.continuation.last().unwrap() != 0.0 {
            return Err(ConfigError::Invalid("continuation must end at 0".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Thresholds {
        let mut th = Thresholds::for_grid(&self.model.grid());
        if let Some(v) = self.region.tau_rank {
            th.rank = v;
        }
        if let Some(v) = self.region.tau_angle_deg {
            th.angle = v.to_radians();
        }
        if let Some(v) = self.region.tau_bunch {
            th.bunch = v;
        }
        th
    }

    pub fn tol_gamma(&self) -> f64 {
        self.dual.tol_gamma.unwrap_or_else(|| screendual_core::dual::default_tol_gamma(&self.model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.n_grid, 64);
    }

    #[test]
    fn unknown_keys_rejected_in_every_section() {
        for bad in [
            r#"{"modle": {}}"#,
            r#"{"model": {"a": 0, "n_grid": 16, "b": 1}}"#,
            r#"{"fbp": {"tol_mach": 1e-3}}"#,
            r#"{"primal": {"rho": 1}}"#,
            r#"{"market": {"pairs": 3}}"#,
        ] {
            assert!(serde_json::from_str::<RunConfig>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn fbp_keys_accepted() {
        let cfg: RunConfig = serde_json::from_str(r#"{"fbp": {"tol_match": 2e-3, "step": 5e-4, "knots": 8}}"#).unwrap();
        assert_eq!(cfg.fbp.knots, 8);
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg: RunConfig = serde_json::from_str(r#"{"model": {"a": -1, "n_grid": 16}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
