//! Configuration files and command-line overrides.
//!
//! Precedence is flag > file > default. The file is TOML with the same keys as
//! the long flags:
//!
//! ```toml
//! agents = 500
//! active = 10            # or: active_range = [5, 15]
//! alpha = 1.2
//! beta = 0.96
//! years = 20.0
//! burn_in_years = 2.0
//! seed = 42
//! paths = 100
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::ModelConfig;
use crate::error::{AsppError, Result};
use crate::model::{PsychoParams, SelectionMode};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_range: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub years: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trades_per_day: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub days_per_year: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in_years: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AsppError::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AsppError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            AsppError::Config { field, reason } => {
                AsppError::config(field, format!("{}: {reason}", path.display()))
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config file serializes")
    }

    /// Fully populated file describing `config`.
    pub fn from_config(config: &ModelConfig) -> Self {
        let (active, active_range) = match config.selection {
            SelectionMode::Fixed(m) => (Some(m), None),
            SelectionMode::UniformRandom { min, max } => (None, Some([min, max])),
        };
        ConfigFile {
            agents: Some(config.n_agents),
            active,
            active_range,
            alpha: Some(config.psycho.alpha),
            beta: Some(config.psycho.beta),
            years: Some(config.horizon_years),
            trades_per_day: Some(config.trades_per_day),
            days_per_year: Some(config.days_per_year),
            init_epsilon: Some(config.init_epsilon),
            seed: Some(config.master_seed),
            q_threshold: Some(config.q_threshold),
            r_threshold: Some(config.r_threshold),
            paths: Some(config.n_paths),
            burn_in_years: Some(config.burn_in_years),
            workers: config.workers,
        }
    }

    /// Fields set in `top` win over fields set in `self`.
    pub fn layered(&self, top: &ConfigFile) -> ConfigFile {
        // a selection given on top replaces both selection keys below it
        let (active, active_range) = if top.active.is_some() || top.active_range.is_some() {
            (top.active, top.active_range)
        } else {
            (self.active, self.active_range)
        };
        ConfigFile {
            agents: top.agents.or(self.agents),
            active,
            active_range,
            alpha: top.alpha.or(self.alpha),
            beta: top.beta.or(self.beta),
            years: top.years.or(self.years),
            trades_per_day: top.trades_per_day.or(self.trades_per_day),
            days_per_year: top.days_per_year.or(self.days_per_year),
            init_epsilon: top.init_epsilon.or(self.init_epsilon),
            seed: top.seed.or(self.seed),
            q_threshold: top.q_threshold.or(self.q_threshold),
            r_threshold: top.r_threshold.or(self.r_threshold),
            paths: top.paths.or(self.paths),
            burn_in_years: top.burn_in_years.or(self.burn_in_years),
            workers: top.workers.or(self.workers),
        }
    }

    /// Fills gaps from the defaults and validates.
    pub fn resolve(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let selection = match (self.active, self.active_range) {
            (Some(_), Some(_)) => {
                return Err(AsppError::config(
                    "active",
                    "give either active or active_range, not both",
                ))
            }
            (Some(m), None) => SelectionMode::Fixed(m),
            (None, Some([min, max])) => SelectionMode::UniformRandom { min, max },
            (None, None) => d.selection,
        };
        let config = ModelConfig {
            n_agents: self.agents.unwrap_or(d.n_agents),
            selection,
            psycho: PsychoParams {
                alpha: self.alpha.unwrap_or(d.psycho.alpha),
                beta: self.beta.unwrap_or(d.psycho.beta),
            },
            horizon_years: self.years.unwrap_or(d.horizon_years),
            trades_per_day: self.trades_per_day.unwrap_or(d.trades_per_day),
            days_per_year: self.days_per_year.unwrap_or(d.days_per_year),
            init_epsilon: self.init_epsilon.unwrap_or(d.init_epsilon),
            master_seed: self.seed.unwrap_or(d.master_seed),
            q_threshold: self.q_threshold.unwrap_or(d.q_threshold),
            r_threshold: self.r_threshold.unwrap_or(d.r_threshold),
            n_paths: self.paths.unwrap_or(d.n_paths),
            burn_in_years: self.burn_in_years.unwrap_or(d.burn_in_years),
            workers: self.workers.or(d.workers),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Reads the optional config file, applies the flag overrides, validates.
pub fn parse_config(path: Option<&Path>, flags: &ConfigFile) -> Result<ModelConfig> {
    let file = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    file.layered(flags).resolve()
}

/// Parses `MIN,MAX`.
pub fn parse_range(text: &str) -> std::result::Result<[usize; 2], String> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| format!("expected MIN,MAX, got {text:?}"))?;
    let min = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let max = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok([min, max])
}
