//! Run configuration: defaults, overridden by a TOML file, overridden by
//! flags.

use std::path::Path;

use anyhow::{Context, Result};
use scenegram::bp::{BpConfig, Schedule};
use scenegram::em::{EmConfig, SelfRootingStatistic};
use scenegram::experiments::curves::NoiseModel;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bp: BpConfig,
    pub em: EmSettings,
    pub noise: NoiseSettings,
    pub capacity: Capacity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSettings {
    pub self_rooting: SelfRootingStatistic,
    pub learn_self_rooting: bool,
    pub param_floor: f64,
    pub tolerance: f64,
    pub warm_start: bool,
}

impl Default for EmSettings {
    fn default() -> Self {
        let d = EmConfig::default();
        EmSettings {
            self_rooting: d.self_rooting,
            learn_self_rooting: d.learn_self_rooting,
            param_floor: d.param_floor,
            tolerance: d.tolerance,
            warm_start: d.warm_start,
        }
    }
}

/// Pixel intensity model for image evidence and corruption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        let d = NoiseModel::default();
        NoiseSettings { mu0: d.mu0, mu1: d.mu1, sigma: d.sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Capacity {
    /// Refuse to compile grammars with more factor-graph variables.
    pub max_variables: usize,
}

impl Default for Capacity {
    fn default() -> Self {
        Capacity { max_variables: 50_000_000 }
    }
}

/// Flag-level overrides; `None` keeps the file or default value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub schedule: Option<Schedule>,
    pub damping: Option<f64>,
    pub max_iters: Option<usize>,
    pub tolerance: Option<f64>,
    pub threads: Option<usize>,
}

impl Config {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Config> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Config::default(),
        };
        if let Some(s) = o.schedule {
            cfg.bp.schedule = s;
        }
        if let Some(d) = o.damping {
            cfg.bp.damping = d;
        }
        if let Some(m) = o.max_iters {
            cfg.bp.max_iters = m;
        }
        if let Some(t) = o.tolerance {
            cfg.bp.tolerance = t;
        }
        if let Some(t) = o.threads {
            cfg.bp.threads = t;
        }
        cfg.bp.validate()?;
        Ok(cfg)
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            bp: self.bp.clone(),
            self_rooting: self.em.self_rooting,
            learn_self_rooting: self.em.learn_self_rooting,
            param_floor: self.em.param_floor,
            tolerance: self.em.tolerance,
            warm_start: self.em.warm_start,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel { mu0: self.noise.mu0, mu1: self.noise.mu1, sigma: self.noise.sigma }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
