//! Experiment configuration in TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::MetricsFormat;
use super::synthetic::SyntheticSpec;
use crate::bound::BoundParams;
use crate::controller::{Clamps, ControllerMode};
use crate::exec::Execution;
use crate::model::{Architecture, PartitionScheme};
use crate::sim::{ControllerSettings, RunSettings, StopRule, StrategyConfig, StrategyState, TimeModel};
use crate::{Error, Result};

fn default_num_classes() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    /// IDX image/label file pairs; relative paths resolve against the
    /// working directory.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        eval_images: PathBuf,
        eval_labels: PathBuf,
        #[serde(default = "default_num_classes")]
        num_classes: usize,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    #[default]
    CubeRoot,
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub i0: f64,
    pub eps0: f64,
    pub i_min: u32,
    pub i_max: u32,
    pub eps_min: f64,
    pub eps_max: f64,
    #[serde(default)]
    pub mode: ControllerKind,
    /// Bound constants, required by the stationary mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundParams>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let s = ControllerSettings::default();
        Self {
            i0: s.i0,
            eps0: s.eps0,
            i_min: s.clamps.i_min,
            i_max: s.clamps.i_max,
            eps_min: s.clamps.eps_min,
            eps_max: s.clamps.eps_max,
            mode: ControllerKind::CubeRoot,
            bound: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Metrics file (`run`) or directory (`sweep`); stdout / `.` if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: MetricsFormat,
}

/// Full description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_clients: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub rounds: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_s: Option<f64>,
    pub strategy: StrategyConfig,
    /// Strategies run by `sweep`; defaults to `strategy` alone.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<StrategyConfig>,
    /// Accuracy used for the time-to-target summary of `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
    pub model: Architecture,
    pub partition: PartitionScheme,
    #[serde(default)]
    pub execution: Execution,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub time: TimeModel,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<Vec<StrategyConfig>>,
    pub rounds: Option<u64>,
    pub time_budget_s: Option<f64>,
    pub uplink_bps: Option<f64>,
    pub downlink_bps: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<MetricsFormat>,
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Apply command-line overrides. A multi-strategy override replaces the
    /// sweep list and its first entry becomes `strategy`.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(list) = &o.strategy {
            if let Some(first) = list.first() {
                self.strategy = *first;
            }
            self.sweep = if list.len() > 1 { list.clone() } else { Vec::new() };
        }
        if let Some(v) = o.rounds {
            self.rounds = v;
        }
        if let Some(v) = o.time_budget_s {
            self.time_budget_s = Some(v);
        }
        if let Some(v) = o.uplink_bps {
            self.time.uplink_bps = v;
        }
        if let Some(v) = o.downlink_bps {
            self.time.downlink_bps = v;
        }
        if let Some(v) = &o.out {
            self.output.path = Some(v.clone());
        }
        if let Some(v) = o.format {
            self.output.format = v;
        }
    }

    /// Check every setting and that referenced files exist. Does no work.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.num_clients == 0 {
            return Err(Error::config("num_clients must be at least 1"));
        }
        if let Some(t) = self.time_budget_s {
            if !(t > 0.0) {
                return Err(Error::config(format!("time_budget_s must be positive, got {t}")));
            }
        }
        if let Some(a) = self.target_accuracy {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::config(format!("target_accuracy must be in (0, 1], got {a}")));
            }
        }
        match &self.dataset {
            DatasetConfig::Synthetic(s) => {
                s.validate()?;
                if s.num_examples < self.num_clients {
                    return Err(Error::config("fewer training examples than clients"));
                }
            }
            DatasetConfig::Idx { train_images, train_labels, eval_images, eval_labels, num_classes } => {
                for p in [train_images, train_labels, eval_images, eval_labels] {
                    if !p.is_file() {
                        return Err(Error::config(format!("dataset file {} does not exist", p.display())));
                    }
                }
                if *num_classes < 2 {
                    return Err(Error::config("num_classes must be at least 2"));
                }
            }
        }
        self.time.validate(self.num_clients)?;
        let controller = self.controller_settings_checked()?;
        for s in self.strategies() {
            StrategyState::new(s, &controller)?;
        }
        Ok(())
    }

    fn controller_settings_checked(&self) -> Result<ControllerSettings> {
        let c = &self.controller;
        let clamps = Clamps { i_min: c.i_min, i_max: c.i_max, eps_min: c.eps_min, eps_max: c.eps_max };
        clamps.validate()?;
        let mode = match (c.mode, c.bound) {
            (ControllerKind::CubeRoot, _) => ControllerMode::CubeRoot,
            (ControllerKind::Stationary, Some(bound)) => {
                bound.validate().map_err(|e| Error::config(format!("controller.bound: {e}")))?;
                ControllerMode::Stationary { bound }
            }
            (ControllerKind::Stationary, None) => return Err(Error::config("stationary controller needs [controller.bound]")),
        };
        Ok(ControllerSettings { i0: c.i0, eps0: c.eps0, clamps, mode })
    }

    /// Controller settings; call after [`validate`](Self::validate).
    pub fn controller_settings(&self) -> ControllerSettings {
        self.controller_settings_checked().unwrap_or_default()
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings { seed: self.seed, lr: self.lr, batch_size: self.batch_size, time_model: self.time.clone(), execution: self.execution }
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule { rounds: self.rounds, time_budget_s: self.time_budget_s }
    }

    /// `sweep` if set, otherwise just `strategy`.
    pub fn strategies(&self) -> Vec<StrategyConfig> {
        if self.sweep.is_empty() {
            vec![self.strategy]
        } else {
            self.sweep.clone()
        }
    }

    /// The same experiment with a single strategy and no sweep list.
    pub fn with_strategy(&self, strategy: StrategyConfig) -> Self {
        Self { strategy, sweep: Vec::new(), ..self.clone() }
    }

    /// SHA-256 of the canonical TOML of everything except the output
    /// section and the execution mode, neither of which changes results.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = Self { output: OutputConfig::default(), execution: Execution::default(), ..self.clone() };
        Ok(sha256_hex(&canonical.to_toml()?))
    }

    /// Hash of the shared environment: like [`config_hash`](Self::config_hash)
    /// but also ignoring the strategy choice.
    pub fn environment_hash(&self) -> Result<String> {
        let canonical = Self {
            strategy: StrategyConfig::Eafo,
            sweep: Vec::new(),
            target_accuracy: None,
            execution: Execution::default(),
            output: OutputConfig::default(),
            ..self.clone()
        };
        Ok(sha256_hex(&canonical.to_toml()?))
    }
}
