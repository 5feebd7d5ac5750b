//! Model and training configuration, its TOML schema and validation.
//!
//! A config file has two tables, `[model]` and `[train]`, plus an optional
//! `[train.reg]` table. Unknown keys are rejected. See `docs/config.md` for the
//! full schema.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How transmission delays are tied across connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayMechanism {
    /// One delay per connection.
    Synaptic,
    /// One delay per presynaptic neuron.
    Axonal,
    /// One delay per postsynaptic neuron.
    Dendritic,
    /// No delay stage.
    None,
}

impl DelayMechanism {
    pub const ALL: [DelayMechanism; 4] = [
        DelayMechanism::Synaptic,
        DelayMechanism::Axonal,
        DelayMechanism::Dendritic,
        DelayMechanism::None,
    ];

    pub fn has_delays(self) -> bool {
        self != DelayMechanism::None
    }

    pub fn name(self) -> &'static str {
        match self {
            DelayMechanism::Synaptic => "synaptic",
            DelayMechanism::Axonal => "axonal",
            DelayMechanism::Dendritic => "dendritic",
            DelayMechanism::None => "none",
        }
    }
}

impl fmt::Display for DelayMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DelayMechanism {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "synaptic" => Ok(Self::Synaptic),
            "axonal" => Ok(Self::Axonal),
            "dendritic" => Ok(Self::Dendritic),
            "none" => Ok(Self::None),
            other => Err(format!("unknown delay mechanism `{other}`")),
        }
    }
}

/// Learning-rate schedule kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    OneCycle,
    Cosine,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub input_channels: usize,
    pub classes: usize,
    pub beta: f64,
    pub threshold: f64,
    pub d_max: usize,
    pub surrogate_slope: f64,
    pub delay_mechanism: DelayMechanism,
    pub weight_sparsity: f64,
    pub delay_sparsity: f64,
    pub dropout_p: f64,
    pub batch_norm: bool,
    /// Initial Gaussian width. `None` means `d_max / 2`.
    pub sigma_init: Option<f64>,
    /// Readout decay. `None` reuses `beta`.
    pub readout_beta: Option<f64>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 512,
            input_channels: 140,
            classes: 35,
            beta: 0.33,
            threshold: 1.0,
            d_max: 15,
            surrogate_slope: 5.0,
            delay_mechanism: DelayMechanism::Axonal,
            weight_sparsity: 0.0,
            delay_sparsity: 0.0,
            dropout_p: 0.25,
            batch_norm: true,
            sigma_init: None,
            readout_beta: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn sigma_start(&self) -> f64 {
        self.sigma_init.unwrap_or(self.d_max as f64 / 2.0)
    }

    pub fn readout_decay(&self) -> f64 {
        self.readout_beta.unwrap_or(self.beta)
    }

    /// `(pre, post)` widths of every hidden layer.
    pub fn layer_widths(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let pre = if l == 0 { self.input_channels } else { self.hidden };
                (pre, self.hidden)
            })
            .collect()
    }
}

/// Firing-rate regularizer bounds and strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub lr_delays: f64,
    pub weight_scheduler: SchedulerKind,
    pub delay_scheduler: SchedulerKind,
    pub sigma_anneal_fraction: f64,
    /// Fraction of steps spent warming up in the one-cycle schedule.
    pub one_cycle_warmup: f64,
    /// One-cycle starts at `base / one_cycle_start_div`.
    pub one_cycle_start_div: f64,
    /// One-cycle ends at `base / one_cycle_final_div`.
    pub one_cycle_final_div: f64,
    pub reg: Option<RegConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 512,
            lr_weights: 1e-3,
            lr_delays: 0.1,
            weight_scheduler: SchedulerKind::OneCycle,
            delay_scheduler: SchedulerKind::Cosine,
            sigma_anneal_fraction: 0.25,
            one_cycle_warmup: 0.3,
            one_cycle_start_div: 25.0,
            one_cycle_final_div: 100.0,
            reg: None,
        }
    }
}

/// A complete config document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Parses and validates; violations become [`Error::InvalidConfig`].
    pub fn load_valid(path: &Path) -> Result<Self> {
        let cfg = Self::load(path)?;
        cfg.ensure_valid()?;
        Ok(cfg)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = validate_config(&self.model, &self.train);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(violations))
        }
    }
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Lists every violated invariant. An empty list means the configs are valid.
pub fn validate_config(cfg: &ModelConfig, tcfg: &TrainConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |ok: bool, msg: &str| {
        if !ok {
            out.push(msg.to_string());
        }
    };
    check(cfg.layers >= 1, "layers must be ≥ 1");
    check(cfg.hidden >= 1, "hidden must be ≥ 1");
    check(cfg.input_channels >= 1, "input_channels must be ≥ 1");
    check(cfg.classes >= 1, "classes must be ≥ 1");
    check(cfg.beta > 0.0 && cfg.beta < 1.0, "beta must lie in (0,1)");
    check(cfg.threshold > 0.0 && cfg.threshold.is_finite(), "threshold must be > 0");
    check(cfg.d_max >= 1, "d_max must be ≥ 1");
    check(cfg.surrogate_slope > 0.0 && cfg.surrogate_slope.is_finite(), "surrogate_slope must be > 0");
    check(in_unit(cfg.weight_sparsity), "weight_sparsity must lie in [0,1]");
    check(in_unit(cfg.delay_sparsity), "delay_sparsity must lie in [0,1]");
    check((0.0..1.0).contains(&cfg.dropout_p), "dropout_p must lie in [0,1)");
    if let Some(s) = cfg.sigma_init {
        check(s > 0.0 && s.is_finite(), "sigma_init must be > 0");
    }
    if let Some(b) = cfg.readout_beta {
        check(b > 0.0 && b < 1.0, "readout_beta must lie in (0,1)");
    }

    check(tcfg.epochs >= 1, "epochs must be ≥ 1");
    check(tcfg.batch_size >= 1, "batch_size must be ≥ 1");
    check(tcfg.lr_weights > 0.0 && tcfg.lr_weights.is_finite(), "lr_weights must be > 0");
    check(tcfg.lr_delays > 0.0 && tcfg.lr_delays.is_finite(), "lr_delays must be > 0");
    check(
        tcfg.sigma_anneal_fraction > 0.0 && tcfg.sigma_anneal_fraction <= 1.0,
        "sigma_anneal_fraction must lie in (0,1]",
    );
    check(
        tcfg.one_cycle_warmup > 0.0 && tcfg.one_cycle_warmup < 1.0,
        "one_cycle_warmup must lie in (0,1)",
    );
    check(tcfg.one_cycle_start_div >= 1.0, "one_cycle_start_div must be ≥ 1");
    check(tcfg.one_cycle_final_div >= 1.0, "one_cycle_final_div must be ≥ 1");
    if let Some(reg) = tcfg.reg {
        check(
            reg.alpha_min >= 0.0 && reg.alpha_min <= reg.alpha_max,
            "reg requires 0 ≤ alpha_min ≤ alpha_max",
        );
        check(reg.r >= 0.0 && reg.r.is_finite(), "reg.r must be ≥ 0");
    }
    out
}
