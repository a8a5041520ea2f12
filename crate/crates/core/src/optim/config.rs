//! Training configuration and its flat `key = value` text form.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional and falls back to the default listed in [`KEYS`]; unknown or
//! repeated keys are errors.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::network::NormMode;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Single-sample learning rate.
    pub base_lr: f64,
    pub minibatch_size: usize,
    pub momentum: f64,
    pub norm_mode: NormMode,
    pub gems_enabled: bool,
    /// Multiply `base_lr` by the minibatch size.
    pub lr_scale: bool,
    pub seed: u64,
    pub epochs: usize,
    /// Identity kernels for square convs except the first after a (un)pooling.
    pub identity_init: bool,
    /// Write wall-clock seconds to the metrics; off gives byte-reproducible CSVs.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.02,
            minibatch_size: 1,
            momentum: 0.9,
            norm_mode: NormMode::Agc,
            gems_enabled: false,
            lr_scale: true,
            seed: 0,
            epochs: 30,
            identity_init: false,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn effective_lr(&self) -> f64 {
        effective_lr(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Config("minibatch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// `base_lr × minibatch_size` when the scaling rule is on, else `base_lr`.
pub fn effective_lr(config: &TrainConfig) -> f64 {
    if config.lr_scale {
        config.base_lr * config.minibatch_size as f64
    } else {
        config.base_lr
    }
}

/// Everything a training run needs: optimizer settings, dataset shape and
/// encoder widths.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: DatasetSpec,
    pub widths: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let widths = vec![16, 32, 64, 64];
        let data = DatasetSpec {
            pool_depth: widths.len(),
            ..DatasetSpec::default()
        };
        ExperimentConfig {
            train: TrainConfig::default(),
            data,
            widths,
        }
    }
}

/// Recognised keys with their defaults.
pub const KEYS: &[(&str, &str)] = &[
    ("base_lr", "0.02"),
    ("minibatch", "1"),
    ("momentum", "0.9"),
    ("norm", "agc"),
    ("gems", "off"),
    ("lr_scale", "on"),
    ("seed", "0"),
    ("epochs", "30"),
    ("identity_init", "off"),
    ("record_timing", "on"),
    ("height", "64"),
    ("width", "64"),
    ("classes", "5"),
    ("n_train", "512"),
    ("n_val", "128"),
    ("data_seed", "1"),
    ("widths", "16,32,64,64"),
];

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected on/off, got '{value}'"
        ))),
    }
}

fn parse_num<N: FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl ExperimentConfig {
    /// Sets one key. Used by both the file parser and CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "base_lr" => t.base_lr = parse_num(key, value)?,
            "minibatch" => t.minibatch_size = parse_num(key, value)?,
            "momentum" => t.momentum = parse_num(key, value)?,
            "norm" => t.norm_mode = value.parse()?,
            "gems" => t.gems_enabled = parse_bool(key, value)?,
            "lr_scale" => t.lr_scale = parse_bool(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "identity_init" => t.identity_init = parse_bool(key, value)?,
            "record_timing" => t.record_timing = parse_bool(key, value)?,
            "height" => d.height = parse_num(key, value)?,
            "width" => d.width = parse_num(key, value)?,
            "classes" => d.classes = parse_num(key, value)?,
            "n_train" => d.n_train = parse_num(key, value)?,
            "n_val" => d.n_val = parse_num(key, value)?,
            "data_seed" => d.seed = parse_num(key, value)?,
            "widths" => {
                self.widths = value
                    .split(',')
                    .map(|w| parse_num::<usize>(key, w.trim()))
                    .collect::<Result<_>>()?;
                d.pool_depth = self.widths.len();
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(
                "widths must be a non-empty list of positive integers".into(),
            ));
        }
        self.data.validate()
    }

    /// Text form accepted by [`ExperimentConfig::parse`], listing every key.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let d = &self.data;
        let widths: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("base_lr", t.base_lr.to_string());
        kv("minibatch", t.minibatch_size.to_string());
        kv("momentum", t.momentum.to_string());
        kv("norm", t.norm_mode.to_string());
        kv("gems", on_off(t.gems_enabled).into());
        kv("lr_scale", on_off(t.lr_scale).into());
        kv("seed", t.seed.to_string());
        kv("epochs", t.epochs.to_string());
        kv("identity_init", on_off(t.identity_init).into());
        kv("record_timing", on_off(t.record_timing).into());
        kv("height", d.height.to_string());
        kv("width", d.width.to_string());
        kv("classes", d.classes.to_string());
        kv("n_train", d.n_train.to_string());
        kv("n_val", d.n_val.to_string());
        kv("data_seed", d.seed.to_string());
        kv("widths", widths.join(","));
        s
    }
}
