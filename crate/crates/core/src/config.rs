//! Training configuration in `key = value` text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Flow,
    Ddpm,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Flow => "flow",
            Paradigm::Ddpm => "ddpm",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flow" => Ok(Paradigm::Flow),
            "ddpm" => Ok(Paradigm::Ddpm),
            other => Err(Error::InvalidArgument(format!("unknown paradigm `{other}` (expected flow or ddpm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub k: usize,
    /// Points per reconstructed trajectory when no step count is conditioned.
    pub l: usize,
    pub blocks: usize,
    pub width: usize,
    pub control_dim: usize,
    pub cond_hidden: usize,
    pub lambda_od: f64,
    pub cond_dropout: f64,
    pub smooth_w: f64,
    pub bound_w: f64,
    pub seed: u64,
    pub early_stop_patience: u64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub paradigm: Paradigm,
    /// Diffusion steps used in training.
    pub t_max: usize,
    pub sample_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            lr: 1e-4,
            epochs: 100,
            k: 10,
            l: 120,
            blocks: 6,
            width: 256,
            control_dim: 128,
            cond_hidden: 512,
            lambda_od: 1.0,
            cond_dropout: 0.1,
            smooth_w: 0.0,
            bound_w: 0.0,
            seed: 0,
            early_stop_patience: 5000,
            plateau_patience: 200,
            plateau_factor: 0.5,
            paradigm: Paradigm::Flow,
            t_max: 300,
            sample_steps: 10,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| Error::Parse {
        line,
        msg: format!("invalid value `{value}` for `{key}`: {e}"),
    })
}

impl TrainConfig {
    pub const KEYS: [&'static str; 20] = [
        "batch_size",
        "lr",
        "epochs",
        "K",
        "L",
        "blocks",
        "width",
        "control_dim",
        "cond_hidden",
        "lambda_od",
        "cond_dropout",
        "smooth_w",
        "bound_w",
        "seed",
        "early_stop_patience",
        "plateau_patience",
        "plateau_factor",
        "paradigm",
        "T",
        "sample_steps",
    ];

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            match key {
                "batch_size" => cfg.batch_size = parse_value(key, value, line)?,
                "lr" => cfg.lr = parse_value(key, value, line)?,
                "epochs" => cfg.epochs = parse_value(key, value, line)?,
                "K" => cfg.k = parse_value(key, value, line)?,
                "L" => cfg.l = parse_value(key, value, line)?,
                "blocks" => cfg.blocks = parse_value(key, value, line)?,
                "width" => cfg.width = parse_value(key, value, line)?,
                "control_dim" => cfg.control_dim = parse_value(key, value, line)?,
                "cond_hidden" => cfg.cond_hidden = parse_value(key, value, line)?,
                "lambda_od" => cfg.lambda_od = parse_value(key, value, line)?,
                "cond_dropout" => cfg.cond_dropout = parse_value(key, value, line)?,
                "smooth_w" => cfg.smooth_w = parse_value(key, value, line)?,
                "bound_w" => cfg.bound_w = parse_value(key, value, line)?,
                "seed" => cfg.seed = parse_value(key, value, line)?,
                "early_stop_patience" => cfg.early_stop_patience = parse_value(key, value, line)?,
                "plateau_patience" => cfg.plateau_patience = parse_value(key, value, line)?,
                "plateau_factor" => cfg.plateau_factor = parse_value(key, value, line)?,
                "paradigm" => cfg.paradigm = parse_value(key, value, line)?,
                "T" => cfg.t_max = parse_value(key, value, line)?,
                "sample_steps" => cfg.sample_steps = parse_value(key, value, line)?,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key `{other}` (valid keys: {})", Self::KEYS.join(", ")),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 || self.k < 2 || self.l < 2 {
            return bad("batch_size must be positive, K and L at least 2".into());
        }
        if self.blocks == 0 || self.width == 0 || self.control_dim == 0 || self.cond_hidden == 0 {
            return bad("network dimensions must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return bad(format!("cond_dropout must lie in [0, 1], got {}", self.cond_dropout));
        }
        for (name, v) in [("lambda_od", self.lambda_od), ("smooth_w", self.smooth_w), ("bound_w", self.bound_w)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        if self.t_max == 0 || self.sample_steps == 0 {
            return bad("T and sample_steps must be positive".into());
        }
        if self.paradigm == Paradigm::Ddpm && self.sample_steps > self.t_max {
            return bad(format!("sample_steps {} exceeds T {}", self.sample_steps, self.t_max));
        }
        Ok(())
    }

    pub fn architecture(&self, zones: usize) -> Architecture {
        Architecture {
            k: self.k,
            width: self.width,
            blocks: self.blocks,
            control_dim: self.control_dim,
            cond_hidden: self.cond_hidden,
            zones,
            ..Architecture::default()
        }
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let values: [String; 20] = [
            self.batch_size.to_string(),
            self.lr.to_string(),
            self.epochs.to_string(),
            self.k.to_string(),
            self.l.to_string(),
            self.blocks.to_string(),
            self.width.to_string(),
            self.control_dim.to_string(),
            self.cond_hidden.to_string(),
            self.lambda_od.to_string(),
            self.cond_dropout.to_string(),
            self.smooth_w.to_string(),
            self.bound_w.to_string(),
            self.seed.to_string(),
            self.early_stop_patience.to_string(),
            self.plateau_patience.to_string(),
            self.plateau_factor.to_string(),
            self.paradigm.to_string(),
            self.t_max.to_string(),
            self.sample_steps.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
