//! Hyperparameters and their flat `key=value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Pooling size: neighbor rows kept per relation.
    pub k: usize,
    /// Convolution window `s`, `1 ≤ s ≤ k`.
    pub window: usize,
    /// Number of cross-relation filters `P`.
    pub filters: usize,
    /// Embedding width `H`.
    pub hidden: usize,
    /// Number of stacked layers.
    pub depth: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub seed: u64,
    /// Replace convolution with a per-relation mean over pooled rows.
    pub ablation: bool,
    /// Concatenate the node's own features to the MLP input.
    pub self_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 2,
            window: 2,
            filters: 64,
            hidden: 256,
            depth: 3,
            lr: 1.5e-3,
            max_epochs: 200,
            patience: 50,
            train_ratio: 0.2,
            val_ratio: 0.1,
            test_ratio: 0.7,
            seed: 0,
            ablation: false,
            self_features: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 14] = [
        "k",
        "window",
        "filters",
        "hidden",
        "depth",
        "lr",
        "max_epochs",
        "patience",
        "train_ratio",
        "val_ratio",
        "test_ratio",
        "seed",
        "ablation",
        "self_features",
    ];

    /// Sets one field by name from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "k" => self.k = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "filters" => self.filters = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "train_ratio" => self.train_ratio = parse(key, value)?,
            "val_ratio" => self.val_ratio = parse(key, value)?,
            "test_ratio" => self.test_ratio = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ablation" => self.ablation = parse(key, value)?,
            "self_features" => self.self_features = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }

    /// Text form of one field.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "k" => self.k.to_string(),
            "window" => self.window.to_string(),
            "filters" => self.filters.to_string(),
            "hidden" => self.hidden.to_string(),
            "depth" => self.depth.to_string(),
            "lr" => format!("{:?}", self.lr),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "train_ratio" => format!("{:?}", self.train_ratio),
            "val_ratio" => format!("{:?}", self.val_ratio),
            "test_ratio" => format!("{:?}", self.test_ratio),
            "seed" => self.seed.to_string(),
            "ablation" => self.ablation.to_string(),
            "self_features" => self.self_features.to_string(),
            _ => return None,
        })
    }

    pub fn ratios(&self) -> (f64, f64, f64) {
        (self.train_ratio, self.val_ratio, self.test_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.window == 0 || self.window > self.k {
            return fail(format!(
                "window must lie in 1..={}, got {}",
                self.k, self.window
            ));
        }
        if self.filters == 0 || self.hidden == 0 || self.depth == 0 {
            return fail("filters, hidden and depth must be positive".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return fail(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        let (a, b, c) = self.ratios();
        if [a, b, c].iter().any(|r| !(*r > 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
            return fail(format!(
                "split ratios {a}/{b}/{c} must be positive and sum to 1"
            ));
        }
        Ok(())
    }
}
