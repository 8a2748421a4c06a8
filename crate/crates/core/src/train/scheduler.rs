use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Lower metric values are better.
    Min,
    /// Higher metric values are better.
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauConfig {
    pub mode: Mode,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative margin a metric must beat the best value by to count.
    pub threshold: f64,
}

impl PlateauConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            factor: 0.5,
            patience: 2,
            min_lr: 1e-6,
            threshold: 1e-4,
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored metric has
/// failed to improve for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    lr: f64,
    best: Option<f64>,
    epochs_since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig, lr: f64) -> Result<Self> {
        let c = &config;
        if !(c.factor > 0.0 && c.factor < 1.0) {
            return Err(Error::Config(format!("field `plateau_factor`: {} outside (0, 1)", c.factor)));
        }
        if c.patience == 0 {
            return Err(Error::Config("field `plateau_patience` must be at least 1".into()));
        }
        if !(c.min_lr >= 0.0) || !(c.threshold >= 0.0) {
            return Err(Error::Config("field `min_lr` and the threshold must be non-negative".into()));
        }
        Ok(Self {
            config,
            lr,
            best: None,
            epochs_since_improvement: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epochs_since_improvement
    }

    /// Whether `metric` beats the best value so far by the relative margin.
    pub fn is_improvement(&self, metric: f64) -> bool {
        let Some(best) = self.best else { return true };
        let margin = best.abs() * self.config.threshold;
        match self.config.mode {
            Mode::Min => metric < best - margin,
            Mode::Max => metric > best + margin,
        }
    }

    /// Records one epoch's metric and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64) -> Result<f64> {
        if !metric.is_finite() {
            return Err(Error::InvalidArgument(format!("scheduler metric {metric} is not finite")));
        }
        if self.is_improvement(metric) {
            self.best = Some(metric);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.epochs_since_improvement = 0;
            }
        }
        Ok(self.lr)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Min => "min",
            Mode::Max => "max",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Mode::Min),
            "max" => Ok(Mode::Max),
            other => Err(Error::Config(format!("unknown scheduler mode `{other}`"))),
        }
    }
}
