use std::fmt;
use std::str::FromStr;

use super::optim::{OptimizerConfig, OptimizerKind};
use super::scheduler::{Mode, PlateauConfig};
use crate::config::KeyValues;
use crate::data::{AugmentationConfig, SplitFractions};
use crate::error::{Error, Result};
use crate::models::{Family, Head, ModelSpec, SPEC_KEYS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Cross entropy on sigmoid probabilities.
    Bce,
    /// Cross entropy computed from pre-sigmoid logits.
    BceWithLogits,
}

impl LossKind {
    pub fn for_head(head: Head) -> Self {
        match head {
            Head::Probabilities => LossKind::Bce,
            Head::Logits => LossKind::BceWithLogits,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::BceWithLogits => "bce_with_logits",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "bce_with_logits" => Ok(LossKind::BceWithLogits),
            other => Err(Error::Config(format!(
                "field `loss`: unknown loss `{other}` (expected bce or bce_with_logits)"
            ))),
        }
    }
}

/// Validation quantity driving the scheduler and checkpoint selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monitor {
    ValLoss,
    ValAuc,
}

impl Monitor {
    pub fn mode(self) -> Mode {
        match self {
            Monitor::ValLoss => Mode::Min,
            Monitor::ValAuc => Mode::Max,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Monitor::ValLoss => "val_loss",
            Monitor::ValAuc => "val_auc",
        }
    }
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Monitor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val_loss" => Ok(Monitor::ValLoss),
            "val_auc" => Ok(Monitor::ValAuc),
            other => Err(Error::Config(format!(
                "field `monitor`: unknown metric `{other}` (expected val_loss or val_auc)"
            ))),
        }
    }
}

/// Where training images come from when run through the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Number of images generated for the synthetic corpus.
    pub synth_samples: usize,
    pub split: SplitFractions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synth_samples: 2500,
            split: SplitFractions::default(),
        }
    }
}

/// Everything one training run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
    pub monitor: Monitor,
    pub plateau: PlateauConfig,
    pub augmentation: AugmentationConfig,
    /// Root seed of every random stream in the run.
    pub seed: u64,
    /// Threads preparing batches. Results do not depend on it.
    pub workers: usize,
    /// Write measured epoch durations into the report instead of zeros.
    pub report_wall_clock: bool,
    pub data: DataConfig,
}

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "optimizer",
    "lr",
    "momentum",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "loss",
    "monitor",
    "plateau_factor",
    "plateau_patience",
    "min_lr",
    "hflip_prob",
    "rotation_max_degrees",
    "workers",
    "report_wall_clock",
    "synth_samples",
    "val_fraction",
    "test_fraction",
];

/// Optimizer each family trains with unless configured otherwise.
pub fn default_optimizer(family: Family) -> OptimizerKind {
    match family {
        Family::VitV1_32 => OptimizerKind::AdamW,
        Family::VitV2_32 => OptimizerKind::Sgd,
        Family::VitResnet16 | Family::Cnn | Family::Resnet => OptimizerKind::Adam,
    }
}

/// Metric each family monitors unless configured otherwise.
pub fn default_monitor(family: Family) -> Monitor {
    match family {
        Family::VitV1_32 | Family::VitV2_32 => Monitor::ValAuc,
        _ => Monitor::ValLoss,
    }
}

impl TrainConfig {
    /// Family defaults.
    pub fn new(spec: ModelSpec) -> Self {
        let family = spec.family;
        let monitor = default_monitor(family);
        let seed = spec.seed;
        let target = (spec.height, spec.width);
        Self {
            epochs: 10,
            batch_size: 16,
            optimizer: OptimizerConfig::new(default_optimizer(family)),
            loss: LossKind::for_head(family.head()),
            monitor,
            plateau: PlateauConfig::new(monitor.mode()),
            augmentation: AugmentationConfig {
                target,
                hflip_prob: 0.5,
                rotation_max_degrees: 10.0,
            },
            seed,
            workers: 1,
            report_wall_clock: false,
            data: DataConfig::default(),
            spec,
        }
    }

    pub fn known_keys() -> Vec<&'static str> {
        SPEC_KEYS.iter().chain(TRAIN_KEYS).copied().collect()
    }

    /// Parses a flat config, rejecting unknown keys. Absent keys take the
    /// family defaults; `seed` seeds both initialisation and training.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(&Self::known_keys())?;
        let spec = ModelSpec::from_kv(kv)?;
        let d = TrainConfig::new(spec);
        let kind: OptimizerKind = kv.parsed_or("optimizer", d.optimizer.kind)?;
        let od = OptimizerConfig::new(kind);
        let monitor: Monitor = kv.parsed_or("monitor", d.monitor)?;
        let cfg = TrainConfig {
            epochs: kv.parsed_or("epochs", d.epochs)?,
            batch_size: kv.parsed_or("batch_size", d.batch_size)?,
            optimizer: OptimizerConfig {
                kind,
                lr: kv.parsed_or("lr", od.lr)?,
                momentum: kv.parsed_or("momentum", od.momentum)?,
                beta1: kv.parsed_or("beta1", od.beta1)?,
                beta2: kv.parsed_or("beta2", od.beta2)?,
                eps: kv.parsed_or("eps", od.eps)?,
                weight_decay: kv.parsed_or("weight_decay", od.weight_decay)?,
            },
            loss: kv.parsed_or("loss", d.loss)?,
            monitor,
            plateau: PlateauConfig {
                mode: monitor.mode(),
                factor: kv.parsed_or("plateau_factor", d.plateau.factor)?,
                patience: kv.parsed_or("plateau_patience", d.plateau.patience)?,
                min_lr: kv.parsed_or("min_lr", d.plateau.min_lr)?,
                threshold: d.plateau.threshold,
            },
            augmentation: AugmentationConfig {
                target: d.augmentation.target,
                hflip_prob: kv.parsed_or("hflip_prob", d.augmentation.hflip_prob)?,
                rotation_max_degrees: kv.parsed_or("rotation_max_degrees", d.augmentation.rotation_max_degrees)?,
            },
            seed: d.seed,
            workers: kv.parsed_or("workers", d.workers)?,
            report_wall_clock: kv.parsed_or("report_wall_clock", d.report_wall_clock)?,
            data: DataConfig {
                synth_samples: kv.parsed_or("synth_samples", d.data.synth_samples)?,
                split: SplitFractions {
                    val: kv.parsed_or("val_fraction", d.data.split.val)?,
                    test: kv.parsed_or("test_fraction", d.data.split.test)?,
                },
            },
            spec: d.spec,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.optimizer.validate()?;
        self.augmentation.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("field `epochs` must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("field `batch_size` must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("field `workers` must be at least 1".into());
        }
        if self.data.synth_samples == 0 {
            return bad("field `synth_samples` must be at least 1".into());
        }
        let s = self.data.split;
        if !(s.val >= 0.0 && s.test >= 0.0 && s.val + s.test < 1.0) {
            return bad(format!(
                "fields `val_fraction` {} and `test_fraction` {} must be non-negative and leave a training share",
                s.val, s.test
            ));
        }
        let expected = LossKind::for_head(self.spec.family.head());
        if self.loss != expected {
            return bad(format!(
                "field `loss`: family/loss pairing violated: {} requires `{expected}` (its head emits {}), got `{}`",
                self.spec.family,
                match self.spec.family.head() {
                    Head::Logits => "logits",
                    Head::Probabilities => "probabilities",
                },
                self.loss
            ));
        }
        Ok(())
    }

    /// Every setting, defaults included, as flat key-value text input.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.spec.to_kv();
        let o = &self.optimizer;
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("optimizer", o.kind);
        kv.set("lr", o.lr);
        kv.set("momentum", o.momentum);
        kv.set("beta1", o.beta1);
        kv.set("beta2", o.beta2);
        kv.set("eps", o.eps);
        kv.set("weight_decay", o.weight_decay);
        kv.set("loss", self.loss);
        kv.set("monitor", self.monitor);
        kv.set("plateau_factor", self.plateau.factor);
        kv.set("plateau_patience", self.plateau.patience);
        kv.set("min_lr", self.plateau.min_lr);
        kv.set("hflip_prob", self.augmentation.hflip_prob);
        kv.set("rotation_max_degrees", self.augmentation.rotation_max_degrees);
        kv.set("workers", self.workers);
        kv.set("report_wall_clock", self.report_wall_clock);
        kv.set("synth_samples", self.data.synth_samples);
        kv.set("val_fraction", self.data.split.val);
        kv.set("test_fraction", self.data.split.test);
        kv
    }
}
