//! Optimizers, plateau scheduling and the epoch loop.

mod config;
mod fit;
mod optim;
mod scheduler;

pub use config::{default_monitor, default_optimizer, DataConfig, LossKind, Monitor, TrainConfig, TRAIN_KEYS};
pub use fit::{evaluate_samples, fit, fit_with_progress, EpochRecord, Evaluation, TrainReport, REPORT_HEADER};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use scheduler::{Mode, PlateauConfig, PlateauScheduler};
