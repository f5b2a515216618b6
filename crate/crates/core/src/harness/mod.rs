//! Sequential training across experiences, replay, evaluation and
//! checkpoints.

mod checkpoint;
mod record;
mod replay;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC};
pub use record::{MetricRow, RunRecord, METRICS_HEADER};
pub use replay::{build_batch, update_buffer, BatchItem, ReplayBuffer};
pub use train::{evaluate, train_sequential, EpochReport, EvalResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ModelError;
use crate::tensor::{AdamConfig, LrMode, LrSchedule, TensorError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path} is corrupt: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("metrics table: {0}")]
    Table(String),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

/// Which experiences a run trains on, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperienceSchedule {
    Flipflop,
    Compositional,
    Incremental,
    Full,
}

impl std::str::FromStr for ExperienceSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flipflop" | "flip-flop" => Ok(Self::Flipflop),
            "compositional" => Ok(Self::Compositional),
            "incremental" => Ok(Self::Incremental),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown schedule `{other}` (flipflop, compositional, incremental, full)")),
        }
    }
}

impl std::fmt::Display for ExperienceSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Flipflop => "flipflop",
            Self::Compositional => "compositional",
            Self::Incremental => "incremental",
            Self::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_per_experience: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    pub replay_fraction: f64,
    pub seeds: Vec<u64>,
    /// Evaluate after every `eval_every` epochs (and always at phase ends).
    pub eval_every: usize,
    /// Evaluate on only the first `n` test examples of each experience.
    pub eval_limit: Option<usize>,
    pub schedule: ExperienceSchedule,
    /// Clear the Adam moments at each experience boundary.
    pub reset_optimizer: bool,
}

impl TrainConfig {
    /// Large-scale settings: 100 epochs per experience, batch 500.
    pub fn paper() -> Self {
        Self {
            epochs_per_experience: 100,
            batch_size: 500,
            lr: LrSchedule::default(),
            adam: AdamConfig::default(),
            replay_fraction: 0.0,
            seeds: vec![0, 1, 2, 3],
            eval_every: 1,
            eval_limit: None,
            schedule: ExperienceSchedule::Flipflop,
            reset_optimizer: false,
        }
    }

    /// CPU-sized settings: 50 epochs per experience, batch 250.
    pub fn desk() -> Self {
        Self {
            epochs_per_experience: 50,
            batch_size: 250,
            lr: LrSchedule { base_lr: DESK_BASE_LR, min_lr: 0.0, t_max: 100, mode: LrMode::Global },
            ..Self::paper()
        }
    }

    pub fn validate(&self, train_size: usize) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Schedule(m));
        if self.epochs_per_experience == 0 {
            return bad("epochs_per_experience must be positive".into());
        }
        if self.batch_size == 0 || self.batch_size > train_size {
            return bad(format!("batch size {} must be in 1..={train_size}", self.batch_size));
        }
        if !(0.0..=1.0).contains(&self.replay_fraction) {
            return bad(format!("replay_fraction {} outside [0, 1]", self.replay_fraction));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.lr.t_max == 0 || !(self.lr.min_lr <= self.lr.base_lr) {
            return bad("lr schedule needs t_max > 0 and min_lr <= base_lr".into());
        }
        Ok(())
    }
}

/// Desk-scale base learning rate.
pub const DESK_BASE_LR: f64 = 1e-3;
