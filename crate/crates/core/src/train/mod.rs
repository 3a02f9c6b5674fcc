//! Losses, optimization, the two training phases, evaluation and the
//! ablation suite.

mod ablation;
mod audit;
mod fit;
mod loss;
mod metrics;
mod optim;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};
use crate::model::Task;
use crate::tensor::Precision;

pub use ablation::{
    ablation_configs, ablation_suite, AblationConfig, AblationGroup, AblationReport, AblationRow, InteractionBenefit,
    RunScore, REFERENCE_RESULTS,
};
pub use audit::{
    audit_model_config, gradient_audit, model_entry, AuditEntry, AuditReport, AUDIT_TOLERANCE, MODEL_EPS, MODEL_NOISE,
    RETRY_ABOVE, RETRY_EPS,
};
pub use fit::{
    evaluate, evaluate_conversations, plan_batches, pretrain, run_experiment, run_experiment_from, train, train_with,
    Chunk, Control, EpochRecord, LossReport, PretrainOutcome, RunResult, TrainOutcome,
};
pub use loss::{batch_loss, cross_entropy, focal_loss, label_index, BatchLoss, Scored, StepLoss};
pub use metrics::{argmax, label_names, Evaluation, MetricsReport};
pub use optim::{lr_factor, Adam, LrSchedule, BETA1, BETA2, EPSILON};
pub use report::{metrics_csv, metrics_table};

/// Which task losses drive training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    #[default]
    Joint,
    EmotionOnly,
    IntentOnly,
}

impl TaskMode {
    pub fn includes(self, task: Task) -> bool {
        matches!(
            (self, task),
            (TaskMode::Joint, _) | (TaskMode::EmotionOnly, Task::Emotion) | (TaskMode::IntentOnly, Task::Intent)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskMode::Joint => "joint",
            TaskMode::EmotionOnly => "emotion_only",
            TaskMode::IntentOnly => "intent_only",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "joint" => Ok(TaskMode::Joint),
            "emotion_only" | "emotion" => Ok(TaskMode::EmotionOnly),
            "intent_only" | "intent" => Ok(TaskMode::IntentOnly),
            other => Err(Error::Usage(format!(
                "unknown task mode \"{other}\" (expected joint, emotion_only or intent_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_pretrain: usize,
    pub epochs_train: usize,
    pub focal_gamma: f64,
    pub seed: u64,
    pub n_runs: usize,
    pub use_focal: bool,
    pub pretrained_init: bool,
    pub task_mode: TaskMode,
    pub lr_schedule: LrSchedule,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0002,
            batch_size: 32,
            epochs_pretrain: 60,
            epochs_train: 60,
            focal_gamma: 2.0,
            seed: 0,
            n_runs: 3,
            use_focal: true,
            pretrained_init: true,
            task_mode: TaskMode::Joint,
            lr_schedule: LrSchedule::FlatThenLinear,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(contract_err!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return Err(contract_err!("batch size must be at least 1"));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(contract_err!(
                "focal gamma must be non-negative, got {}",
                self.focal_gamma
            ));
        }
        if self.epochs_train == 0 {
            return Err(contract_err!("epochs_train must be at least 1"));
        }
        if self.pretrained_init && self.epochs_pretrain == 0 {
            return Err(contract_err!("epochs_pretrain must be at least 1 when pre-training"));
        }
        if self.n_runs == 0 {
            return Err(contract_err!("n_runs must be at least 1"));
        }
        Ok(())
    }

    /// Seed of run `r` of an experiment.
    pub fn run_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }
}
