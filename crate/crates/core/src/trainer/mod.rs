//! Two-stage training: cross-entropy cold start on teacher traces, then
//! group-relative RL with the composite reward, plus evaluation.

mod eval;
mod optim;
mod pipeline;
mod rl;
mod sft;

pub use eval::{evaluate, DifficultyRow, EvalConfig, EvalReport, TraceSample};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use pipeline::{run_pipeline, PipelineSummary, RunFiles, EVAL_ID_BASE, METRICS_HEADER, SFT_ID_BASE};
pub use rl::{acpo_step, LoggedRollout, RlTrainer, StepMetrics, StepOutcome};
pub use sft::{sft_fit, teacher_dataset, SftError};

use serde::{Deserialize, Serialize};

use crate::budget::BudgetError;
use crate::env::{EnvError, OutcomeModel, DIFFICULTY_LEVELS};
use crate::grpo::{GrpoError, SurrogateConfig};
use crate::policy::PolicyError;
use crate::reward::{RewardError, RewardWeights};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Cold-start settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    /// Number of teacher traces.
    pub tasks: usize,
    /// Full-batch gradient steps.
    pub epochs: usize,
    /// Initial step size; adapted by backtracking so the loss never rises.
    pub learning_rate: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            tasks: 500,
            epochs: 150,
            learning_rate: 0.5,
        }
    }
}

/// Full run configuration.
///
/// The RL learning rate is sized for the toy policy. Billion-parameter
/// models use something like `1e-6`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Responses sampled per query.
    pub group_size: usize,
    pub batch_queries: usize,
    pub learning_rate: f64,
    /// Passes over the RL training tasks.
    pub epochs: usize,
    pub max_tokens: usize,
    /// Optimizer steps per behavior snapshot.
    pub inner_epochs: usize,
    pub train_temperature: f64,
    pub eval_temperature: f64,
    pub eval_samples_per_task: usize,
    pub train_tasks: usize,
    pub eval_tasks: usize,
    /// Probabilities of difficulty levels 1..=5.
    pub difficulty_mix: Vec<f64>,
    /// Write every RL rollout to `rollouts.jsonl`.
    pub log_rollouts: bool,
    pub weights: RewardWeights,
    pub surrogate: SurrogateConfig,
    pub outcome: OutcomeModel,
    pub optimizer: OptimizerConfig,
    pub sft: SftConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            group_size: 8,
            batch_queries: 128,
            learning_rate: 1e-2,
            epochs: 1,
            max_tokens: 64,
            inner_epochs: 1,
            train_temperature: 1.0,
            eval_temperature: 0.6,
            eval_samples_per_task: 16,
            train_tasks: 20000,
            eval_tasks: 500,
            difficulty_mix: vec![1.0 / DIFFICULTY_LEVELS as f64; DIFFICULTY_LEVELS],
            log_rollouts: true,
            weights: RewardWeights::default(),
            surrogate: SurrogateConfig::default(),
            outcome: OutcomeModel::default(),
            optimizer: OptimizerConfig::default(),
            sft: SftConfig::default(),
        }
    }
}

impl TrainConfig {
    // negated comparisons so that NaN fails too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.group_size == 0 || self.batch_queries == 0 || self.max_tokens == 0 || self.inner_epochs == 0 {
            return bad("group_size, batch_queries, max_tokens and inner_epochs must be at least 1");
        }
        if self.eval_samples_per_task == 0 || self.train_tasks == 0 || self.eval_tasks == 0 {
            return bad("eval_samples_per_task, train_tasks and eval_tasks must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.train_temperature > 0.0 && self.eval_temperature > 0.0) {
            return bad("temperatures must be positive");
        }
        if self.sft.epochs > 0 && (self.sft.tasks == 0 || !(self.sft.learning_rate > 0.0)) {
            return bad("sft needs tasks >= 1 and a positive learning_rate");
        }
        let s = &self.surrogate;
        if !(s.eps_clip > 0.0 && s.beta >= 0.0 && s.eps_std > 0.0) {
            return bad("surrogate needs eps_clip > 0, beta >= 0, eps_std > 0");
        }
        let o = &self.outcome;
        if !(0.0 <= o.q0 && o.q0 <= o.q1 && o.q1 <= 1.0) {
            return bad("outcome needs 0 <= q0 <= q1 <= 1");
        }
        self.weights.validate().map_err(TrainError::Config)?;
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            samples_per_task: self.eval_samples_per_task,
            temperature: self.eval_temperature,
            max_tokens: self.max_tokens,
            outcome: self.outcome,
            seed: self.seed,
        }
    }
}
