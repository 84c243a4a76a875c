use rayon::prelude::*;

use crate::budget::GroupStats;
use crate::env::{Task, CONTENT_SYMBOLS};
use crate::grpo::{normalize_advantages, surrogate_gradient, surrogate_objective, AdvantageGroup, SurrogateSample, TokenLogProbs};
use crate::policy::{logprob_and_grad, logprobs, sample_trace, PolicyParams, Sample};
use crate::reward::{score_group, RewardBreakdown};
use crate::seeding::{stream, Purpose};
use crate::trace::{render_trace, SymbolTable};

use super::{Optimizer, TrainConfig, TrainError};

/// One row of the per-step metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub mean_len: f64,
    pub mean_p: f64,
    pub clip_frac: f64,
    pub kl: f64,
    pub pass1_train: f64,
}

/// A scored RL rollout as written to the rollout log.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRollout {
    pub query_id: String,
    pub text: String,
    pub correct: bool,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub metrics: StepMetrics,
    pub rollouts: Vec<LoggedRollout>,
    /// False when every group was degenerate and no update was taken.
    pub updated: bool,
}

struct Group<'a> {
    task: &'a Task,
    samples: Vec<Sample>,
    scores: Vec<RewardBreakdown>,
    stats: GroupStats,
    advantages: AdvantageGroup,
    reference: Vec<Vec<f64>>,
}

pub fn query_id(step: u64, task: &Task) -> String {
    format!("s{step}-t{}", task.id)
}

fn collect_group<'a>(
    behavior: &PolicyParams,
    reference: &PolicyParams,
    task: &'a Task,
    config: &TrainConfig,
    step: u64,
) -> Result<Group<'a>, TrainError> {
    let qid = query_id(step, task);
    let samples = (0..config.group_size as u64)
        .map(|i| {
            let coords = [step, task.id, i];
            sample_trace(
                behavior,
                task,
                &qid,
                &config.outcome,
                config.max_tokens,
                config.train_temperature,
                &mut stream(config.seed, Purpose::TrainPolicy, &coords),
                &mut stream(config.seed, Purpose::TrainJudge, &coords),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rollouts: Vec<_> = samples.iter().map(|s| s.rollout.clone()).collect();
    let (scores, stats) = score_group(&rollouts, &config.weights)?;
    let rewards: Vec<f64> = scores.iter().map(|s| s.total).collect();
    let advantages = normalize_advantages(&rewards, config.surrogate.eps_std)?;
    let reference = samples
        .iter()
        .map(|s| logprobs(reference, &s.rollout.trace, task, config.train_temperature))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Group {
        task,
        samples,
        scores,
        stats,
        advantages,
        reference,
    })
}

struct GroupGradient {
    grad: Vec<f64>,
    clip_fraction: f64,
    kl_mean: f64,
}

fn group_gradient(params: &PolicyParams, group: &Group<'_>, config: &TrainConfig) -> Result<GroupGradient, TrainError> {
    let mut surrogate = Vec::with_capacity(group.samples.len());
    let mut grads = Vec::with_capacity(group.samples.len());
    for ((sample, reference), advantage) in group.samples.iter().zip(&group.reference).zip(&group.advantages.advantages) {
        let (current, g) = logprob_and_grad(params, &sample.rollout.trace, group.task, config.train_temperature)?;
        surrogate.push(SurrogateSample {
            logprobs: TokenLogProbs {
                current,
                behavior: sample.logprobs.clone(),
                reference: reference.clone(),
            },
            advantage: *advantage,
        });
        grads.push(g);
    }
    let value = surrogate_objective(&surrogate, &config.surrogate)?;
    let grad = surrogate_gradient(&surrogate, &grads, params.len(), &config.surrogate)?;
    Ok(GroupGradient {
        grad,
        clip_fraction: value.clip_fraction,
        kl_mean: value.kl_mean,
    })
}

/// One RL update over a batch of queries.
///
/// Samples a group per query from a snapshot of `params`, scores it, and
/// takes `inner_epochs` ascent steps on the batch-mean surrogate against the
/// frozen `reference`. Degenerate groups contribute nothing; a batch made only
/// of degenerate groups leaves `params` and the optimizer untouched.
pub fn acpo_step(
    params: &mut PolicyParams,
    reference: &PolicyParams,
    optimizer: &mut Optimizer,
    batch: &[Task],
    config: &TrainConfig,
    step: u64,
    symbols: Option<&SymbolTable>,
) -> Result<StepOutcome, TrainError> {
    let behavior = params.snapshot();
    let groups = batch
        .par_iter()
        .map(|task| collect_group(&behavior, reference, task, config, step))
        .collect::<Result<Vec<_>, _>>()?;

    let active: Vec<&Group<'_>> = groups.iter().filter(|g| !g.advantages.degenerate).collect();
    let mut clip_frac = 0.0;
    let mut kl = 0.0;
    let updated = !active.is_empty();
    if updated {
        let queries = batch.len() as f64;
        for epoch in 0..config.inner_epochs {
            let current = &*params;
            let parts = active
                .par_iter()
                .map(|g| group_gradient(current, g, config))
                .collect::<Result<Vec<_>, _>>()?;
            let mut grad = vec![0.0; params.len()];
            for part in &parts {
                for (a, b) in grad.iter_mut().zip(&part.grad) {
                    *a += b / queries;
                }
            }
            if epoch + 1 == config.inner_epochs {
                let n = parts.len() as f64;
                clip_frac = parts.iter().map(|p| p.clip_fraction).sum::<f64>() / n;
                kl = parts.iter().map(|p| p.kl_mean).sum::<f64>() / n;
            }
            optimizer.ascend(&mut params.theta, &grad);
        }
    }

    let total: usize = groups.iter().map(|g| g.samples.len()).sum();
    let n = total as f64;
    let mut reward_sum = 0.0;
    let mut len_sum = 0.0;
    let mut correct = 0usize;
    for g in &groups {
        for (s, r) in g.samples.iter().zip(&g.scores) {
            reward_sum += r.total;
            len_sum += s.rollout.len() as f64;
            correct += s.rollout.correct as usize;
        }
    }
    let metrics = StepMetrics {
        step,
        mean_reward: reward_sum / n,
        mean_len: len_sum / n,
        mean_p: groups.iter().map(|g| g.stats.success_rate).sum::<f64>() / groups.len() as f64,
        clip_frac,
        kl,
        pass1_train: correct as f64 / n,
    };

    let rollouts = match symbols {
        None => Vec::new(),
        Some(table) => groups
            .iter()
            .flat_map(|g| {
                g.samples
                    .iter()
                    .zip(&g.scores)
                    .zip(&g.advantages.advantages)
                    .map(move |((s, r), a)| LoggedRollout {
                        query_id: s.rollout.query_id.clone(),
                        text: render_trace(&s.rollout.trace, table),
                        correct: s.rollout.correct,
                        reward: r.total,
                        advantage: *a,
                    })
            })
            .collect(),
    };

    Ok(StepOutcome {
        metrics,
        rollouts,
        updated,
    })
}

/// Holds RL state across steps: current and reference parameters, the
/// optimizer, and the step counter.
pub struct RlTrainer {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub config: TrainConfig,
    optimizer: Optimizer,
    step: u64,
    symbols: SymbolTable,
}

impl RlTrainer {
    /// Freezes `params` as the reference policy.
    pub fn new(params: PolicyParams, config: TrainConfig) -> Self {
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, params.len());
        RlTrainer {
            reference: params.snapshot(),
            params,
            config,
            optimizer,
            step: 0,
            symbols: SymbolTable::numbered(CONTENT_SYMBOLS as usize),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, batch: &[Task]) -> Result<StepOutcome, TrainError> {
        let symbols = self.config.log_rollouts.then_some(&self.symbols);
        let out = acpo_step(
            &mut self.params,
            &self.reference,
            &mut self.optimizer,
            batch,
            &self.config,
            self.step,
            symbols,
        )?;
        self.step += 1;
        Ok(out)
    }
}
