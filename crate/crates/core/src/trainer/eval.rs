use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{OutcomeModel, Task, CONTENT_SYMBOLS};
use crate::policy::{sample_trace, PolicyParams};
use crate::reward::acu;
use crate::seeding::{stream, Purpose};
use crate::trace::{render_trace, SymbolTable};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub samples_per_task: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub outcome: OutcomeModel,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples_per_task: 16,
            temperature: 0.6,
            max_tokens: 64,
            outcome: OutcomeModel::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRow {
    pub difficulty: u8,
    pub tasks: usize,
    pub pass1: f64,
    pub avg_tokens: f64,
    pub rho_fast: f64,
    pub rho_slow: f64,
    pub slow_segments: f64,
    pub malformed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub task_id: u64,
    pub difficulty: u8,
    pub correct: bool,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub samples_per_task: usize,
    pub temperature: f64,
    pub pass1: f64,
    pub avg_tokens: f64,
    /// ACU with the parameter count expressed in billions.
    pub acu: f64,
    pub param_count: usize,
    pub rows: Vec<DifficultyRow>,
    pub samples: Vec<TraceSample>,
}

impl EvalReport {
    pub fn row(&self, difficulty: u8) -> Option<&DifficultyRow> {
        self.rows.iter().find(|r| r.difficulty == difficulty)
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    tasks: usize,
    samples: usize,
    correct: usize,
    tokens: usize,
    rho_fast: f64,
    rho_slow: f64,
    slow_segments: usize,
    malformed: usize,
}

/// Samples every task `samples_per_task` times and aggregates per difficulty.
///
/// Random streams are keyed by `(seed, task id, sample index)` with separate
/// streams for sampling and judging, so two policies evaluated on the same
/// tasks share the judge's draws.
pub fn evaluate(params: &PolicyParams, tasks: &[Task], config: &EvalConfig) -> Result<EvalReport, TrainError> {
    if tasks.is_empty() {
        return Err(TrainError::Config("evaluation task set is empty".into()));
    }
    let symbols = SymbolTable::numbered(CONTENT_SYMBOLS as usize);
    let per_task = tasks
        .par_iter()
        .map(|task| {
            let mut acc = Acc {
                tasks: 1,
                ..Acc::default()
            };
            let mut first = None;
            for j in 0..config.samples_per_task as u64 {
                let coords = [task.id, j];
                let s = sample_trace(
                    params,
                    task,
                    "eval",
                    &config.outcome,
                    config.max_tokens,
                    config.temperature,
                    &mut stream(config.seed, Purpose::EvalPolicy, &coords),
                    &mut stream(config.seed, Purpose::EvalJudge, &coords),
                )?;
                let r = &s.rollout;
                acc.samples += 1;
                acc.correct += r.correct as usize;
                acc.tokens += r.len();
                acc.rho_fast += r.stats.rho_fast;
                acc.rho_slow += r.stats.rho_slow;
                acc.slow_segments += r.trace.slow_segments();
                acc.malformed += r.trace.malformed as usize;
                if first.is_none() {
                    first = Some(TraceSample {
                        task_id: task.id,
                        difficulty: task.difficulty,
                        correct: r.correct,
                        text: render_trace(&r.trace, &symbols),
                    });
                }
            }
            Ok::<_, TrainError>((task.difficulty, acc, first))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut by_level: BTreeMap<u8, Acc> = BTreeMap::new();
    let mut total = Acc::default();
    let mut samples = Vec::new();
    for (level, acc, first) in per_task {
        let slot = by_level.entry(level).or_default();
        for a in [slot, &mut total] {
            a.tasks += acc.tasks;
            a.samples += acc.samples;
            a.correct += acc.correct;
            a.tokens += acc.tokens;
            a.rho_fast += acc.rho_fast;
            a.rho_slow += acc.rho_slow;
            a.slow_segments += acc.slow_segments;
            a.malformed += acc.malformed;
        }
        if let Some(f) = first {
            if !samples.iter().any(|s: &TraceSample| s.difficulty == f.difficulty) {
                samples.push(f);
            }
        }
    }
    samples.sort_by_key(|s| s.difficulty);

    let rows = by_level
        .iter()
        .map(|(&difficulty, a)| {
            let n = a.samples as f64;
            DifficultyRow {
                difficulty,
                tasks: a.tasks,
                pass1: a.correct as f64 / n,
                avg_tokens: a.tokens as f64 / n,
                rho_fast: a.rho_fast / n,
                rho_slow: a.rho_slow / n,
                slow_segments: a.slow_segments as f64 / n,
                malformed: a.malformed as f64 / n,
            }
        })
        .collect();

    let n = total.samples as f64;
    let pass1 = total.correct as f64 / n;
    let avg_tokens = total.tokens as f64 / n;
    let param_count = params.len();
    Ok(EvalReport {
        version: 1,
        samples_per_task: config.samples_per_task,
        temperature: config.temperature,
        pass1,
        avg_tokens,
        acu: acu(100.0 * pass1, param_count as f64 / 1e9, avg_tokens)?,
        param_count,
        rows,
        samples,
    })
}
