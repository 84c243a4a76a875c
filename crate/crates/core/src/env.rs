//! Synthetic graded-difficulty tasks, the outcome model that judges sampled
//! traces, and the scripted teacher used for the cold start.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::trace::{parse_trace, Token, Trace};

pub const DIFFICULTY_LEVELS: usize = 5;
/// Content symbols available to the toy policy; answers are drawn from them.
pub const CONTENT_SYMBOLS: u32 = 4;
/// Content tokens per teacher slow segment.
pub const TEACHER_SLOW_LEN: usize = 3;
/// Content tokens in the teacher's closing fast segment.
pub const TEACHER_FAST_LEN: usize = 2;

const FEATURE_NOISE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("task count must be at least 1")]
    NoTasks,
    #[error("bad difficulty distribution: {0}")]
    BadDistribution(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    /// Level in `1..=5`.
    pub difficulty: u8,
    /// One-hot difficulty with bounded noise.
    pub features: Vec<f64>,
    pub answer: u32,
}

impl Task {
    fn validate(&self) -> Result<(), String> {
        if !(1..=DIFFICULTY_LEVELS as u8).contains(&self.difficulty) {
            return Err(format!("difficulty {} outside 1..=5", self.difficulty));
        }
        if self.features.len() != DIFFICULTY_LEVELS {
            return Err(format!("expected {DIFFICULTY_LEVELS} features, got {}", self.features.len()));
        }
        if self.features.iter().any(|f| !f.is_finite()) {
            return Err("non-finite feature".into());
        }
        if self.answer >= CONTENT_SYMBOLS {
            return Err(format!("answer symbol {} outside vocabulary", self.answer));
        }
        Ok(())
    }
}

/// Success probability as a function of slow reasoning steps and difficulty:
/// `q0 + (q1 - q0) * min(1, steps / difficulty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeModel {
    pub q0: f64,
    pub q1: f64,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        OutcomeModel { q0: 0.05, q1: 0.95 }
    }
}

impl OutcomeModel {
    pub fn success_probability(&self, slow_segments: usize, difficulty: u8) -> f64 {
        let coverage = (slow_segments as f64 / difficulty.max(1) as f64).min(1.0);
        self.q0 + (self.q1 - self.q0) * coverage
    }

    /// Draws whether an answer after `slow_segments` steps comes out right.
    pub fn draw<R: Rng + ?Sized>(&self, task: &Task, slow_segments: usize, rng: &mut R) -> bool {
        let q = self.success_probability(slow_segments, task.difficulty);
        rng.random::<f64>() < q
    }

    /// Judges a trace: one uniform draw against the success probability of
    /// its slow-segment count.
    pub fn judge<R: Rng + ?Sized>(&self, task: &Task, trace: &Trace, rng: &mut R) -> bool {
        self.draw(task, trace.slow_segments(), rng)
    }
}

/// The answer symbol written after a judgement.
pub fn answer_symbol(task: &Task, success: bool) -> u32 {
    if success {
        task.answer
    } else {
        (task.answer + 1) % CONTENT_SYMBOLS
    }
}

/// Exact answer match on a well-formed trace.
pub fn is_correct(task: &Task, trace: &Trace) -> bool {
    !trace.malformed && trace.answer_symbol() == Some(task.answer)
}

/// Draws `count` tasks with difficulty levels from `mix` (probabilities of
/// levels 1..=5). Task ids run from `first_id`.
pub fn generate_tasks<R: Rng + ?Sized>(
    count: usize,
    mix: &[f64],
    first_id: u64,
    rng: &mut R,
) -> Result<Vec<Task>, EnvError> {
    if count == 0 {
        return Err(EnvError::NoTasks);
    }
    if mix.len() != DIFFICULTY_LEVELS {
        return Err(EnvError::BadDistribution(format!(
            "expected {DIFFICULTY_LEVELS} weights, got {}",
            mix.len()
        )));
    }
    if mix.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(EnvError::BadDistribution("weights must be finite and nonnegative".into()));
    }
    let total: f64 = mix.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(EnvError::BadDistribution(format!("weights sum to {total}, not 1")));
    }

    let mut tasks = Vec::with_capacity(count);
    for i in 0..count {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut level = DIFFICULTY_LEVELS;
        for (k, w) in mix.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                level = k + 1;
                break;
            }
        }
        // guard against u landing past the rounded cumulative sum
        while mix[level - 1] == 0.0 {
            level -= 1;
        }
        let features = (0..DIFFICULTY_LEVELS)
            .map(|k| {
                let hot = if k + 1 == level { 1.0 } else { 0.0 };
                hot + rng.random_range(-FEATURE_NOISE..FEATURE_NOISE)
            })
            .collect();
        tasks.push(Task {
            id: first_id + i as u64,
            difficulty: level as u8,
            features,
            answer: rng.random_range(0..CONTENT_SYMBOLS),
        });
    }
    Ok(tasks)
}

/// The scripted annotated trace: `difficulty` slow segments, one fast
/// segment, then the correct answer.
pub fn teacher_trace(task: &Task) -> Trace {
    let mut tokens = vec![Token::THINK_OPEN];
    let mut j = task.id;
    let mut next = || {
        let t = Token::Content((j % CONTENT_SYMBOLS as u64) as u32);
        j += 1;
        t
    };
    for _ in 0..task.difficulty {
        tokens.push(Token::SLOW_OPEN);
        tokens.extend((0..TEACHER_SLOW_LEN).map(|_| next()));
        tokens.push(Token::SLOW_CLOSE);
    }
    tokens.push(Token::FAST_OPEN);
    tokens.extend((0..TEACHER_FAST_LEN).map(|_| next()));
    tokens.push(Token::FAST_CLOSE);
    tokens.extend([
        Token::THINK_CLOSE,
        Token::ANSWER_OPEN,
        Token::Content(task.answer),
        Token::ANSWER_CLOSE,
    ]);
    parse_trace(&tokens)
}

/// Writes tasks as JSON lines.
pub fn write_tasks<W: Write>(tasks: &[Task], mut out: W) -> Result<(), EnvError> {
    for task in tasks {
        serde_json::to_writer(&mut out, task).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads tasks from JSON lines, skipping blank lines.
pub fn read_tasks<R: BufRead>(input: R) -> Result<Vec<Task>, EnvError> {
    let mut tasks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(&line).map_err(|source| EnvError::Parse { line: i + 1, source })?;
        task.validate().map_err(|message| EnvError::Invalid { line: i + 1, message })?;
        tasks.push(task);
    }
    Ok(tasks)
}
