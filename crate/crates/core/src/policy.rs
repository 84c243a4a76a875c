//! A tiny autoregressive policy over the trace vocabulary.
//!
//! Logits are linear in a sparse, hand-built feature vector of the decode
//! state, and symbols the trace grammar forbids are masked out before the
//! softmax. Log-probabilities and their gradients are exact:
//! `∇ log π(v | s) = φ(s) ⊗ (onehot(v) - π(· | s)) / T`.
//!
//! Each of the three decision modes (between segments, inside a slow segment,
//! inside a fast segment) owns a separate block of weights. Every other step
//! is forced by the grammar and costs no probability mass.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::Rollout;
use crate::env::{answer_symbol, is_correct, OutcomeModel, Task, CONTENT_SYMBOLS, DIFFICULTY_LEVELS};
use crate::grpo::TokenGradient;
use crate::trace::{parse_trace, Marker, Token, Trace};

pub const VOCAB_SIZE: usize = Marker::ALL.len() + CONTENT_SYMBOLS as usize;
const SLOW_BUCKETS: usize = 6;
const FAST_BUCKETS: usize = 3;
const LEN_BUCKETS: usize = 4;
const DECISION_BLOCKS: usize = 3;

const CHECKPOINT_FORMAT: &str = "acpo-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("no legal symbol in state {0:?}")]
    AllMasked(DecodeMode),
    #[error("token {position} ({token:?}) is illegal in state {mode:?}")]
    IllegalTrace {
        position: usize,
        token: Token,
        mode: DecodeMode,
    },
    #[error("task has {got} features, policy expects {want}")]
    FeatureMismatch { got: usize, want: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Binds the flat parameter vector to (feature, symbol) weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyShape {
    pub task_features: usize,
    pub vocab: usize,
    pub slow_buckets: usize,
    pub fast_buckets: usize,
    pub len_buckets: usize,
    pub blocks: usize,
}

impl Default for PolicyShape {
    fn default() -> Self {
        PolicyShape {
            task_features: DIFFICULTY_LEVELS,
            vocab: VOCAB_SIZE,
            slow_buckets: SLOW_BUCKETS,
            fast_buckets: FAST_BUCKETS,
            len_buckets: LEN_BUCKETS,
            blocks: DECISION_BLOCKS,
        }
    }
}

impl PolicyShape {
    fn block_len(&self) -> usize {
        1 + self.task_features + self.slow_buckets + self.fast_buckets + self.len_buckets
    }

    pub fn features(&self) -> usize {
        self.blocks * self.block_len()
    }

    pub fn params(&self) -> usize {
        self.features() * self.vocab
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    shape: PolicyShape,
    theta: Vec<f64>,
}

impl PolicyParams {
    /// All-zero weights: uniform over legal symbols at every step.
    pub fn zeros() -> Self {
        let shape = PolicyShape::default();
        PolicyParams {
            theta: vec![0.0; shape.params()],
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Deep copy used for the behavior and reference roles.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    pub fn to_json(&self) -> Result<String, PolicyError> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: self.shape,
            theta: self.theta.clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(PolicyError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.shape != PolicyShape::default() {
            return Err(PolicyError::Checkpoint(format!("shape {:?} does not match this build", ck.shape)));
        }
        if ck.theta.len() != ck.shape.params() {
            return Err(PolicyError::Checkpoint(format!(
                "expected {} parameters, found {}",
                ck.shape.params(),
                ck.theta.len()
            )));
        }
        if ck.theta.iter().any(|t| !t.is_finite()) {
            return Err(PolicyError::Checkpoint("non-finite parameter".into()));
        }
        Ok(PolicyParams {
            shape: ck.shape,
            theta: ck.theta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    PreThink,
    InThink,
    InFast,
    InSlow,
    InAnswer,
    Done,
}

/// Everything the policy conditions on at one step.
#[derive(Debug, Clone)]
pub struct DecodeState<'a> {
    pub task_features: &'a [f64],
    pub mode: DecodeMode,
    /// Inside the answer: 0 expects the open tag, 1 the symbol, 2 the close tag.
    pub answer_stage: u8,
    /// Symbol the environment has fixed for the answer slot.
    pub answer: Option<u32>,
    pub emitted: usize,
    pub fast_tokens: usize,
    pub slow_tokens: usize,
    pub slow_segments: usize,
    pub fast_segments: usize,
    /// Content tokens in the currently open segment.
    pub segment_len: usize,
}

/// Legal next symbols: either a single forced symbol or a decision over a set.
enum Legal {
    Forced(Token),
    Choice(Vec<usize>),
    None,
}

impl<'a> DecodeState<'a> {
    pub fn new(task: &'a Task) -> Self {
        DecodeState {
            task_features: &task.features,
            mode: DecodeMode::PreThink,
            answer_stage: 0,
            answer: None,
            emitted: 0,
            fast_tokens: 0,
            slow_tokens: 0,
            slow_segments: 0,
            fast_segments: 0,
            segment_len: 0,
        }
    }

    /// True when the next symbol is the environment-fixed answer.
    pub fn at_answer_slot(&self) -> bool {
        self.mode == DecodeMode::InAnswer && self.answer_stage == 1
    }

    fn legal(&self) -> Legal {
        let content = || (0..CONTENT_SYMBOLS).map(|c| Token::Content(c).vocab_index());
        match self.mode {
            DecodeMode::PreThink => Legal::Forced(Token::THINK_OPEN),
            DecodeMode::InThink => Legal::Choice(vec![
                Token::SLOW_OPEN.vocab_index(),
                Token::FAST_OPEN.vocab_index(),
                Token::THINK_CLOSE.vocab_index(),
            ]),
            DecodeMode::InSlow | DecodeMode::InFast => {
                let mut v: Vec<usize> = content().collect();
                if self.segment_len > 0 {
                    let close = if self.mode == DecodeMode::InSlow {
                        Token::SLOW_CLOSE
                    } else {
                        Token::FAST_CLOSE
                    };
                    v.push(close.vocab_index());
                }
                Legal::Choice(v)
            }
            DecodeMode::InAnswer => match self.answer_stage {
                0 => Legal::Forced(Token::ANSWER_OPEN),
                1 => match self.answer {
                    Some(a) => Legal::Forced(Token::Content(a)),
                    None => Legal::None,
                },
                _ => Legal::Forced(Token::ANSWER_CLOSE),
            },
            DecodeMode::Done => Legal::None,
        }
    }

    /// Active features as (index, value) pairs; empty for forced steps.
    fn features(&self, shape: &PolicyShape) -> Vec<(usize, f64)> {
        let block = match self.mode {
            DecodeMode::InThink => 0,
            DecodeMode::InSlow => 1,
            DecodeMode::InFast => 2,
            _ => return Vec::new(),
        };
        let base = block * shape.block_len();
        let mut f = Vec::with_capacity(4 + shape.task_features);
        f.push((base, 1.0));
        let mut off = base + 1;
        for (k, x) in self.task_features.iter().enumerate() {
            if *x != 0.0 {
                f.push((off + k, *x));
            }
        }
        off += shape.task_features;
        f.push((off + self.slow_segments.min(shape.slow_buckets - 1), 1.0));
        off += shape.slow_buckets;
        f.push((off + self.fast_segments.min(shape.fast_buckets - 1), 1.0));
        off += shape.fast_buckets;
        f.push((off + self.segment_len.min(shape.len_buckets - 1), 1.0));
        f
    }

    /// Advances past `token`, which must be legal.
    fn advance(&mut self, token: Token) {
        self.emitted += 1;
        match (self.mode, token) {
            (DecodeMode::PreThink, _) => self.mode = DecodeMode::InThink,
            (DecodeMode::InThink, Token::SLOW_OPEN) => {
                self.mode = DecodeMode::InSlow;
                self.segment_len = 0;
            }
            (DecodeMode::InThink, Token::FAST_OPEN) => {
                self.mode = DecodeMode::InFast;
                self.segment_len = 0;
            }
            (DecodeMode::InThink, _) => {
                self.mode = DecodeMode::InAnswer;
                self.answer_stage = 0;
            }
            (DecodeMode::InSlow, Token::Content(_)) => {
                self.segment_len += 1;
                self.slow_tokens += 1;
            }
            (DecodeMode::InFast, Token::Content(_)) => {
                self.segment_len += 1;
                self.fast_tokens += 1;
            }
            (DecodeMode::InSlow, _) => {
                self.slow_segments += 1;
                self.segment_len = 0;
                self.mode = DecodeMode::InThink;
            }
            (DecodeMode::InFast, _) => {
                self.fast_segments += 1;
                self.segment_len = 0;
                self.mode = DecodeMode::InThink;
            }
            (DecodeMode::InAnswer, _) => {
                self.answer_stage += 1;
                if self.answer_stage == 3 {
                    self.mode = DecodeMode::Done;
                }
            }
            (DecodeMode::Done, _) => {}
        }
    }
}

/// A step's distribution restricted to the legal symbols.
struct StepDist {
    features: Vec<(usize, f64)>,
    legal: Vec<usize>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

fn step_dist(params: &PolicyParams, state: &DecodeState<'_>, temperature: f64) -> Result<Option<StepDist>, PolicyError> {
    let legal = match state.legal() {
        Legal::Forced(_) => return Ok(None),
        Legal::None => return Err(PolicyError::AllMasked(state.mode)),
        Legal::Choice(v) => v,
    };
    let features = state.features(&params.shape);
    let vocab = params.shape.vocab;
    let logits: Vec<f64> = legal
        .iter()
        .map(|&v| features.iter().map(|&(f, x)| x * params.theta[f * vocab + v]).sum::<f64>() / temperature)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|l| l - max).collect();
    let norm: f64 = shifted.iter().map(|s| s.exp()).sum();
    let log_norm = norm.ln();
    let probs = shifted.iter().map(|s| s.exp() / norm).collect();
    let log_probs = shifted.iter().map(|s| s - log_norm).collect();
    Ok(Some(StepDist {
        features,
        legal,
        probs,
        log_probs,
    }))
}

/// Full next-symbol distribution over the vocabulary; masked symbols get 0.
pub fn token_distribution(params: &PolicyParams, state: &DecodeState<'_>, temperature: f64) -> Result<Vec<f64>, PolicyError> {
    let mut out = vec![0.0; params.shape.vocab];
    match state.legal() {
        Legal::Forced(t) => out[t.vocab_index()] = 1.0,
        Legal::None => return Err(PolicyError::AllMasked(state.mode)),
        Legal::Choice(_) => {
            let d = step_dist(params, state, temperature)?.expect("decision step");
            for (v, p) in d.legal.iter().zip(&d.probs) {
                out[*v] = *p;
            }
        }
    }
    Ok(out)
}

/// Sparse gradient of one token's log-probability.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    vocab: usize,
    features: Vec<(usize, f64)>,
    /// (symbol, (onehot - probs) / T) over legal symbols.
    residual: Vec<(usize, f64)>,
}

impl SparseGrad {
    pub fn is_zero(&self) -> bool {
        self.features.is_empty()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.add_scaled(1.0, &mut out);
        out
    }
}

impl TokenGradient for SparseGrad {
    fn add_scaled(&self, scale: f64, out: &mut [f64]) {
        for &(f, x) in &self.features {
            let row = &mut out[f * self.vocab..(f + 1) * self.vocab];
            for &(v, r) in &self.residual {
                row[v] += scale * x * r;
            }
        }
    }
}

/// A sampled response with its per-token sampling log-probabilities.
#[derive(Debug, Clone)]
pub struct Sample {
    pub rollout: Rollout,
    pub logprobs: Vec<f64>,
    pub truncated: bool,
}

/// Samples one response. The answer slot is fixed by the outcome model once
/// the think span closes, using `judge_rng` for its single draw.
#[allow(clippy::too_many_arguments)]
pub fn sample_trace<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    params: &PolicyParams,
    task: &Task,
    query_id: &str,
    outcome: &OutcomeModel,
    max_tokens: usize,
    temperature: f64,
    rng: &mut R1,
    judge_rng: &mut R2,
) -> Result<Sample, PolicyError> {
    check_task(params, task)?;
    let mut state = DecodeState::new(task);
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    while state.mode != DecodeMode::Done && tokens.len() < max_tokens {
        if state.at_answer_slot() && state.answer.is_none() {
            let success = outcome.draw(task, state.slow_segments, judge_rng);
            state.answer = Some(answer_symbol(task, success));
        }
        let (token, lp) = match step_dist(params, &state, temperature)? {
            None => match state.legal() {
                Legal::Forced(t) => (t, 0.0),
                _ => unreachable!("forced step without a symbol"),
            },
            Some(d) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = d.legal.len() - 1;
                for (k, p) in d.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                (Token::from_vocab_index(d.legal[pick]), d.log_probs[pick])
            }
        };
        tokens.push(token);
        logprobs.push(lp);
        state.advance(token);
    }
    let truncated = state.mode != DecodeMode::Done;
    let trace = parse_trace(&tokens);
    let correct = is_correct(task, &trace);
    Ok(Sample {
        rollout: Rollout::new(query_id, trace, correct),
        logprobs,
        truncated,
    })
}

fn check_task(params: &PolicyParams, task: &Task) -> Result<(), PolicyError> {
    if task.features.len() != params.shape.task_features {
        return Err(PolicyError::FeatureMismatch {
            got: task.features.len(),
            want: params.shape.task_features,
        });
    }
    Ok(())
}

/// Replays a recorded trace. Returns per-token log-probabilities and, when
/// `with_grads`, per-token gradients.
fn replay(
    params: &PolicyParams,
    trace: &Trace,
    task: &Task,
    temperature: f64,
    with_grads: bool,
) -> Result<(Vec<f64>, Vec<SparseGrad>), PolicyError> {
    check_task(params, task)?;
    let mut state = DecodeState::new(task);
    let mut lps = Vec::with_capacity(trace.tokens.len());
    let mut grads = Vec::with_capacity(if with_grads { trace.tokens.len() } else { 0 });
    for (position, &token) in trace.tokens.iter().enumerate() {
        let illegal = |mode| PolicyError::IllegalTrace { position, token, mode };
        if state.at_answer_slot() {
            match token {
                Token::Content(c) if c < CONTENT_SYMBOLS => state.answer = Some(c),
                _ => return Err(illegal(state.mode)),
            }
        }
        match state.legal() {
            Legal::None => return Err(illegal(state.mode)),
            Legal::Forced(t) => {
                if t != token {
                    return Err(illegal(state.mode));
                }
                lps.push(0.0);
                if with_grads {
                    grads.push(SparseGrad::default());
                }
            }
            Legal::Choice(_) => {
                let d = step_dist(params, &state, temperature)?.expect("decision step");
                let k = d
                    .legal
                    .iter()
                    .position(|&v| v == token.vocab_index())
                    .ok_or_else(|| illegal(state.mode))?;
                lps.push(d.log_probs[k]);
                if with_grads {
                    let residual = d
                        .legal
                        .iter()
                        .zip(&d.probs)
                        .enumerate()
                        .map(|(j, (&v, &p))| (v, (if j == k { 1.0 } else { 0.0 } - p) / temperature))
                        .collect();
                    grads.push(SparseGrad {
                        vocab: params.shape.vocab,
                        features: d.features,
                        residual,
                    });
                }
            }
        }
        state.advance(token);
    }
    Ok((lps, grads))
}

/// Per-token log-probabilities and exact log-probability gradients.
pub fn logprob_and_grad(
    params: &PolicyParams,
    trace: &Trace,
    task: &Task,
    temperature: f64,
) -> Result<(Vec<f64>, Vec<SparseGrad>), PolicyError> {
    replay(params, trace, task, temperature, true)
}

/// Per-token log-probabilities only.
pub fn logprobs(params: &PolicyParams, trace: &Trace, task: &Task, temperature: f64) -> Result<Vec<f64>, PolicyError> {
    Ok(replay(params, trace, task, temperature, false)?.0)
}

/// Number of legal symbols at each position of a trace (1 for forced steps).
pub fn legal_counts(trace: &Trace, task: &Task) -> Result<Vec<usize>, PolicyError> {
    let mut state = DecodeState::new(task);
    let mut out = Vec::with_capacity(trace.tokens.len());
    for (position, &token) in trace.tokens.iter().enumerate() {
        if state.at_answer_slot() {
            if let Token::Content(c) = token {
                state.answer = Some(c);
            }
        }
        match state.legal() {
            Legal::Forced(_) => out.push(1),
            Legal::Choice(v) => out.push(v.len()),
            Legal::None => {
                return Err(PolicyError::IllegalTrace {
                    position,
                    token,
                    mode: state.mode,
                })
            }
        }
        state.advance(token);
    }
    Ok(out)
}
