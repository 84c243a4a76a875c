//! Group-relative advantages and the clipped surrogate objective with a KL
//! penalty, together with its exact gradient.
//!
//! For one group of `G` responses the objective is
//!
//! ```text
//! J = 1/G Σ_i 1/|y_i| Σ_t [ min(r_it A_i, clip(r_it, 1-ε, 1+ε) A_i) - β KL_it ]
//! ```
//!
//! with `r_it = exp(lp_current - lp_behavior)` and the per-token estimator
//! `KL_it = u - ln u - 1`, `u = exp(lp_reference - lp_current)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("advantage group is empty")]
    EmptyGroup,
    #[error("rollout {index}: {what}")]
    MismatchedLengths { index: usize, what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub eps_clip: f64,
    pub beta: f64,
    /// Groups whose reward std falls below this get zero advantages.
    pub eps_std: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            eps_clip: 0.2,
            beta: 1e-3,
            eps_std: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

/// Standardizes rewards within a group using the population std.
pub fn normalize_advantages(rewards: &[f64], eps_std: f64) -> Result<AdvantageGroup, GrpoError> {
    if rewards.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = std < eps_std;
    let advantages = if degenerate {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageGroup {
        rewards: rewards.to_vec(),
        advantages,
        degenerate,
    })
}

pub fn token_ratio(lp_current: f64, lp_behavior: f64) -> f64 {
    (lp_current - lp_behavior).exp()
}

pub fn clipped_term(ratio: f64, advantage: f64, eps_clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_clip, 1.0 + eps_clip);
    (ratio * advantage).min(clipped * advantage)
}

/// True when the min picks the flat, clipped branch.
fn clip_active(ratio: f64, advantage: f64, eps_clip: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + eps_clip) || (advantage < 0.0 && ratio < 1.0 - eps_clip)
}

pub fn kl_estimate(lp_current: f64, lp_reference: f64) -> f64 {
    let log_u = lp_reference - lp_current;
    log_u.exp() - log_u - 1.0
}

/// Per-token log-probabilities of one response under the three parameter roles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenLogProbs {
    pub current: Vec<f64>,
    pub behavior: Vec<f64>,
    pub reference: Vec<f64>,
}

impl TokenLogProbs {
    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    fn check(&self, index: usize) -> Result<(), GrpoError> {
        if self.behavior.len() != self.current.len() || self.reference.len() != self.current.len() {
            return Err(GrpoError::MismatchedLengths {
                index,
                what: format!(
                    "current/behavior/reference lengths {}/{}/{}",
                    self.current.len(),
                    self.behavior.len(),
                    self.reference.len()
                ),
            });
        }
        Ok(())
    }
}

/// One response's contribution to the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSample {
    pub logprobs: TokenLogProbs,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateValue {
    pub objective: f64,
    /// Fraction of tokens on the clipped branch.
    pub clip_fraction: f64,
    /// Mean per-token KL estimate.
    pub kl_mean: f64,
}

/// Objective value of one group, to be maximized.
pub fn surrogate_objective(group: &[SurrogateSample], config: &SurrogateConfig) -> Result<SurrogateValue, GrpoError> {
    if group.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    let mut objective = 0.0;
    let mut clipped = 0usize;
    let mut kl_sum = 0.0;
    let mut tokens = 0usize;
    for (index, sample) in group.iter().enumerate() {
        let lp = &sample.logprobs;
        lp.check(index)?;
        if lp.is_empty() {
            continue;
        }
        let mut inner = 0.0;
        for t in 0..lp.len() {
            let ratio = token_ratio(lp.current[t], lp.behavior[t]);
            let kl = kl_estimate(lp.current[t], lp.reference[t]);
            inner += clipped_term(ratio, sample.advantage, config.eps_clip) - config.beta * kl;
            if clip_active(ratio, sample.advantage, config.eps_clip) {
                clipped += 1;
            }
            kl_sum += kl;
        }
        tokens += lp.len();
        objective += inner / lp.len() as f64;
    }
    let denom = tokens.max(1) as f64;
    Ok(SurrogateValue {
        objective: objective / group.len() as f64,
        clip_fraction: clipped as f64 / denom,
        kl_mean: kl_sum / denom,
    })
}

/// Derivative of the group objective with respect to every current-policy
/// token log-probability. The clip contributes nothing where it is active.
pub fn token_weights(group: &[SurrogateSample], config: &SurrogateConfig) -> Result<Vec<Vec<f64>>, GrpoError> {
    if group.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    let g = group.len() as f64;
    group
        .iter()
        .enumerate()
        .map(|(index, sample)| {
            let lp = &sample.logprobs;
            lp.check(index)?;
            let scale = 1.0 / (g * lp.len().max(1) as f64);
            Ok((0..lp.len())
                .map(|t| {
                    let ratio = token_ratio(lp.current[t], lp.behavior[t]);
                    let surrogate = if clip_active(ratio, sample.advantage, config.eps_clip) {
                        0.0
                    } else {
                        ratio * sample.advantage
                    };
                    let u = (lp.reference[t] - lp.current[t]).exp();
                    scale * (surrogate + config.beta * (u - 1.0))
                })
                .collect())
        })
        .collect()
}

/// Gradient of a token log-probability with respect to the policy parameters.
pub trait TokenGradient {
    /// `out += scale * ∇ log π(token)`.
    fn add_scaled(&self, scale: f64, out: &mut [f64]);
}

impl TokenGradient for Vec<f64> {
    fn add_scaled(&self, scale: f64, out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(self) {
            *o += scale * g;
        }
    }
}

/// Parameter gradient of the group objective. `grads[i][t]` is the gradient
/// of the current-policy log-probability of token `t` of response `i`.
pub fn surrogate_gradient<G: TokenGradient>(
    group: &[SurrogateSample],
    grads: &[Vec<G>],
    dim: usize,
    config: &SurrogateConfig,
) -> Result<Vec<f64>, GrpoError> {
    if grads.len() != group.len() {
        return Err(GrpoError::MismatchedLengths {
            index: grads.len().min(group.len()),
            what: format!("{} gradient rows for {} samples", grads.len(), group.len()),
        });
    }
    let weights = token_weights(group, config)?;
    let mut out = vec![0.0; dim];
    for (index, (w, g)) in weights.iter().zip(grads).enumerate() {
        if w.len() != g.len() {
            return Err(GrpoError::MismatchedLengths {
                index,
                what: format!("{} gradients for {} tokens", g.len(), w.len()),
            });
        }
        for (wt, gt) in w.iter().zip(g) {
            if *wt != 0.0 {
                gt.add_scaled(*wt, &mut out);
            }
        }
    }
    Ok(out)
}
