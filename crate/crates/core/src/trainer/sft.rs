use rayon::prelude::*;

use crate::env::{teacher_trace, Task};
use crate::grpo::TokenGradient;
use crate::policy::{logprob_and_grad, PolicyError, PolicyParams};
use crate::trace::Trace;

use super::SftConfig;

const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, thiserror::Error)]
pub enum SftError {
    #[error("teacher trace {index} is not replayable: {source}")]
    IllegalTrace {
        index: usize,
        #[source]
        source: PolicyError,
    },
    #[error("empty teacher dataset")]
    Empty,
}

/// Pairs each task with its scripted annotated trace.
pub fn teacher_dataset(tasks: &[Task]) -> Vec<(Task, Trace)> {
    tasks.iter().map(|t| (t.clone(), teacher_trace(t))).collect()
}

/// Mean per-trace negative log-likelihood and the gradient of the mean
/// log-likelihood.
fn nll_and_grad(params: &PolicyParams, data: &[(Task, Trace)]) -> Result<(f64, Vec<f64>), SftError> {
    let dim = params.len();
    let parts = data
        .par_iter()
        .enumerate()
        .map(|(index, (task, trace))| {
            let (lps, grads) =
                logprob_and_grad(params, trace, task, 1.0).map_err(|source| SftError::IllegalTrace { index, source })?;
            let mut g = vec![0.0; dim];
            for tg in &grads {
                tg.add_scaled(1.0, &mut g);
            }
            Ok((-lps.iter().sum::<f64>(), g))
        })
        .collect::<Result<Vec<_>, SftError>>()?;
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Cross-entropy fit to annotated traces by full-batch gradient steps.
///
/// Returns the fitted parameters and the loss after each epoch. A step that
/// would raise the loss is retried at half the step size, so the curve is
/// nonincreasing.
pub fn sft_fit(
    params: &PolicyParams,
    data: &[(Task, Trace)],
    config: &SftConfig,
) -> Result<(PolicyParams, Vec<f64>), SftError> {
    if config.epochs == 0 {
        return Ok((params.clone(), Vec::new()));
    }
    if data.is_empty() {
        return Err(SftError::Empty);
    }
    let mut current = params.clone();
    let (mut loss, mut grad) = nll_and_grad(&current, data)?;
    let mut lr = config.learning_rate;
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        for _ in 0..MAX_BACKTRACKS {
            let mut candidate = current.clone();
            for (t, g) in candidate.theta.iter_mut().zip(&grad) {
                *t += lr * g;
            }
            let (l, g) = nll_and_grad(&candidate, data)?;
            if l <= loss {
                current = candidate;
                loss = l;
                grad = g;
                lr *= 1.25;
                break;
            }
            lr *= 0.5;
        }
        curve.push(loss);
    }
    Ok((current, curve))
}
