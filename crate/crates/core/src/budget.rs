//! Online group statistics and the token length budget.
//!
//! The budget interpolates between the mean length of correct responses and
//! the longest response, weighted by the group's success rate:
//! `budget = p * mean_correct_len + (1 - p) * max_len`.

use crate::trace::{trace_stats, Trace, TraceStats};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BudgetError {
    #[error("group is empty")]
    EmptyGroup,
    #[error("group mixes query ids {0:?} and {1:?}")]
    MixedQuery(String, String),
    #[error("rollout {index} has zero length")]
    ZeroLength { index: usize },
    #[error("length budget is zero")]
    ZeroBudget,
}

/// One sampled response for a query.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub query_id: String,
    pub trace: Trace,
    pub correct: bool,
    pub stats: TraceStats,
}

impl Rollout {
    pub fn new(query_id: impl Into<String>, trace: Trace, correct: bool) -> Self {
        let stats = trace_stats(&trace);
        Rollout {
            query_id: query_id.into(),
            trace,
            correct,
            stats,
        }
    }

    /// Completion length in tokens.
    pub fn len(&self) -> usize {
        self.stats.total_len
    }

    pub fn is_empty(&self) -> bool {
        self.stats.total_len == 0
    }
}

/// Sampling statistics of one query's group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub size: usize,
    pub correct: usize,
    /// Sampling success rate `correct / size`.
    pub success_rate: f64,
    /// Mean length of correct responses; 0 when none are correct.
    pub mean_correct_len: f64,
    pub max_len: f64,
    pub budget: f64,
}

impl GroupStats {
    /// Statistics from `(length, correct)` pairs.
    pub fn from_outcomes<I>(outcomes: I) -> Result<Self, BudgetError>
    where
        I: IntoIterator<Item = (usize, bool)>,
    {
        let mut size = 0usize;
        let mut correct = 0usize;
        let mut correct_len_sum = 0.0;
        let mut max_len = 0usize;
        for (index, (len, ok)) in outcomes.into_iter().enumerate() {
            if len == 0 {
                return Err(BudgetError::ZeroLength { index });
            }
            size += 1;
            max_len = max_len.max(len);
            if ok {
                correct += 1;
                correct_len_sum += len as f64;
            }
        }
        if size == 0 {
            return Err(BudgetError::EmptyGroup);
        }
        let p = correct as f64 / size as f64;
        let mean_correct_len = if correct > 0 {
            correct_len_sum / correct as f64
        } else {
            0.0
        };
        let max_len = max_len as f64;
        Ok(GroupStats {
            size,
            correct,
            success_rate: p,
            mean_correct_len,
            max_len,
            budget: p * mean_correct_len + (1.0 - p) * max_len,
        })
    }
}

/// Group statistics for rollouts that all answer the same query.
pub fn group_stats(rollouts: &[Rollout]) -> Result<GroupStats, BudgetError> {
    if let Some(first) = rollouts.first() {
        if let Some(other) = rollouts.iter().find(|r| r.query_id != first.query_id) {
            return Err(BudgetError::MixedQuery(
                first.query_id.clone(),
                other.query_id.clone(),
            ));
        }
    }
    GroupStats::from_outcomes(rollouts.iter().map(|r| (r.len(), r.correct)))
}

/// Relative deviation of a length from the group budget.
pub fn deviation(len: f64, stats: &GroupStats) -> Result<f64, BudgetError> {
    if stats.budget <= 0.0 {
        return Err(BudgetError::ZeroBudget);
    }
    Ok((len - stats.budget) / stats.budget)
}
