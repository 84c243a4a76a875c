//! Composite reward: accuracy, online length budget, and thinking-mode
//! pattern, combined with a sign-preserving clip.

use serde::{Deserialize, Serialize};

use crate::budget::{deviation, group_stats, BudgetError, GroupStats, Rollout};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("ACU denominator must be positive (params_billions={params_billions}, avg_tokens={avg_tokens})")]
    DivideByZero {
        params_billions: f64,
        avg_tokens: f64,
    },
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

/// Weights and thresholds for [`composite_reward`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_acc: f64,
    pub w_len: f64,
    pub w_think: f64,
    /// Success rates strictly above this count as easy.
    pub p_thresh: f64,
    /// Floor applied to correct responses.
    pub clip_pos: f64,
    /// Ceiling applied to incorrect responses.
    pub clip_neg: f64,
    /// Zero the pattern reward for malformed traces.
    pub zero_think_if_malformed: bool,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_acc: 0.6,
            w_len: 0.3,
            w_think: 0.1,
            p_thresh: 0.5,
            clip_pos: 0.1,
            clip_neg: -0.1,
            zero_think_if_malformed: false,
        }
    }
}

impl RewardWeights {
    /// Accuracy-only weighting, the plain GRPO reward.
    pub fn accuracy_only() -> Self {
        RewardWeights {
            w_acc: 1.0,
            w_len: 0.0,
            w_think: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.w_acc < 0.0 || self.w_len < 0.0 || self.w_think < 0.0 {
            return Err("reward weights must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.p_thresh) {
            return Err("p_thresh must lie in [0, 1]".into());
        }
        if self.clip_pos <= 0.0 || self.clip_neg >= 0.0 {
            return Err("clip bounds must satisfy clip_neg < 0 < clip_pos".into());
        }
        Ok(())
    }
}

/// Per-rollout reward components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub lambda: f64,
    pub acc: f64,
    pub tlb: f64,
    pub think: f64,
    pub total: f64,
}

pub fn accuracy_reward(correct: bool) -> f64 {
    if correct {
        1.0
    } else {
        -1.0
    }
}

/// Length reward from the relative budget deviation `lambda`. Correct answers
/// are rewarded for coming in under budget, incorrect ones for spending more.
pub fn tlb_reward(correct: bool, lambda: f64) -> f64 {
    if correct {
        (-lambda).tanh()
    } else {
        lambda.tanh()
    }
}

pub fn system_pattern_reward(p: f64, rho_fast: f64, rho_slow: f64, p_thresh: f64) -> f64 {
    if p > p_thresh {
        rho_fast
    } else {
        rho_slow
    }
}

pub fn composite_reward(acc: f64, tlb: f64, think: f64, weights: &RewardWeights, correct: bool) -> f64 {
    let s = weights.w_acc * acc + weights.w_len * tlb + weights.w_think * think;
    if correct {
        s.max(weights.clip_pos)
    } else {
        s.min(weights.clip_neg)
    }
}

/// Scores one rollout against its group's statistics.
pub fn score_rollout(
    rollout: &Rollout,
    group: &GroupStats,
    weights: &RewardWeights,
) -> Result<RewardBreakdown, BudgetError> {
    let lambda = deviation(rollout.len() as f64, group)?;
    let acc = accuracy_reward(rollout.correct);
    let tlb = tlb_reward(rollout.correct, lambda);
    let think = if weights.zero_think_if_malformed && rollout.trace.malformed {
        0.0
    } else {
        system_pattern_reward(
            group.success_rate,
            rollout.stats.rho_fast,
            rollout.stats.rho_slow,
            weights.p_thresh,
        )
    };
    Ok(RewardBreakdown {
        lambda,
        acc,
        tlb,
        think,
        total: composite_reward(acc, tlb, think, weights, rollout.correct),
    })
}

/// Scores a whole group; output order follows input order.
pub fn score_group(
    rollouts: &[Rollout],
    weights: &RewardWeights,
) -> Result<(Vec<RewardBreakdown>, GroupStats), BudgetError> {
    let group = group_stats(rollouts)?;
    let scored = rollouts
        .iter()
        .map(|r| score_rollout(r, &group, weights))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((scored, group))
}

/// Accuracy per computation unit, scaled by 100 to match the usual table
/// convention (83.9% at 1.5B params and 5708 tokens gives 0.98).
pub fn acu(accuracy_percent: f64, params_billions: f64, avg_tokens: f64) -> Result<f64, RewardError> {
    if params_billions <= 0.0 || avg_tokens <= 0.0 {
        return Err(RewardError::DivideByZero {
            params_billions,
            avg_tokens,
        });
    }
    Ok(100.0 * accuracy_percent / (params_billions * avg_tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{parse_trace, Token};
    use proptest::prelude::*;

    const TANH1: f64 = 0.761_594_155_955_764_9;

    #[test]
    fn accuracy_values() {
        assert_eq!(accuracy_reward(true), 1.0);
        assert_eq!(accuracy_reward(false), -1.0);
        assert_eq!(accuracy_reward(true), accuracy_reward(true));
    }

    #[test]
    fn tlb_values() {
        assert_eq!(tlb_reward(true, 0.0), 0.0);
        assert!((tlb_reward(true, 1.0) + TANH1).abs() < 1e-15);
        assert!((tlb_reward(false, 1.0) - TANH1).abs() < 1e-15);
    }

    #[test]
    fn pattern_branches() {
        assert_eq!(system_pattern_reward(0.75, 0.6, 0.1, 0.5), 0.6);
        assert_eq!(system_pattern_reward(0.25, 0.1, 0.8, 0.5), 0.8);
        assert_eq!(system_pattern_reward(0.5, 0.3, 0.4, 0.5), 0.4);
    }

    #[test]
    fn composite_examples() {
        let w = RewardWeights::default();
        assert!((composite_reward(1.0, 0.0, 0.5, &w, true) - 0.65).abs() < 1e-12);

        let tlb = (-0.5f64).tanh();
        let r = composite_reward(-1.0, tlb, 0.2, &w, false);
        assert!((r - (-0.718_635_147_178)).abs() < 1e-11, "{r}");

        let odd = RewardWeights {
            w_acc: 0.2,
            w_len: 0.7,
            w_think: 0.1,
            ..w
        };
        assert_eq!(composite_reward(1.0, -0.9, 0.0, &odd, true), 0.1);
    }

    #[test]
    fn acu_table_values() {
        assert!((acu(83.9, 1.5, 5708.0).unwrap() - 0.98).abs() < 0.005);
        assert!((acu(81.0, 1.5, 1679.0).unwrap() - 3.22).abs() < 0.005);
        assert!((acu(79.9, 1.5, 643.0).unwrap() - 8.28).abs() < 0.005);
        assert!(acu(80.0, 0.0, 10.0).is_err());
        assert!(acu(80.0, 1.0, -1.0).is_err());
    }

    fn rollout(q: &str, slow: usize, fast: usize, pad: usize, correct: bool) -> Rollout {
        let mut t = vec![Token::THINK_OPEN, Token::SLOW_OPEN];
        t.extend(std::iter::repeat_n(Token::Content(0), slow));
        t.push(Token::SLOW_CLOSE);
        t.push(Token::FAST_OPEN);
        t.extend(std::iter::repeat_n(Token::Content(0), fast));
        t.push(Token::FAST_CLOSE);
        t.extend(std::iter::repeat_n(Token::Content(1), pad));
        t.extend([Token::THINK_CLOSE, Token::ANSWER_OPEN, Token::Content(2), Token::ANSWER_CLOSE]);
        Rollout::new(q, parse_trace(&t), correct)
    }

    #[test]
    fn group_signs_follow_correctness() {
        let g = vec![
            rollout("q", 1, 1, 0, true),
            rollout("q", 3, 3, 4, false),
            rollout("q", 2, 2, 0, true),
            rollout("q", 4, 4, 10, false),
        ];
        let (scored, stats) = score_group(&g, &RewardWeights::default()).unwrap();
        assert_eq!(stats.success_rate, 0.5);
        for (r, s) in g.iter().zip(&scored) {
            assert_eq!(s.total > 0.0, r.correct);
        }
    }

    #[test]
    fn identical_correct_rollouts_sit_on_budget() {
        let g = vec![rollout("q", 2, 2, 0, true); 3];
        let w = RewardWeights::default();
        let (scored, stats) = score_group(&g, &w).unwrap();
        assert_eq!(stats.budget, g[0].len() as f64);
        for s in scored {
            assert_eq!(s.lambda, 0.0);
            assert_eq!(s.total, w.w_acc + w.w_think * s.think);
        }
        let (single, stats) = score_group(&g[..1], &w).unwrap();
        assert_eq!(stats.success_rate, 1.0);
        assert_eq!(single[0].lambda, 0.0);
    }

    proptest! {
        #[test]
        fn tlb_is_bounded_and_antisymmetric(lambda in -50.0f64..50.0) {
            let a = tlb_reward(true, lambda);
            prop_assert!(a.abs() <= 1.0);
            prop_assert_eq!(a, -tlb_reward(false, lambda));
        }

        #[test]
        fn tlb_monotone_in_length(budget in 1.0f64..1e3, l1 in 1.0f64..1e3, dl in 0.5f64..100.0) {
            let l2 = l1 + dl;
            let (a, b) = ((l1 - budget) / budget, (l2 - budget) / budget);
            // tanh saturates in f64 far from the budget, so only check where it still resolves
            if b.abs() < 15.0 {
                prop_assert!(tlb_reward(true, a) > tlb_reward(true, b));
                prop_assert!(tlb_reward(false, a) < tlb_reward(false, b));
            }
        }

        #[test]
        fn length_scale_invariance(k in 1usize..6, pads in proptest::collection::vec((0usize..6, any::<bool>()), 1..6)) {
            let base: Vec<Rollout> = pads.iter().map(|&(p, c)| rollout("q", 1, 1, p, c)).collect();
            let stats = GroupStats::from_outcomes(base.iter().map(|r| (r.len(), r.correct))).unwrap();
            let scaled = GroupStats::from_outcomes(base.iter().map(|r| (r.len() * k, r.correct))).unwrap();
            for r in &base {
                let a = deviation(r.len() as f64, &stats).unwrap();
                let b = deviation((r.len() * k) as f64, &scaled).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
