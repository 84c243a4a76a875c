//! JSONL wire formats for rollouts and per-rollout scores.
//!
//! Score numbers are rendered with nine significant digits so that output
//! bytes do not depend on the platform's float formatting.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::Deserialize;

use crate::budget::{BudgetError, Rollout};
use crate::grpo::{normalize_advantages, GrpoError};
use crate::reward::{score_group, RewardWeights};
use crate::trace::{lex, parse_trace, SymbolTable};

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("no rollout records in input")]
    Empty,
    #[error("query {query_id}: {source}")]
    Budget {
        query_id: String,
        #[source]
        source: BudgetError,
    },
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sampled response. Unknown fields (such as a logged reward) are ignored.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RolloutRecord {
    pub query_id: String,
    pub text: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub query_id: String,
    /// Position within the record's group.
    pub index: usize,
    pub len: usize,
    pub rho_fast: f64,
    pub rho_slow: f64,
    pub malformed: bool,
    pub p: f64,
    pub budget: f64,
    pub lambda: f64,
    pub r_acc: f64,
    pub r_tlb: f64,
    pub r_think: f64,
    pub r_final: f64,
    pub advantage: f64,
}

impl ScoreRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = String::with_capacity(256);
        let q = serde_json::to_string(&self.query_id).expect("string serialization");
        write!(
            s,
            "{{\"query_id\":{q},\"index\":{},\"L\":{},\"rho_fast\":{},\"rho_slow\":{},\"malformed\":{},\
             \"p\":{},\"L_budget\":{},\"lambda\":{},\"R_acc\":{},\"R_tlb\":{},\"R_think\":{},\
             \"R_final\":{},\"advantage\":{}}}",
            self.index,
            self.len,
            sig9(self.rho_fast),
            sig9(self.rho_slow),
            self.malformed,
            sig9(self.p),
            sig9(self.budget),
            sig9(self.lambda),
            sig9(self.r_acc),
            sig9(self.r_tlb),
            sig9(self.r_think),
            sig9(self.r_final),
            sig9(self.advantage),
        )
        .expect("writing to a String");
        s
    }
}

/// Nine significant digits as a JSON number. Plain notation for decimal
/// exponents in `-5..15`, scientific otherwise; trailing zeros are dropped.
/// Non-finite values have no JSON form and become `null`.
pub fn sig9(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..15).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

/// Reads JSONL rollout records, skipping blank lines. Line numbers in errors
/// are 1-based.
pub fn read_rollouts<R: BufRead>(input: R) -> Result<Vec<RolloutRecord>, WireError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| WireError::Json { line: i + 1, source })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(WireError::Empty);
    }
    Ok(out)
}

/// Scores records grouped by `query_id`. Groups need not be contiguous;
/// output order matches input order.
pub fn score_records(
    records: &[RolloutRecord],
    weights: &RewardWeights,
    eps_std: f64,
) -> Result<Vec<ScoreRecord>, WireError> {
    let mut symbols = SymbolTable::numbered(crate::env::CONTENT_SYMBOLS as usize);
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let g = *slot.entry(&r.query_id).or_insert_with(|| {
            groups.push((r.query_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }

    let mut out: Vec<Option<ScoreRecord>> = vec![None; records.len()];
    for (query_id, members) in &groups {
        let rollouts: Vec<Rollout> = members
            .iter()
            .map(|&i| {
                let r = &records[i];
                Rollout::new(query_id.clone(), parse_trace(&lex(&r.text, &mut symbols)), r.correct)
            })
            .collect();
        let (scores, stats) = score_group(&rollouts, weights).map_err(|source| WireError::Budget {
            query_id: query_id.clone(),
            source,
        })?;
        let totals: Vec<f64> = scores.iter().map(|s| s.total).collect();
        let adv = normalize_advantages(&totals, eps_std)?;
        for (k, ((&i, r), s)) in members.iter().zip(&rollouts).zip(&scores).enumerate() {
            out[i] = Some(ScoreRecord {
                query_id: query_id.clone(),
                index: k,
                len: r.len(),
                rho_fast: r.stats.rho_fast,
                rho_slow: r.stats.rho_slow,
                malformed: r.trace.malformed,
                p: stats.success_rate,
                budget: stats.budget,
                lambda: s.lambda,
                r_acc: s.acc,
                r_tlb: s.tlb,
                r_think: s.think,
                r_final: s.total,
                advantage: adv.advantages[k],
            });
        }
    }
    Ok(out.into_iter().map(|r| r.expect("every record scored")).collect())
}
