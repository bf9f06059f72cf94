//! Transfer metrics over per-instance outcome maps.
//!
//! Every aggregate is recomputed from `instance id -> solved` maps, so a
//! report can always be checked against the episode logs it came from.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Instance id to "solved".
pub type OutcomeMap = BTreeMap<String, bool>;

/// NL estimates on fewer baseline failures than this are flagged unreliable.
pub const NL_RELIABLE_MIN: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no outcomes to score")]
    EmptyOutcomes,
    #[error("{0} subset is empty")]
    UndefinedSubset(&'static str),
    #[error("outcome map has no entry for instance {0}")]
    MissingInstance(String),
}

pub fn accuracy(outcomes: &OutcomeMap) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyOutcomes);
    }
    let solved = outcomes.values().filter(|&&s| s).count();
    Ok(solved as f64 / outcomes.len() as f64)
}

/// Forward transfer: later-task accuracy after the cross sequence minus the
/// scratch accuracy on the same test set. Negative means impaired plasticity.
pub fn fwt(acc_cross_later: f64, acc_scratch_later: f64) -> f64 {
    acc_cross_later - acc_scratch_later
}

/// Backward transfer: earlier-task probe accuracy minus the scratch accuracy.
/// Negative means forgetting.
pub fn bwt(acc_probe_earlier: f64, acc_scratch_earlier: f64) -> f64 {
    acc_probe_earlier - acc_scratch_earlier
}

/// Test ids split by the no-memory baseline outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPartition {
    pub baseline_success_ids: BTreeSet<String>,
    pub baseline_fail_ids: BTreeSet<String>,
}

impl SubsetPartition {
    pub fn n_s(&self) -> usize {
        self.baseline_success_ids.len()
    }

    pub fn n_f(&self) -> usize {
        self.baseline_fail_ids.len()
    }

    pub fn nl_reliable(&self) -> bool {
        self.n_f() >= NL_RELIABLE_MIN
    }
}

pub fn partition(baseline: &OutcomeMap) -> SubsetPartition {
    let (s, f): (Vec<_>, Vec<_>) = baseline.iter().partition(|(_, &ok)| ok);
    SubsetPartition {
        baseline_success_ids: s.into_iter().map(|(id, _)| id.clone()).collect(),
        baseline_fail_ids: f.into_iter().map(|(id, _)| id.clone()).collect(),
    }
}

fn subset_rate(
    ids: &BTreeSet<String>,
    outcomes: &OutcomeMap,
    name: &'static str,
) -> Result<(usize, f64), MetricsError> {
    if ids.is_empty() {
        return Err(MetricsError::UndefinedSubset(name));
    }
    let mut solved = 0;
    for id in ids {
        match outcomes.get(id) {
            Some(true) => solved += 1,
            Some(false) => {}
            None => return Err(MetricsError::MissingInstance(id.clone())),
        }
    }
    Ok((solved, solved as f64 / ids.len() as f64))
}

/// RR (success rate on the baseline-success subset) and NL (on the
/// baseline-fail subset) of one run, with the solved counts behind them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrNl {
    pub rr: f64,
    pub nl: f64,
    pub solved_s: usize,
    pub solved_f: usize,
    pub n_s: usize,
    pub n_f: usize,
}

pub fn rr_nl(p: &SubsetPartition, outcomes: &OutcomeMap) -> Result<RrNl, MetricsError> {
    let (solved_s, rr) = subset_rate(&p.baseline_success_ids, outcomes, "baseline-success")?;
    let (solved_f, nl) = subset_rate(&p.baseline_fail_ids, outcomes, "baseline-fail")?;
    Ok(RrNl {
        rr,
        nl,
        solved_s,
        solved_f,
        n_s: p.n_s(),
        n_f: p.n_f(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaRrNl {
    pub cross: RrNl,
    pub scratch: RrNl,
    pub delta_rr: f64,
    pub delta_nl: f64,
    pub nl_unreliable: bool,
}

pub fn delta_rr_nl(
    p: &SubsetPartition,
    cross: &OutcomeMap,
    scratch: &OutcomeMap,
) -> Result<DeltaRrNl, MetricsError> {
    let c = rr_nl(p, cross)?;
    let s = rr_nl(p, scratch)?;
    Ok(DeltaRrNl {
        cross: c,
        scratch: s,
        delta_rr: c.rr - s.rr,
        delta_nl: c.nl - s.nl,
        nl_unreliable: !p.nl_reliable(),
    })
}

/// `series[i]` = successes among the first `i + 1` episodes / `(i + 1)`.
pub fn cumulative_success(outcomes_in_order: &[bool]) -> Vec<f64> {
    let mut solved = 0usize;
    outcomes_in_order
        .iter()
        .enumerate()
        .map(|(i, &ok)| {
            solved += usize::from(ok);
            solved as f64 / (i + 1) as f64
        })
        .collect()
}

/// RR and NL at each milestone evaluation.
pub fn rr_nl_dynamics(
    p: &SubsetPartition,
    milestones: &[OutcomeMap],
) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let mut rr = Vec::with_capacity(milestones.len());
    let mut nl = Vec::with_capacity(milestones.len());
    for m in milestones {
        let v = rr_nl(p, m)?;
        rr.push(v.rr);
        nl.push(v.nl);
    }
    Ok((rr, nl))
}

/// `(n_s * RR + n_f * NL) / (n_s + n_f)`, which must equal the full-set
/// accuracy of the same run.
pub fn recompose_accuracy(v: &RrNl) -> f64 {
    (v.n_s as f64 * v.rr + v.n_f as f64 * v.nl) / (v.n_s + v.n_f) as f64
}

/// Percentage with one decimal, the precision used in report tables.
pub fn pct1(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}
