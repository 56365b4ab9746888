//! Checkers that turn a trace into a verdict on safety, liveness and
//! accountability.

pub mod accountability;
pub mod liveness;
pub mod safety;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocktree::BlockTreeError;
use crate::consensus::{ConsensusError, DecisionThreshold, ProposerId};
use crate::ledger::{Ledger, LedgerError};
use crate::lisk::LiskError;
use crate::sim::trace::TraceError;
use crate::sim::{Mode, Resolved, RunOutput, ScenarioError, Trace, TraceEvent};

pub use accountability::{
    check_accountability, collect_evidence, AccountabilityReport, Accusation,
};
pub use liveness::{check_liveness, LivenessFailure, LivenessOptions, LivenessReport};
pub use safety::{check_safety, Decision, SafetyReport, SafetyWitness};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Lisk(#[from] LiskError),
}

impl From<BlockTreeError> for HarnessError {
    fn from(e: BlockTreeError) -> Self {
        HarnessError::Consensus(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The trace is too short to decide.
    Insufficient,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Insufficient => "insufficient",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckSelection {
    Safety,
    Liveness,
    Accountability,
    #[default]
    All,
}

impl CheckSelection {
    fn safety(self) -> bool {
        matches!(self, CheckSelection::Safety | CheckSelection::All)
    }
    fn liveness(self) -> bool {
        matches!(self, CheckSelection::Liveness | CheckSelection::All)
    }
    fn accountability(self) -> bool {
        matches!(self, CheckSelection::Accountability | CheckSelection::All)
    }
}

impl FromStr for CheckSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "safety" => Ok(CheckSelection::Safety),
            "liveness" => Ok(CheckSelection::Liveness),
            "accountability" => Ok(CheckSelection::Accountability),
            "all" => Ok(CheckSelection::All),
            other => Err(format!("unknown check {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckOptions {
    pub checks: CheckSelection,
    pub liveness: LivenessOptions,
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SAFETY: i32 = 2;
pub const EXIT_LIVENESS: i32 = 3;
pub const EXIT_ACCOUNTABILITY: i32 = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub n: usize,
    /// Least number of equal-weight proposers strictly above two thirds.
    pub quorum: usize,
    pub thresholds: BTreeMap<String, DecisionThreshold>,
    pub blocks: u64,
    pub max_height: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liveness: Option<LivenessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accountability: Option<AccountabilityReport>,
}

impl Verdict {
    /// 0 if every selected check passed; otherwise the code of the first
    /// failing check in the order safety, liveness, accountability. An
    /// insufficient liveness trace does not fail the run.
    pub fn exit_code(&self) -> i32 {
        if self
            .safety
            .as_ref()
            .is_some_and(|r| r.status == Status::Fail)
        {
            EXIT_SAFETY
        } else if self
            .liveness
            .as_ref()
            .is_some_and(|r| r.status == Status::Fail)
        {
            EXIT_LIVENESS
        } else if self
            .accountability
            .as_ref()
            .is_some_and(|r| r.status == Status::Fail)
        {
            EXIT_ACCOUNTABILITY
        } else {
            EXIT_PASS
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }

    /// One line per selected check.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} mode={} seed={} n={} quorum={} blocks={} max_height={}\n",
            self.scenario, self.mode, self.seed, self.n, self.quorum, self.blocks, self.max_height
        );
        if let Some(s) = &self.safety {
            out += &format!("safety: {} ({} decisions)", s.status, s.decisions);
            if let Some(w) = &s.witness {
                out += &format!(
                    " witness {} by {} vs {} by {}",
                    w.first.block, w.first.node, w.second.block, w.second.node
                );
            }
            out.push('\n');
        }
        if let Some(l) = &self.liveness {
            out += &format!(
                "liveness: {} (deadline {} blocks, checked up to height {})",
                l.status, l.deadline_blocks, l.checked_up_to
            );
            if let Some(f) = &l.failure {
                out += &format!(
                    " node {} had height {} unfinalized at tip {}",
                    f.node, f.target, f.tip_height
                );
            }
            out.push('\n');
        }
        if let Some(a) = &self.accountability {
            out += &format!(
                "accountability: {} ({} evidence, {} accused, {} marked)\n",
                a.status,
                a.evidence.len(),
                a.accused.len(),
                a.marked.len()
            );
        }
        out
    }
}

/// Rebuilds the run's ledger from the proposals in a trace.
pub fn replay(trace: &Trace) -> Result<(Resolved, Ledger), HarnessError> {
    let resolved = trace.scenario()?.resolve()?;
    let mut ledger = Ledger::from_resolved(&resolved);
    for e in &trace.events {
        if let TraceEvent::Proposed { block, .. } = e {
            ledger.add_block((**block).clone())?;
        }
    }
    Ok((resolved, ledger))
}

pub fn check(trace: &Trace, opts: &CheckOptions) -> Result<Verdict, HarnessError> {
    let (resolved, ledger) = replay(trace)?;
    check_with(trace, &resolved, &ledger, opts)
}

pub fn check_run(out: &RunOutput, opts: &CheckOptions) -> Result<Verdict, HarnessError> {
    check_with(&out.trace, &out.resolved, &out.ledger, opts)
}

pub fn check_with(
    trace: &Trace,
    resolved: &Resolved,
    ledger: &Ledger,
    opts: &CheckOptions,
) -> Result<Verdict, HarnessError> {
    let sc = trace.scenario()?;
    let thresholds = match trace.header() {
        Some(TraceEvent::Header { thresholds, .. }) => thresholds.clone(),
        _ => Vec::new(),
    };
    let thresholds: BTreeMap<String, DecisionThreshold> = thresholds
        .into_iter()
        .map(|(p, t): (ProposerId, _)| (p.to_string(), t))
        .collect();
    let (blocks, max_height) = trace
        .events
        .iter()
        .rev()
        .find_map(|e| match e {
            TraceEvent::End {
                blocks, max_height, ..
            } => Some((*blocks, *max_height)),
            _ => None,
        })
        .unwrap_or((ledger.len() as u64 - 1, ledger.max_height()));
    Ok(Verdict {
        scenario: sc.name.clone(),
        mode: sc.mode,
        seed: sc.seed,
        n: resolved.initial.len(),
        quorum: resolved.quorum_count(),
        thresholds,
        blocks,
        max_height,
        safety: if opts.checks.safety() {
            Some(check_safety(trace, resolved, ledger)?)
        } else {
            None
        },
        liveness: opts
            .checks
            .liveness()
            .then(|| check_liveness(trace, resolved, &opts.liveness)),
        accountability: if opts.checks.accountability() {
            Some(check_accountability(trace, resolved, ledger)?)
        } else {
            None
        },
    })
}
