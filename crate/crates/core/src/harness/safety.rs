use serde::{Deserialize, Serialize};

use crate::blocktree::BlockId;
use crate::consensus::{DecisionThreshold, ProposerId};
use crate::ledger::Ledger;
use crate::sim::{Resolved, Trace, TraceEvent};

use super::{HarnessError, Status};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub time: u64,
    pub node: ProposerId,
    pub block: BlockId,
    pub height: u64,
    pub threshold: DecisionThreshold,
}

/// Two conflicting finalized blocks; `second` is the decision that first
/// conflicted with an earlier one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyWitness {
    pub first: Decision,
    pub second: Decision,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub status: Status,
    pub decisions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<SafetyWitness>,
}

/// Fails iff honest proposers finalized conflicting blocks. Decisions are
/// ancestor-closed, so it is enough to compare each new decision with the
/// maximal decided blocks seen so far.
pub fn check_safety(
    trace: &Trace,
    resolved: &Resolved,
    ledger: &Ledger,
) -> Result<SafetyReport, HarnessError> {
    let tree = ledger.tree();
    let mut tips: Vec<Decision> = Vec::new();
    let mut decisions = 0;
    for e in &trace.events {
        let TraceEvent::Finalized {
            time,
            node,
            block,
            height,
        } = e
        else {
            continue;
        };
        if !resolved.is_honest(*node) {
            continue;
        }
        decisions += 1;
        let d = Decision {
            time: *time,
            node: *node,
            block: *block,
            height: *height,
            threshold: threshold_of(trace, resolved, *node),
        };
        let mut covered = false;
        for t in &tips {
            if tree.are_conflicting(t.block, d.block)? {
                return Ok(SafetyReport {
                    status: Status::Fail,
                    decisions,
                    witness: Some(SafetyWitness {
                        first: t.clone(),
                        second: d,
                    }),
                });
            }
            if tree.is_ancestor_or_self(d.block, t.block)? {
                covered = true;
            }
        }
        if !covered {
            let mut kept = Vec::with_capacity(tips.len() + 1);
            for t in tips {
                if !tree.is_ancestor(t.block, d.block)? {
                    kept.push(t);
                }
            }
            kept.push(d);
            tips = kept;
        }
    }
    Ok(SafetyReport {
        status: Status::Pass,
        decisions,
        witness: None,
    })
}

fn threshold_of(trace: &Trace, resolved: &Resolved, p: ProposerId) -> DecisionThreshold {
    if let Some(TraceEvent::Header { thresholds, .. }) = trace.header() {
        if let Some((_, t)) = thresholds.iter().find(|(q, _)| *q == p) {
            return *t;
        }
    }
    resolved.threshold(p)
}
