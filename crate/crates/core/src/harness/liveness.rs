use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::consensus::ProposerId;
use crate::sim::{BehaviorKind, Resolved, Trace, TraceEvent};

use super::Status;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessOptions {
    /// Check this height only; by default every height the trace covers.
    pub target_height: Option<u64>,
    /// Follow-on blocks allowed; defaults per mode.
    pub deadline_blocks: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessFailure {
    pub node: ProposerId,
    pub time: u64,
    /// Earliest height not finalized in time.
    pub target: u64,
    pub tip_height: u64,
    pub finalized: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessReport {
    pub status: Status,
    pub deadline_blocks: u64,
    /// Highest height proposed by GST + 2 delta; targets at or below it are
    /// measured from the block above it.
    pub convergence_height: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_height: Option<u64>,
    /// Highest target checked, over all nodes.
    pub checked_up_to: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<LivenessFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unchecked_nodes: Vec<ProposerId>,
}

/// A target height `l` is due once a node's tip reaches
/// `max(l, convergence) + 1 + deadline`; by then the node must have
/// finalized `l`. Finalized heights only grow, so checking every adoption
/// event is the same as checking the first one that makes `l` due.
pub fn check_liveness(
    trace: &Trace,
    resolved: &Resolved,
    opts: &LivenessOptions,
) -> LivenessReport {
    let sc = &resolved.scenario;
    let deadline = opts
        .deadline_blocks
        .unwrap_or_else(|| resolved.default_deadline());
    let horizon = sc.clock.gst + 2 * sc.clock.delta;
    let convergence = trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Proposed { time, block, .. } if *time <= horizon => Some(block.height),
            _ => None,
        })
        .max()
        .unwrap_or(0);

    let mut checked: BTreeMap<ProposerId, u64> = resolved
        .nodes
        .iter()
        .filter(|p| resolved.behavior(**p).kind == BehaviorKind::Honest)
        .map(|p| (*p, 0))
        .collect();
    let mut failure = None;
    for e in &trace.events {
        let TraceEvent::Adopted {
            time,
            node,
            height,
            finalized,
            ..
        } = e
        else {
            continue;
        };
        let Some(best) = checked.get_mut(node) else {
            continue;
        };
        // largest l with max(l, convergence) + 1 + deadline <= height
        if convergence + 1 + deadline > *height {
            continue;
        }
        let due = height - 1 - deadline;
        let target = match opts.target_height {
            Some(l) if l <= due || (l <= convergence) => l,
            Some(_) => continue,
            None => due,
        };
        if target == 0 {
            continue;
        }
        *best = (*best).max(target);
        if *finalized < target && failure.is_none() {
            failure = Some(LivenessFailure {
                node: *node,
                time: *time,
                target: match opts.target_height {
                    Some(l) => l,
                    None => finalized + 1,
                },
                tip_height: *height,
                finalized: *finalized,
            });
        }
    }
    let unchecked_nodes: Vec<ProposerId> = checked
        .iter()
        .filter(|(_, c)| **c == 0)
        .map(|(p, _)| *p)
        .collect();
    let status = if failure.is_some() {
        Status::Fail
    } else if !unchecked_nodes.is_empty() || checked.is_empty() {
        Status::Insufficient
    } else {
        Status::Pass
    };
    LivenessReport {
        status,
        deadline_blocks: deadline,
        convergence_height: convergence,
        target_height: opts.target_height,
        checked_up_to: checked.values().copied().max().unwrap_or(0),
        failure,
        unchecked_nodes,
    }
}
