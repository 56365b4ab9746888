use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::blocktree::Block;
use crate::consensus::{audit, AuthorHistory, ProposerId, RuleViolation};
use crate::ledger::Ledger;
use crate::lisk::{check_all_pairs, Evidence};
use crate::sim::{Mode, Resolved, Trace, TraceEvent};

use super::{HarnessError, Status};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Accusation {
    /// Two contradicting block headers.
    Headers(Evidence),
    /// A vote breaking one of the voting rules.
    Votes(RuleViolation),
}

impl Accusation {
    pub fn author(&self) -> ProposerId {
        match self {
            Accusation::Headers(e) => e.author,
            Accusation::Votes(v) => v.author,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountabilityReport {
    pub status: Status,
    /// Authors with scripted violations in the trace.
    pub marked: Vec<ProposerId>,
    pub accused: Vec<ProposerId>,
    /// Marked but not accused.
    pub missed: Vec<ProposerId>,
    /// Accused although honest.
    pub wrongly_accused: Vec<ProposerId>,
    pub evidence: Vec<Accusation>,
}

/// Collects every piece of evidence the trace supports and compares the
/// accused authors with the scripted ground truth.
pub fn check_accountability(
    trace: &Trace,
    resolved: &Resolved,
    ledger: &Ledger,
) -> Result<AccountabilityReport, HarnessError> {
    let evidence = collect_evidence(trace, resolved, ledger)?;
    let marked: BTreeSet<ProposerId> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Violation { node, .. } => Some(*node),
            _ => None,
        })
        .collect();
    let accused: BTreeSet<ProposerId> = evidence.iter().map(|a| a.author()).collect();
    let missed: Vec<ProposerId> = marked.difference(&accused).copied().collect();
    let wrongly_accused: Vec<ProposerId> = accused
        .iter()
        .filter(|p| resolved.is_honest(**p))
        .copied()
        .collect();
    let status = if missed.is_empty() && wrongly_accused.is_empty() {
        Status::Pass
    } else {
        Status::Fail
    };
    Ok(AccountabilityReport {
        status,
        marked: marked.into_iter().collect(),
        accused: accused.into_iter().collect(),
        missed,
        wrongly_accused,
        evidence,
    })
}

pub fn collect_evidence(
    trace: &Trace,
    resolved: &Resolved,
    ledger: &Ledger,
) -> Result<Vec<Accusation>, HarnessError> {
    let mut out = Vec::new();
    match resolved.scenario.mode {
        Mode::Lisk => {
            let mut by_author: BTreeMap<ProposerId, Vec<&Block>> = BTreeMap::new();
            for e in &trace.events {
                if let TraceEvent::Proposed { node, block, .. } = e {
                    by_author.entry(*node).or_default().push(block);
                }
            }
            for blocks in by_author.values() {
                out.extend(
                    check_all_pairs(blocks)?
                        .into_iter()
                        .map(Accusation::Headers),
                );
            }
        }
        Mode::General => {
            let mut histories: BTreeMap<ProposerId, AuthorHistory> = BTreeMap::new();
            for e in &trace.events {
                if let TraceEvent::Sent { node, votes, .. } = e {
                    histories
                        .entry(*node)
                        .or_insert_with(|| AuthorHistory::new(*node))
                        .push(votes.clone());
                }
            }
            for h in histories.values() {
                out.extend(
                    audit(ledger.tree(), ledger, h)?
                        .into_iter()
                        .map(Accusation::Votes),
                );
            }
        }
    }
    Ok(out)
}
