//! Approve messages: one message standing for a run of prevotes plus the
//! precommits they unlock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocktree::{BlockId, BlockTree};
use crate::consensus::{ChainTally, ConsensusError, ImpliedVotes, Precommit, Prevote, ProposerId};

/// `Approve(k, p, T, P)`: the author approves the blocks above height `k` up
/// to `context`, whose chain has its highest prevote quorum at height `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Approve {
    pub k: u64,
    pub p: u64,
    pub context: BlockId,
    pub author: ProposerId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApproveViolation {
    KNotBelowContext { k: u64, context_height: u64 },
    PNotBelowContext { p: u64, context_height: u64 },
    WrongPrevotedHeight { declared: u64, actual: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotonicityClause {
    /// The earlier message's context is above the later message's `k`.
    ContextAboveK,
    /// The prevoted height went down.
    PrevotedDecreased,
}

/// Two approves by one author breaking the ordering rule; `first` is the
/// message with the smaller (or equal) `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub first: Approve,
    pub second: Approve,
    pub clause: MonotonicityClause,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApproveError {
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("invalid approve {approve:?}: {violation:?}")]
    InvalidApprove {
        approve: Approve,
        violation: ApproveViolation,
    },
    #[error("tally tip {tip} is not the approve context {context}")]
    WrongTally { tip: BlockId, context: BlockId },
}

impl From<crate::blocktree::BlockTreeError> for ApproveError {
    fn from(e: crate::blocktree::BlockTreeError) -> Self {
        ApproveError::Consensus(e.into())
    }
}

/// Checks the height bounds and the declared prevoted height against the
/// tally of the context chain.
pub fn validate_approve(
    a: &Approve,
    tree: &BlockTree,
    context_tally: &ChainTally,
) -> Result<Option<ApproveViolation>, ConsensusError> {
    let h = tree.height(a.context)?;
    if a.k >= h {
        return Ok(Some(ApproveViolation::KNotBelowContext {
            k: a.k,
            context_height: h,
        }));
    }
    if a.p >= h {
        return Ok(Some(ApproveViolation::PNotBelowContext {
            p: a.p,
            context_height: h,
        }));
    }
    let actual = context_tally.max_prevoted_height();
    if a.p != actual {
        return Ok(Some(ApproveViolation::WrongPrevotedHeight {
            declared: a.p,
            actual,
        }));
    }
    Ok(None)
}

fn ordered_pair_violation(
    tree: &BlockTree,
    first: &Approve,
    second: &Approve,
) -> Result<Option<MonotonicityViolation>, ConsensusError> {
    let clause = if tree.height(first.context)? > second.k {
        MonotonicityClause::ContextAboveK
    } else if first.p > second.p {
        MonotonicityClause::PrevotedDecreased
    } else {
        return Ok(None);
    };
    Ok(Some(MonotonicityViolation {
        first: *first,
        second: *second,
        clause,
    }))
}

/// Checks `new` against every distinct earlier approve by the same author.
pub fn check_monotonicity(
    tree: &BlockTree,
    history: &[Approve],
    new: &Approve,
) -> Result<Option<MonotonicityViolation>, ConsensusError> {
    for old in history
        .iter()
        .filter(|o| o.author == new.author && *o != new)
    {
        if old.k <= new.k {
            if let Some(v) = ordered_pair_violation(tree, old, new)? {
                return Ok(Some(v));
            }
        }
        if new.k <= old.k {
            if let Some(v) = ordered_pair_violation(tree, new, old)? {
                return Ok(Some(v));
            }
        }
    }
    Ok(None)
}

/// Votes implied by `a` on the chain ending at its context, using the votes
/// already included in that chain (`context_tally`, context inclusive).
/// Genesis is never precommitted; it is final by convention.
pub fn expand_approve(
    a: &Approve,
    tree: &BlockTree,
    context_tally: &ChainTally,
) -> Result<ImpliedVotes, ApproveError> {
    if context_tally.tip() != a.context {
        return Err(ApproveError::WrongTally {
            tip: context_tally.tip(),
            context: a.context,
        });
    }
    if let Some(violation) = validate_approve(a, tree, context_tally)? {
        return Err(ApproveError::InvalidApprove {
            approve: *a,
            violation,
        });
    }
    let r = context_tally.tip_height();
    let block_at = |h: u64| {
        context_tally
            .block_at(h)
            .ok_or(ConsensusError::MissingTally(a.context))
    };
    let mut out = ImpliedVotes::default();
    for h in a.k + 1..=r {
        out.prevotes.push(Prevote {
            target: block_at(h)?,
            context: a.context,
            author: a.author,
        });
    }
    let j1 = context_tally.last_precommit_height(a.author);
    let j2 = (1..=a.k)
        .rev()
        .find(|&s| context_tally.has_prevoted(a.author, s) == Some(false));
    let j = j1.max(j2).map_or(0, |x| x + 1).max(1);
    for h in j..=r {
        let e = context_tally
            .entry_at(h)
            .ok_or(ConsensusError::MissingTally(a.context))?;
        if e.has_prevote_quorum() {
            out.precommits.push(Precommit {
                target: e.block,
                context: a.context,
                author: a.author,
            });
        }
    }
    Ok(out)
}
