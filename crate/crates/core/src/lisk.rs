//! Lisk-BFT: votes encoded in two header integers, finalization from
//! included precommits, and detection of contradicting blocks.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocktree::{Block, BlockId};
use crate::consensus::{ChainTally, ConsensusError, ImpliedVotes, Precommit, Prevote, ProposerId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LiskHeader {
    /// Largest height the proposer proposed before, on any branch.
    pub h_previous: u64,
    /// Largest prevote-quorum height in the parent chain.
    pub h_prevoted: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiskConfig {
    pub round_length: u64,
    /// Number of most recent heights header votes reach back to.
    pub window: u64,
    pub delay: u64,
}

impl Default for LiskConfig {
    fn default() -> Self {
        LiskConfig {
            round_length: 101,
            window: 303,
            delay: 2,
        }
    }
}

impl LiskConfig {
    pub fn new(round_length: u64, window: u64) -> Self {
        LiskConfig {
            round_length,
            window,
            delay: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegateState {
    pub proposer: ProposerId,
    /// First height of the round since which the delegate has been
    /// continuously active on the chain in question; `None` if inactive.
    pub h0: Option<u64>,
    pub max_proposed_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LiskError {
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("delegate {0} is not active")]
    NotActive(ProposerId),
    #[error("delegate {proposer} is not active at height {height}")]
    InactiveAtHeight { proposer: ProposerId, height: u64 },
    #[error("block {block} has a malformed header: {reason}")]
    MalformedHeader {
        block: BlockId,
        reason: &'static str,
    },
    #[error("blocks {a} and {b} have different authors")]
    DifferentAuthors { a: BlockId, b: BlockId },
}

/// Header for a new block on the chain whose tally is `parent_tally`.
pub fn make_header(
    state: &DelegateState,
    parent_tally: &ChainTally,
) -> Result<LiskHeader, LiskError> {
    if state.h0.is_none() {
        return Err(LiskError::NotActive(state.proposer));
    }
    Ok(LiskHeader {
        h_previous: state.max_proposed_height,
        h_prevoted: parent_tally.max_prevoted_height(),
    })
}

/// Votes implied by the header of `block`, using the votes included in the
/// parent chain. `h0` is the author's activity start on this chain.
pub fn expand_header(
    block: &Block,
    parent_tally: &ChainTally,
    h0: Option<u64>,
    cfg: &LiskConfig,
) -> Result<ImpliedVotes, LiskError> {
    let malformed = |reason| LiskError::MalformedHeader {
        block: block.id,
        reason,
    };
    let header = block.header.ok_or_else(|| malformed("missing header"))?;
    let author = block
        .proposer
        .ok_or_else(|| malformed("missing proposer"))?;
    if block.parent != Some(parent_tally.tip()) {
        return Err(ConsensusError::NotChild {
            block: block.id,
            tip: parent_tally.tip(),
        }
        .into());
    }
    let l = block.height;
    if header.h_prevoted >= l {
        return Err(malformed("prevoted height not below block height"));
    }
    if header.h_previous >= l {
        return Ok(ImpliedVotes::default());
    }
    let h0 = h0.ok_or(LiskError::InactiveAtHeight {
        proposer: author,
        height: l,
    })?;
    let li = l as i64;
    let floor = (h0 as i64 - 1).max(li - cfg.window as i64);
    let k = (header.h_previous as i64).max(floor);

    let mut out = ImpliedVotes::default();
    for h in (k + 1) as u64..l {
        let target = parent_tally
            .block_at(h)
            .ok_or(ConsensusError::MissingTally(parent_tally.tip()))?;
        out.prevotes.push(Prevote {
            target,
            context: block.id,
            author,
        });
    }
    out.prevotes.push(Prevote {
        target: block.id,
        context: block.id,
        author,
    });

    let j1 = parent_tally
        .last_precommit_height(author)
        .map_or(-1, |h| h as i64);
    let lo = parent_tally.base_height().max(1);
    let j2 = (lo..=header.h_previous)
        .rev()
        .find(|&s| parent_tally.has_prevoted(author, s) == Some(false))
        .map_or(-1, |h| h as i64);
    let j = j1.max(j2).max(floor) + 1;
    // the block itself has no included prevotes yet, so stop below it
    for h in j.max(1) as u64..l {
        let e = parent_tally
            .entry_at(h)
            .ok_or(ConsensusError::MissingTally(parent_tally.tip()))?;
        if e.has_prevote_quorum() {
            out.precommits.push(Precommit {
                target: e.block,
                context: block.id,
                author,
            });
        }
    }
    Ok(out)
}

/// Finalized height on the chain ending at the tally's tip.
pub fn finalized_height(tip_tally: &ChainTally) -> u64 {
    tip_tally.max_precommitted().0
}

/// `(h_previous, h_prevoted, height)` of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeaderTriple {
    pub h_previous: u64,
    pub h_prevoted: u64,
    pub height: u64,
}

impl HeaderTriple {
    pub fn of(block: &Block) -> Result<Self, LiskError> {
        let h = block.header.ok_or(LiskError::MalformedHeader {
            block: block.id,
            reason: "missing header",
        })?;
        Ok(HeaderTriple {
            h_previous: h.h_previous,
            h_prevoted: h.h_prevoted,
            height: block.height,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalOrder {
    FirstBefore,
    SecondBefore,
    Tie,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContradictionClause {
    /// `h_previous` decreased.
    PreviousOrder,
    /// `h_prevoted` decreased.
    PrevotedOrder,
    /// The later block's `h_previous` is below the earlier block's height.
    HeightBeforePrevious,
    /// Equal `h_prevoted` without a strictly higher later block.
    SamePrevotedHeight,
    /// Identical triples on distinct blocks.
    OrderTie,
}

/// Two blocks by one author that no honest proposal order explains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub author: ProposerId,
    /// The block inferred to come first.
    pub block_a: BlockId,
    pub block_b: BlockId,
    pub clause: ContradictionClause,
    pub inferred_order: ProposalOrder,
    pub triple_a: HeaderTriple,
    pub triple_b: HeaderTriple,
}

fn same_author(a: &Block, b: &Block) -> Result<ProposerId, LiskError> {
    match (a.proposer, b.proposer) {
        (Some(x), Some(y)) if x == y => Ok(x),
        _ => Err(LiskError::DifferentAuthors { a: a.id, b: b.id }),
    }
}

/// Proposal order implied by the lexicographic order of header triples.
pub fn infer_order(a: &Block, b: &Block) -> Result<ProposalOrder, LiskError> {
    same_author(a, b)?;
    Ok(match HeaderTriple::of(a)?.cmp(&HeaderTriple::of(b)?) {
        Ordering::Less => ProposalOrder::FirstBefore,
        Ordering::Greater => ProposalOrder::SecondBefore,
        Ordering::Equal => ProposalOrder::Tie,
    })
}

/// Evidence if `a` and `b` are contradicting; the same block never is.
pub fn check_contradicting(a: &Block, b: &Block) -> Result<Option<Evidence>, LiskError> {
    let author = same_author(a, b)?;
    if a.id == b.id {
        return Ok(None);
    }
    let order = infer_order(a, b)?;
    let (first, second) = match order {
        ProposalOrder::SecondBefore => (b, a),
        _ => (a, b),
    };
    let (t1, t2) = (HeaderTriple::of(first)?, HeaderTriple::of(second)?);
    let clause = if order == ProposalOrder::Tie {
        Some(ContradictionClause::OrderTie)
    } else if t1.h_previous > t2.h_previous {
        Some(ContradictionClause::PreviousOrder)
    } else if t1.h_prevoted > t2.h_prevoted {
        Some(ContradictionClause::PrevotedOrder)
    } else if t1.height > t2.h_previous {
        Some(ContradictionClause::HeightBeforePrevious)
    } else if t1.h_prevoted == t2.h_prevoted && t1.height >= t2.height {
        Some(ContradictionClause::SamePrevotedHeight)
    } else {
        None
    };
    Ok(clause.map(|clause| Evidence {
        author,
        block_a: first.id,
        block_b: second.id,
        clause,
        inferred_order: order,
        triple_a: t1,
        triple_b: t2,
    }))
}

/// Checks consecutive blocks by `author` along `chain` (genesis first).
pub fn check_successive_pairs(
    chain: &[Arc<Block>],
    author: ProposerId,
) -> Result<Option<Evidence>, LiskError> {
    let mut prev: Option<&Block> = None;
    for b in chain.iter().filter(|b| b.proposer == Some(author)) {
        if let Some(p) = prev {
            if let Some(e) = check_contradicting(p, b)? {
                return Ok(Some(e));
            }
        }
        prev = Some(b);
    }
    Ok(None)
}

/// Checks every pair of the given blocks, all by one author.
pub fn check_all_pairs(blocks: &[&Block]) -> Result<Vec<Evidence>, LiskError> {
    let mut out = Vec::new();
    for (i, a) in blocks.iter().enumerate() {
        for b in &blocks[i + 1..] {
            if let Some(e) = check_contradicting(a, b)? {
                out.push(e);
            }
        }
    }
    Ok(out)
}
