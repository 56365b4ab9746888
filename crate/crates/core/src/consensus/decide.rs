use std::collections::{BTreeMap, BTreeSet};

use crate::blocktree::{BlockId, BlockTree};
use crate::dynamics::ProposerSet;

use super::{ConsensusError, DecisionThreshold, ProposerId, VoterSet};

/// Blocks a proposer decides for, given the precommits it received per
/// target block. `set_of` returns the active set the precommit weight of a
/// block is measured against. The result is closed under ancestors.
pub fn decide<'a>(
    tree: &BlockTree,
    received: &BTreeMap<BlockId, VoterSet>,
    set_of: impl Fn(BlockId) -> Option<&'a ProposerSet>,
    tau: DecisionThreshold,
) -> Result<BTreeSet<BlockId>, ConsensusError> {
    let mut out = BTreeSet::new();
    for (&b, voters) in received {
        let Some(set) = set_of(b) else { continue };
        if !tau.is_exceeded_by(set.stake_of(voters) as u128, set.total() as u128) {
            continue;
        }
        let mut cur = Some(b);
        while let Some(id) = cur {
            if !out.insert(id) {
                break;
            }
            cur = tree.parent(id)?;
        }
    }
    Ok(out)
}

/// Incremental form of [`decide`] for one proposer.
#[derive(Clone, Debug)]
pub struct Decider {
    tau: DecisionThreshold,
    received: BTreeMap<BlockId, VoterSet>,
    /// Maximal decided blocks; everything below them is decided too.
    decided: Vec<(u64, BlockId)>,
}

impl Decider {
    pub fn new(tau: DecisionThreshold) -> Self {
        Decider {
            tau,
            received: BTreeMap::new(),
            decided: Vec::new(),
        }
    }

    pub fn threshold(&self) -> DecisionThreshold {
        self.tau
    }

    pub fn received(&self) -> &BTreeMap<BlockId, VoterSet> {
        &self.received
    }

    /// Records a precommit by `author` for `target`. Returns the target if
    /// this precommit makes the proposer decide for a block it had not
    /// already decided for.
    pub fn add_precommit(
        &mut self,
        tree: &BlockTree,
        author: ProposerId,
        target: BlockId,
        set: &ProposerSet,
    ) -> Result<Option<BlockId>, ConsensusError> {
        let voters = self.received.entry(target).or_default();
        if !voters.insert(author) {
            return Ok(None);
        }
        if !self
            .tau
            .is_exceeded_by(set.stake_of(voters) as u128, set.total() as u128)
        {
            return Ok(None);
        }
        if self.mark_decided(tree, target)? {
            Ok(Some(target))
        } else {
            Ok(None)
        }
    }

    /// Decides for `target` and its ancestors. Returns false if it was
    /// already decided.
    pub fn mark_decided(
        &mut self,
        tree: &BlockTree,
        target: BlockId,
    ) -> Result<bool, ConsensusError> {
        if self.is_decided(tree, target)? {
            return Ok(false);
        }
        let h = tree.height(target)?;
        let mut kept = Vec::with_capacity(self.decided.len() + 1);
        for &(dh, d) in &self.decided {
            if !tree.is_ancestor(d, target)? {
                kept.push((dh, d));
            }
        }
        kept.push((h, target));
        self.decided = kept;
        Ok(true)
    }

    pub fn is_decided(&self, tree: &BlockTree, b: BlockId) -> Result<bool, ConsensusError> {
        if b.is_genesis() {
            return Ok(true);
        }
        for &(_, d) in &self.decided {
            if tree.is_ancestor_or_self(b, d)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Maximal decided blocks, in decision order.
    pub fn decided_tips(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.decided.iter().map(|(_, b)| *b)
    }

    pub fn finalized_height(&self) -> u64 {
        self.decided.iter().map(|(h, _)| *h).max().unwrap_or(0)
    }
}
