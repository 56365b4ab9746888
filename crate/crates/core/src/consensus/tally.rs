use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::blocktree::{Block, BlockId, BlockTree};
use crate::dynamics::ProposerSet;

use super::{ConsensusError, ProposerId, Vote, VoterSet, Weight};

/// Votes for one block, counted along one branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TallyEntry {
    pub block: BlockId,
    pub height: u64,
    /// Active set of the block's round; weights are measured against it.
    pub set: Arc<ProposerSet>,
    pub prevoters: VoterSet,
    pub precommitters: VoterSet,
    pub prevote_stake: u64,
    pub precommit_stake: u64,
}

impl TallyEntry {
    fn new(block: BlockId, height: u64, set: Arc<ProposerSet>) -> Self {
        TallyEntry {
            block,
            height,
            set,
            prevoters: VoterSet::new(),
            precommitters: VoterSet::new(),
            prevote_stake: 0,
            precommit_stake: 0,
        }
    }

    pub fn prevote_weight(&self) -> Weight {
        Weight::new(self.prevote_stake as u128, self.set.total() as u128)
    }

    pub fn precommit_weight(&self) -> Weight {
        Weight::new(self.precommit_stake as u128, self.set.total() as u128)
    }

    pub fn has_prevote_quorum(&self) -> bool {
        self.set.is_quorum(self.prevote_stake)
    }

    pub fn has_precommit_quorum(&self) -> bool {
        self.set.is_quorum(self.precommit_stake)
    }
}

/// Prevotes and precommits included in the chain from genesis up to `tip`,
/// stored as one entry per height. With a window, only the most recent
/// `window` heights are kept; the running maxima survive pruning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainTally {
    tip: BlockId,
    tip_height: u64,
    base: u64,
    entries: Vec<Arc<TallyEntry>>,
    max_prevoted: (u64, BlockId),
    max_precommitted: (u64, BlockId),
    window: Option<u64>,
}

impl ChainTally {
    /// Tally of the genesis chain; genesis carries prevotes by every member.
    pub fn genesis(genesis: BlockId, set: Arc<ProposerSet>, window: Option<u64>) -> Self {
        let mut e = TallyEntry::new(genesis, 0, set.clone());
        e.prevoters = *set.mask();
        e.prevote_stake = set.total();
        ChainTally {
            tip: genesis,
            tip_height: 0,
            base: 0,
            entries: vec![Arc::new(e)],
            max_prevoted: (0, genesis),
            max_precommitted: (0, genesis),
            window,
        }
    }

    pub fn tip(&self) -> BlockId {
        self.tip
    }

    pub fn tip_height(&self) -> u64 {
        self.tip_height
    }

    /// Lowest height still held.
    pub fn base_height(&self) -> u64 {
        self.base
    }

    pub fn window(&self) -> Option<u64> {
        self.window
    }

    pub fn entry_at(&self, height: u64) -> Option<&TallyEntry> {
        if height < self.base {
            return None;
        }
        self.entries
            .get((height - self.base) as usize)
            .map(|e| &**e)
    }

    /// The entry for `block` at `height`, if that block is on this branch.
    pub fn entry_for(&self, block: BlockId, height: u64) -> Option<&TallyEntry> {
        self.entry_at(height).filter(|e| e.block == block)
    }

    pub fn block_at(&self, height: u64) -> Option<BlockId> {
        self.entry_at(height).map(|e| e.block)
    }

    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &TallyEntry> {
        self.entries.iter().map(|e| &**e)
    }

    /// Highest block with more than two thirds prevote weight.
    pub fn max_prevoted(&self) -> (u64, BlockId) {
        self.max_prevoted
    }

    pub fn max_prevoted_height(&self) -> u64 {
        self.max_prevoted.0
    }

    /// Highest block with more than two thirds precommit weight.
    pub fn max_precommitted(&self) -> (u64, BlockId) {
        self.max_precommitted
    }

    /// Whether `author` has a prevote for the block at `height` in this
    /// chain; `None` if the height is outside the held range.
    pub fn has_prevoted(&self, author: ProposerId, height: u64) -> Option<bool> {
        self.entry_at(height).map(|e| e.prevoters.contains(author))
    }

    /// Highest held height at which `author` has an included precommit.
    pub fn last_precommit_height(&self, author: ProposerId) -> Option<u64> {
        self.entries()
            .rev()
            .find(|e| e.precommitters.contains(author))
            .map(|e| e.height)
    }

    fn push_entry(&mut self, block: &Block, set: Arc<ProposerSet>) {
        self.entries
            .push(Arc::new(TallyEntry::new(block.id, block.height, set)));
        self.tip = block.id;
        self.tip_height = block.height;
    }

    fn add_vote(&mut self, vote: &Vote, target_height: u64) {
        if target_height < self.base || target_height > self.tip_height {
            return;
        }
        let idx = (target_height - self.base) as usize;
        if self.entries[idx].block != vote.target() {
            return;
        }
        let author = vote.author();
        let e = &self.entries[idx];
        let fresh = match vote {
            Vote::Prevote(_) => !e.prevoters.contains(author),
            Vote::Precommit(_) => !e.precommitters.contains(author),
        };
        if !fresh {
            return;
        }
        let e = Arc::make_mut(&mut self.entries[idx]);
        let stake = e.set.stake(author);
        match vote {
            Vote::Prevote(_) => {
                e.prevoters.insert(author);
                e.prevote_stake += stake;
                if e.has_prevote_quorum() && e.height > self.max_prevoted.0 {
                    self.max_prevoted = (e.height, e.block);
                }
            }
            Vote::Precommit(_) => {
                e.precommitters.insert(author);
                e.precommit_stake += stake;
                if e.has_precommit_quorum() && e.height > self.max_precommitted.0 {
                    self.max_precommitted = (e.height, e.block);
                }
            }
        }
    }

    fn prune(&mut self) {
        if let Some(w) = self.window {
            let w = w.max(1) as usize;
            if self.entries.len() > w {
                let drop = self.entries.len() - w;
                self.entries.drain(..drop);
                self.base += drop as u64;
            }
        }
    }
}

/// Extends the tally of `block`'s parent with `block` and the votes it
/// includes. Votes for blocks off this branch or below the window are
/// ignored; repeated votes count once.
pub fn update_tally(
    tree: &BlockTree,
    parent: &ChainTally,
    block: &Block,
    set: Arc<ProposerSet>,
    votes: &[Vote],
) -> Result<ChainTally, ConsensusError> {
    if block.parent != Some(parent.tip) || block.height != parent.tip_height + 1 {
        return Err(ConsensusError::NotChild {
            block: block.id,
            tip: parent.tip,
        });
    }
    let mut t = parent.clone();
    t.push_entry(block, set);
    for v in votes {
        let h = if v.target() == block.id {
            block.height
        } else {
            tree.height(v.target())?
        };
        t.add_vote(v, h);
    }
    t.prune();
    Ok(t)
}

/// Lookup of per-block chain tallies.
pub trait TallySource {
    fn tally(&self, block: BlockId) -> Option<&ChainTally>;

    fn require(&self, block: BlockId) -> Result<&ChainTally, ConsensusError> {
        self.tally(block).ok_or(ConsensusError::MissingTally(block))
    }
}

impl TallySource for HashMap<BlockId, ChainTally> {
    fn tally(&self, block: BlockId) -> Option<&ChainTally> {
        self.get(&block)
    }
}

impl TallySource for BTreeMap<BlockId, ChainTally> {
    fn tally(&self, block: BlockId) -> Option<&ChainTally> {
        self.get(&block)
    }
}
