//! Every block created in a run, with the branch-derived data each block
//! fixes: active set, activity starts, set state, implied votes, tally and
//! validity. Both the simulator and the trace checkers build one.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approve::expand_approve;
use crate::blocktree::{Block, BlockId, BlockTree, BlockTreeError};
use crate::consensus::{update_tally, ChainTally, ConsensusError, ProposerId, TallySource, Vote};
use crate::dynamics::{ProposerSet, RoundSchedule, SetState};
use crate::lisk::{expand_header, LiskConfig};
use crate::sim::scenario::{Mode, Resolved};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("block {got} added out of order, expected id {expected}")]
    OutOfOrder { got: BlockId, expected: BlockId },
    #[error(transparent)]
    Tree(#[from] BlockTreeError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Invalid {
    NotSlotOwner { expected: ProposerId },
    SlotNotAfterParent,
    InactiveProposer,
    MissingHeader,
    WrongPrevotedHeight { declared: u64, expected: u64 },
    BadChange,
    BadVotes,
    InvalidParent,
}

/// Data a child of a block inherits: its round, active set and activity
/// starts of that set's members.
#[derive(Clone, Debug)]
pub struct ChildContext {
    pub height: u64,
    pub round: u64,
    pub set: Arc<ProposerSet>,
    pub h0: Arc<BTreeMap<ProposerId, u64>>,
}

#[derive(Clone, Debug)]
pub struct BlockRecord {
    pub block: Arc<Block>,
    pub round: u64,
    /// Active set of the block's round on its branch.
    pub set: Arc<ProposerSet>,
    pub h0: Arc<BTreeMap<ProposerId, u64>>,
    /// Membership state after this block's changes.
    pub state: Arc<SetState>,
    /// Votes this block adds to its chain.
    pub votes: Vec<Vote>,
    pub tally: ChainTally,
    pub validity: Result<(), Invalid>,
    child: ChildContext,
}

impl BlockRecord {
    pub fn is_valid(&self) -> bool {
        self.validity.is_ok()
    }

    pub fn child_context(&self) -> &ChildContext {
        &self.child
    }
}

pub struct Ledger {
    pub mode: Mode,
    pub schedule: RoundSchedule,
    pub lisk: LiskConfig,
    tree: BlockTree,
    records: Vec<BlockRecord>,
    max_height: u64,
    perms: RefCell<PermCache>,
}

/// Permutations keyed by (round, set epoch).
type PermCache = HashMap<(u64, u64), Arc<Vec<ProposerId>>>;

impl TallySource for Ledger {
    fn tally(&self, block: BlockId) -> Option<&ChainTally> {
        self.records.get(block.0 as usize).map(|r| &r.tally)
    }
}

impl Ledger {
    pub fn new(mode: Mode, schedule: RoundSchedule, lisk: LiskConfig) -> Self {
        let genesis = Arc::new(Block::genesis());
        let state = schedule.initial.clone();
        let set = state.set().clone();
        let window = (mode == Mode::Lisk).then_some(lisk.window);
        let h0: Arc<BTreeMap<ProposerId, u64>> = Arc::new(set.ids().map(|p| (p, 0)).collect());
        let mut ledger = Ledger {
            mode,
            schedule,
            lisk,
            tree: BlockTree::with_genesis(genesis.clone()),
            records: Vec::new(),
            max_height: 0,
            perms: RefCell::new(HashMap::new()),
        };
        let child = ChildContext {
            height: 1,
            round: ledger.schedule.round_of(1),
            set: set.clone(),
            h0: h0.clone(),
        };
        let mut rec = BlockRecord {
            block: genesis,
            round: 0,
            set: set.clone(),
            h0,
            state,
            votes: Vec::new(),
            tally: ChainTally::genesis(BlockId::GENESIS, set, window),
            validity: Ok(()),
            child,
        };
        rec.child = ledger.context_after(&rec).expect("genesis context");
        ledger.records.push(rec);
        ledger
    }

    pub fn from_resolved(r: &Resolved) -> Self {
        Self::new(r.scenario.mode, r.schedule.clone(), r.lisk)
    }

    pub fn tree(&self) -> &BlockTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_id(&self) -> BlockId {
        BlockId(self.records.len() as u64)
    }

    pub fn max_height(&self) -> u64 {
        self.max_height
    }

    pub fn record(&self, id: BlockId) -> &BlockRecord {
        &self.records[id.0 as usize]
    }

    pub fn get(&self, id: BlockId) -> Option<&BlockRecord> {
        self.records.get(id.0 as usize)
    }

    pub fn records(&self) -> &[BlockRecord] {
        &self.records
    }

    fn context_after(&self, parent: &BlockRecord) -> Result<ChildContext, LedgerError> {
        let height = parent.block.height + 1;
        let round = self.schedule.round_of(height);
        if round == parent.round && !parent.block.id.is_genesis() {
            return Ok(ChildContext {
                height,
                round,
                set: parent.set.clone(),
                h0: parent.h0.clone(),
            });
        }
        let set = match self.schedule.cutoff_height(round) {
            None => self.schedule.initial.set().clone(),
            Some(c) if c >= parent.block.height => parent.state.set().clone(),
            Some(c) => {
                let anc = self
                    .tree
                    .ancestor_at_height(parent.block.id, c)?
                    .ok_or(BlockTreeError::UnknownBlock(parent.block.id))?;
                self.record(anc).state.set().clone()
            }
        };
        if round == parent.round {
            return Ok(ChildContext {
                height,
                round,
                h0: parent.h0.clone(),
                set,
            });
        }
        let first = self.schedule.first_height(round);
        let continuing = parent.round + 1 == round;
        let h0 = set
            .ids()
            .map(|p| {
                let start = match parent.h0.get(&p) {
                    Some(&h) if continuing && parent.set.contains(p) => h,
                    _ => first,
                };
                (p, start)
            })
            .collect();
        Ok(ChildContext {
            height,
            round,
            set,
            h0: Arc::new(h0),
        })
    }

    /// Round-robin order of `set` in `round`.
    pub fn permutation(&self, round: u64, set: &ProposerSet) -> Arc<Vec<ProposerId>> {
        let key = (round, set.epoch());
        if let Some(p) = self.perms.borrow().get(&key) {
            return p.clone();
        }
        let p = Arc::new(self.schedule.permutation(round, set));
        self.perms.borrow_mut().insert(key, p.clone());
        p
    }

    /// Owner of `slot` for a child of `parent`.
    pub fn slot_owner(&self, parent: BlockId, slot: u64) -> ProposerId {
        let ctx = &self.record(parent).child;
        let perm = self.permutation(ctx.round, &ctx.set);
        perm[(slot % perm.len() as u64) as usize]
    }

    fn validity(
        &self,
        block: &Block,
        parent: &BlockRecord,
        ctx: &ChildContext,
    ) -> Result<(), Invalid> {
        if !parent.is_valid() {
            return Err(Invalid::InvalidParent);
        }
        let Some(author) = block.proposer else {
            return Err(Invalid::InactiveProposer);
        };
        if !ctx.set.contains(author) {
            return Err(Invalid::InactiveProposer);
        }
        let perm = self.permutation(ctx.round, &ctx.set);
        let expected = perm[(block.round_slot % perm.len() as u64) as usize];
        if expected != author {
            return Err(Invalid::NotSlotOwner { expected });
        }
        if !parent.block.id.is_genesis() && block.round_slot <= parent.block.round_slot {
            return Err(Invalid::SlotNotAfterParent);
        }
        if self.mode == Mode::Lisk {
            let Some(h) = block.header else {
                return Err(Invalid::MissingHeader);
            };
            let expected = parent.tally.max_prevoted_height();
            if h.h_prevoted != expected {
                return Err(Invalid::WrongPrevotedHeight {
                    declared: h.h_prevoted,
                    expected,
                });
            }
        }
        Ok(())
    }

    /// Adds the next block; ids must be consecutive. Invalid blocks are
    /// recorded too, without votes or set changes taking effect.
    pub fn add_block(&mut self, block: Block) -> Result<BlockId, LedgerError> {
        let expected = self.next_id();
        if block.id != expected {
            return Err(LedgerError::OutOfOrder {
                got: block.id,
                expected,
            });
        }
        let block = Arc::new(block);
        self.tree.insert(block.clone())?;
        let parent_id = block.parent.expect("non-genesis block has a parent");
        let parent = self.record(parent_id);
        let ctx = parent.child.clone();
        let mut validity = self.validity(&block, parent, &ctx);

        let mut state = parent.state.clone();
        if validity.is_ok() && !block.changes.is_empty() {
            match parent.state.apply(&block.changes, block.id.0) {
                Ok(s) => state = Arc::new(s),
                Err(_) => validity = Err(Invalid::BadChange),
            }
        }

        let mut votes = Vec::new();
        if validity.is_ok() {
            match self.implied_votes(&block, parent, &ctx) {
                Some(v) => votes = v,
                None => validity = Err(Invalid::BadVotes),
            }
        }
        let tally = match update_tally(&self.tree, &parent.tally, &block, ctx.set.clone(), &votes) {
            Ok(t) => t,
            Err(_) => {
                validity = Err(Invalid::BadVotes);
                votes.clear();
                update_tally(&self.tree, &parent.tally, &block, ctx.set.clone(), &[])?
            }
        };
        let mut rec = BlockRecord {
            block: block.clone(),
            round: ctx.round,
            set: ctx.set.clone(),
            h0: ctx.h0.clone(),
            state,
            votes,
            tally,
            validity,
            child: ctx,
        };
        rec.child = self.context_after(&rec)?;
        self.max_height = self.max_height.max(block.height);
        self.records.push(rec);
        Ok(block.id)
    }

    fn implied_votes(
        &self,
        block: &Block,
        parent: &BlockRecord,
        ctx: &ChildContext,
    ) -> Option<Vec<Vote>> {
        match self.mode {
            Mode::Lisk => {
                let author = block.proposer?;
                let h0 = ctx.h0.get(&author).copied();
                expand_header(block, &parent.tally, h0, &self.lisk)
                    .ok()
                    .map(|v| v.into_votes())
            }
            Mode::General => {
                let mut out = block.votes.clone();
                for a in &block.approves {
                    let t = self.tally(a.context)?;
                    out.extend(expand_approve(a, &self.tree, t).ok()?.into_votes());
                }
                if out
                    .iter()
                    .any(|v| !self.tree.contains(v.target()) || !self.tree.contains(v.context()))
                {
                    return None;
                }
                Some(out)
            }
        }
    }

    /// Activity start of `p` for a child of `parent`.
    pub fn child_h0(&self, parent: BlockId, p: ProposerId) -> Option<u64> {
        self.record(parent).child.h0.get(&p).copied()
    }
}
