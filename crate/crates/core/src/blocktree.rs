//! Block tree with ancestry, branch and conflict queries.
//!
//! Every tree starts with an implicit genesis block (id 0, height 0). Blocks
//! are stored behind `Arc` so that the per-proposer views kept by the
//! simulator share one allocation per block.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approve::Approve;
use crate::consensus::{ProposerId, Vote};
use crate::dynamics::SetChange;
use crate::lisk::LiskHeader;

/// Simulator-assigned block identifier. Stands in for a block hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    pub fn is_genesis(self) -> bool {
        self == Self::GENESIS
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<BlockId>,
    pub height: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposer: Option<ProposerId>,
    pub round_slot: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<LiskHeader>,
    /// Explicit prevote/precommit messages included in this block.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub votes: Vec<Vote>,
    /// Approve messages included in this block.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub approves: Vec<Approve>,
    /// Proposer-set changes recorded by this block.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<SetChange>,
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            id: BlockId::GENESIS,
            parent: None,
            height: 0,
            proposer: None,
            round_slot: 0,
            header: None,
            votes: Vec::new(),
            approves: Vec::new(),
            changes: Vec::new(),
        }
    }

    /// A bare child block with no payload.
    pub fn child(id: BlockId, parent: &Block, proposer: ProposerId, round_slot: u64) -> Self {
        Block {
            id,
            parent: Some(parent.id),
            height: parent.height + 1,
            proposer: Some(proposer),
            round_slot,
            header: None,
            votes: Vec::new(),
            approves: Vec::new(),
            changes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockTreeError {
    #[error("parent {parent} of block {block} is not in the tree")]
    UnknownParent { block: BlockId, parent: BlockId },
    #[error("block {0} is already in the tree")]
    DuplicateId(BlockId),
    #[error("block {block} declares height {declared}, expected {expected}")]
    HeightMismatch {
        block: BlockId,
        declared: u64,
        expected: u64,
    },
    #[error("block {0} is not in the tree")]
    UnknownBlock(BlockId),
    #[error("block {0} has no parent and is not genesis")]
    MissingParent(BlockId),
}

#[derive(Clone, Debug)]
struct Node {
    block: Arc<Block>,
    children: Vec<BlockId>,
    arrival: u64,
    // jumps[i] is the ancestor 2^i levels up
    jumps: Vec<BlockId>,
}

#[derive(Clone, Debug)]
pub struct BlockTree {
    nodes: BTreeMap<BlockId, Node>,
    next_arrival: u64,
}

impl Default for BlockTree {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockTree {
    pub fn new() -> Self {
        Self::with_genesis(Arc::new(Block::genesis()))
    }

    pub fn with_genesis(genesis: Arc<Block>) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            genesis.id,
            Node {
                block: genesis,
                children: Vec::new(),
                arrival: 0,
                jumps: Vec::new(),
            },
        );
        BlockTree {
            nodes,
            next_arrival: 1,
        }
    }

    pub fn insert_block(&mut self, block: Block) -> Result<(), BlockTreeError> {
        self.insert(Arc::new(block))
    }

    pub fn insert(&mut self, block: Arc<Block>) -> Result<(), BlockTreeError> {
        if self.nodes.contains_key(&block.id) {
            return Err(BlockTreeError::DuplicateId(block.id));
        }
        let parent_id = block
            .parent
            .ok_or(BlockTreeError::MissingParent(block.id))?;
        let parent = self
            .nodes
            .get(&parent_id)
            .ok_or(BlockTreeError::UnknownParent {
                block: block.id,
                parent: parent_id,
            })?;
        let expected = parent.block.height + 1;
        if block.height != expected {
            return Err(BlockTreeError::HeightMismatch {
                block: block.id,
                declared: block.height,
                expected,
            });
        }

        let mut jumps = vec![parent_id];
        loop {
            let last = *jumps.last().unwrap();
            let level = jumps.len() - 1;
            match self.nodes[&last].jumps.get(level) {
                Some(&next) => jumps.push(next),
                None => break,
            }
        }

        let id = block.id;
        self.nodes.get_mut(&parent_id).unwrap().children.push(id);
        self.nodes.insert(
            id,
            Node {
                block,
                children: Vec::new(),
                arrival: self.next_arrival,
                jumps,
            },
        );
        self.next_arrival += 1;
        Ok(())
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: BlockId) -> Result<&Arc<Block>, BlockTreeError> {
        self.node(id).map(|n| &n.block)
    }

    fn node(&self, id: BlockId) -> Result<&Node, BlockTreeError> {
        self.nodes.get(&id).ok_or(BlockTreeError::UnknownBlock(id))
    }

    pub fn height(&self, id: BlockId) -> Result<u64, BlockTreeError> {
        self.node(id).map(|n| n.block.height)
    }

    pub fn parent(&self, id: BlockId) -> Result<Option<BlockId>, BlockTreeError> {
        self.node(id).map(|n| n.block.parent)
    }

    pub fn children(&self, id: BlockId) -> Result<&[BlockId], BlockTreeError> {
        self.node(id).map(|n| n.children.as_slice())
    }

    /// Insertion order index; genesis is 0.
    pub fn arrival(&self, id: BlockId) -> Result<u64, BlockTreeError> {
        self.node(id).map(|n| n.arrival)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.nodes.values().map(|n| &n.block)
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.nodes.keys().copied()
    }

    /// Blocks without children, in id order.
    pub fn leaves(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.nodes
            .iter()
            .filter(|(_, n)| n.children.is_empty())
            .map(|(id, _)| *id)
    }

    /// The ancestor of `id` at `height` (or `id` itself at its own height).
    pub fn ancestor_at_height(
        &self,
        id: BlockId,
        height: u64,
    ) -> Result<Option<BlockId>, BlockTreeError> {
        let node = self.node(id)?;
        if height > node.block.height {
            return Ok(None);
        }
        let mut cur = id;
        let mut up = node.block.height - height;
        while up > 0 {
            let level = (63 - up.leading_zeros()) as usize;
            let jumps = &self.nodes[&cur].jumps;
            let level = level.min(jumps.len() - 1);
            cur = jumps[level];
            up -= 1 << level;
        }
        Ok(Some(cur))
    }

    /// True iff `a` is distinct from `b` and lies on the path from `b` to genesis.
    pub fn is_ancestor(&self, a: BlockId, b: BlockId) -> Result<bool, BlockTreeError> {
        let ha = self.height(a)?;
        let hb = self.height(b)?;
        if ha >= hb {
            return Ok(false);
        }
        Ok(self.ancestor_at_height(b, ha)? == Some(a))
    }

    /// `a == b` or `a` is an ancestor of `b`.
    pub fn is_ancestor_or_self(&self, a: BlockId, b: BlockId) -> Result<bool, BlockTreeError> {
        if a == b {
            self.node(a)?;
            return Ok(true);
        }
        self.is_ancestor(a, b)
    }

    pub fn are_conflicting(&self, a: BlockId, b: BlockId) -> Result<bool, BlockTreeError> {
        if a == b {
            self.node(a)?;
            return Ok(false);
        }
        Ok(!self.is_ancestor(a, b)? && !self.is_ancestor(b, a)?)
    }

    /// Blocks from genesis to `tip`, in height order.
    pub fn branch_to(&self, tip: BlockId) -> Result<Vec<Arc<Block>>, BlockTreeError> {
        let mut out = Vec::with_capacity(self.height(tip)? as usize + 1);
        let mut cur = Some(tip);
        while let Some(id) = cur {
            let node = self.node(id)?;
            out.push(node.block.clone());
            cur = node.block.parent;
        }
        out.reverse();
        Ok(out)
    }

    /// Block ids from genesis to `tip`, in height order.
    pub fn branch_ids(&self, tip: BlockId) -> Result<Vec<BlockId>, BlockTreeError> {
        Ok(self.branch_to(tip)?.iter().map(|b| b.id).collect())
    }
}
