//! Prevote/precommit BFT consensus, the header-encoded Lisk-BFT variant, and a
//! deterministic partially synchronous network simulator with checker oracles.

pub mod approve;
pub mod blocktree;
pub mod consensus;
pub mod dynamics;
pub mod harness;
pub mod ledger;
pub mod lisk;
pub mod sim;

pub use blocktree::{Block, BlockId, BlockTree, BlockTreeError};
pub use consensus::{DecisionThreshold, ProposerId, Vote, VoterSet, Weight};
