//! Prevote/precommit accounting, protocol rules, decisions and fork choice.

mod decide;
mod fork_choice;
mod rules;
mod tally;
mod weight;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::blocktree::BlockId;

pub use decide::{decide, Decider};
pub use fork_choice::{branch_key, fork_choice_longest_chain, BranchKey, ForkChoice};
pub use rules::{
    audit, check_rule_i, check_rule_ii, check_rule_iii, check_rule_iii_precommit, AuthorHistory,
    Rule, RuleViolation,
};
pub use tally::{update_tally, ChainTally, TallyEntry, TallySource};
pub use weight::{DecisionThreshold, ParseRatioError, Weight};

/// Largest number of distinct proposer ids a simulation may use.
pub const MAX_PROPOSERS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProposerId(pub u32);

impl ProposerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ProposerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Fixed-capacity bitset of proposer ids.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct VoterSet([u64; MAX_PROPOSERS / 64]);

impl VoterSet {
    pub const fn new() -> Self {
        VoterSet([0; MAX_PROPOSERS / 64])
    }

    pub fn from_ids(ids: impl IntoIterator<Item = ProposerId>) -> Self {
        let mut s = Self::new();
        for id in ids {
            s.insert(id);
        }
        s
    }

    /// Returns true if the id was not already present.
    pub fn insert(&mut self, id: ProposerId) -> bool {
        let i = id.index();
        assert!(i < MAX_PROPOSERS, "proposer id {id} out of range");
        let (w, b) = (i / 64, 1u64 << (i % 64));
        let fresh = self.0[w] & b == 0;
        self.0[w] |= b;
        fresh
    }

    pub fn remove(&mut self, id: ProposerId) {
        let i = id.index();
        if i < MAX_PROPOSERS {
            self.0[i / 64] &= !(1u64 << (i % 64));
        }
    }

    pub fn contains(&self, id: ProposerId) -> bool {
        let i = id.index();
        i < MAX_PROPOSERS && self.0[i / 64] & (1u64 << (i % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    pub fn intersection(&self, other: &VoterSet) -> VoterSet {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0.iter()) {
            *a &= *b;
        }
        out
    }

    pub fn union(&self, other: &VoterSet) -> VoterSet {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0.iter()) {
            *a |= *b;
        }
        out
    }

    pub fn difference(&self, other: &VoterSet) -> VoterSet {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0.iter()) {
            *a &= !*b;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = ProposerId> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros();
                bits &= bits - 1;
                Some(ProposerId((w * 64) as u32 + tz))
            })
        })
    }
}

impl fmt::Debug for VoterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|p| p.0)).finish()
    }
}

impl FromIterator<ProposerId> for VoterSet {
    fn from_iter<I: IntoIterator<Item = ProposerId>>(iter: I) -> Self {
        Self::from_ids(iter)
    }
}

impl Serialize for VoterSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for VoterSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let ids = Vec::<ProposerId>::deserialize(d)?;
        if let Some(bad) = ids.iter().find(|p| p.index() >= MAX_PROPOSERS) {
            return Err(serde::de::Error::custom(format!(
                "proposer id {bad} out of range"
            )));
        }
        Ok(Self::from_ids(ids))
    }
}

/// `Prevote(B, T, P)`: target `B`, context `T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Prevote {
    pub target: BlockId,
    pub context: BlockId,
    pub author: ProposerId,
}

/// `Precommit(B, T, P)`: target `B`, context `T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Precommit {
    pub target: BlockId,
    pub context: BlockId,
    pub author: ProposerId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Vote {
    Prevote(Prevote),
    Precommit(Precommit),
}

impl Vote {
    pub fn prevote(target: BlockId, context: BlockId, author: ProposerId) -> Self {
        Vote::Prevote(Prevote {
            target,
            context,
            author,
        })
    }

    pub fn precommit(target: BlockId, context: BlockId, author: ProposerId) -> Self {
        Vote::Precommit(Precommit {
            target,
            context,
            author,
        })
    }

    pub fn target(&self) -> BlockId {
        match self {
            Vote::Prevote(v) => v.target,
            Vote::Precommit(v) => v.target,
        }
    }

    pub fn context(&self) -> BlockId {
        match self {
            Vote::Prevote(v) => v.context,
            Vote::Precommit(v) => v.context,
        }
    }

    pub fn author(&self) -> ProposerId {
        match self {
            Vote::Prevote(v) => v.author,
            Vote::Precommit(v) => v.author,
        }
    }

    pub fn is_prevote(&self) -> bool {
        matches!(self, Vote::Prevote(_))
    }
}

/// Votes implied by one approve message or one block header.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpliedVotes {
    pub prevotes: Vec<Prevote>,
    pub precommits: Vec<Precommit>,
}

impl ImpliedVotes {
    pub fn is_empty(&self) -> bool {
        self.prevotes.is_empty() && self.precommits.is_empty()
    }

    pub fn into_votes(self) -> Vec<Vote> {
        let mut out: Vec<Vote> = self.prevotes.into_iter().map(Vote::Prevote).collect();
        out.extend(self.precommits.into_iter().map(Vote::Precommit));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error(transparent)]
    Tree(#[from] crate::blocktree::BlockTreeError),
    #[error("no tally recorded for block {0}")]
    MissingTally(BlockId),
    #[error("block {block} does not extend tally tip {tip}")]
    NotChild { block: BlockId, tip: BlockId },
}
