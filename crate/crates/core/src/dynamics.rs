//! Rounds, weighted proposer sets, scripted set changes and slot assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocktree::Block;
use crate::consensus::{ProposerId, VoterSet, Weight, MAX_PROPOSERS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DynamicsError {
    #[error("proposer set is empty")]
    EmptySet,
    #[error("proposer {0} has zero stake")]
    ZeroStake(ProposerId),
    #[error("proposer {0} listed twice")]
    DuplicateMember(ProposerId),
    #[error("proposer id {0} exceeds the supported maximum")]
    IdOutOfRange(ProposerId),
    #[error("change {change}: proposer {proposer} is already a member")]
    AlreadyMember { change: u32, proposer: ProposerId },
    #[error("change {change}: proposer {proposer} is not a member")]
    NotMember { change: u32, proposer: ProposerId },
    #[error("change {change} would leave the set empty")]
    WouldEmpty { change: u32 },
    #[error("round length must be positive")]
    ZeroRoundLength,
}

/// Active proposers with integer stakes; weight of `p` is `stake(p) / total`,
/// so the weights of every set sum to exactly one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProposerSet {
    members: Vec<(ProposerId, u64)>,
    stakes: Vec<u64>,
    mask: VoterSet,
    total: u64,
    uniform_stake: Option<u64>,
    epoch: u64,
}

impl ProposerSet {
    pub fn new(
        members: impl IntoIterator<Item = (ProposerId, u64)>,
        epoch: u64,
    ) -> Result<Self, DynamicsError> {
        let mut list: Vec<(ProposerId, u64)> = members.into_iter().collect();
        list.sort();
        if list.is_empty() {
            return Err(DynamicsError::EmptySet);
        }
        let mut mask = VoterSet::new();
        let mut stakes = vec![0u64; list.last().unwrap().0.index() + 1];
        for &(p, s) in &list {
            if p.index() >= MAX_PROPOSERS {
                return Err(DynamicsError::IdOutOfRange(p));
            }
            if s == 0 {
                return Err(DynamicsError::ZeroStake(p));
            }
            if !mask.insert(p) {
                return Err(DynamicsError::DuplicateMember(p));
            }
            stakes[p.index()] = s;
        }
        let total = list.iter().map(|(_, s)| s).sum();
        let first = list[0].1;
        let uniform_stake = list.iter().all(|(_, s)| *s == first).then_some(first);
        Ok(ProposerSet {
            members: list,
            stakes,
            mask,
            total,
            uniform_stake,
            epoch,
        })
    }

    /// `n` proposers with ids `0..n` and equal weight `1/n`.
    pub fn uniform(n: u32) -> Self {
        Self::new((0..n).map(|i| (ProposerId(i), 1)), 0).expect("non-empty uniform set")
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn contains(&self, p: ProposerId) -> bool {
        self.mask.contains(p)
    }

    pub fn mask(&self) -> &VoterSet {
        &self.mask
    }

    pub fn ids(&self) -> impl Iterator<Item = ProposerId> + '_ {
        self.members.iter().map(|(p, _)| *p)
    }

    pub fn members(&self) -> &[(ProposerId, u64)] {
        &self.members
    }

    pub fn stake(&self, p: ProposerId) -> u64 {
        self.stakes.get(p.index()).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn weight(&self, p: ProposerId) -> Weight {
        Weight::new(self.stake(p) as u128, self.total as u128)
    }

    /// Summed stake of the members in `voters`; non-members count zero.
    pub fn stake_of(&self, voters: &VoterSet) -> u64 {
        match self.uniform_stake {
            Some(s) => voters.intersection(&self.mask).len() as u64 * s,
            None => voters.iter().map(|p| self.stake(p)).sum(),
        }
    }

    pub fn weight_of(&self, voters: &VoterSet) -> Weight {
        Weight::new(self.stake_of(voters) as u128, self.total as u128)
    }

    /// Strictly more than two thirds of the total stake.
    pub fn is_quorum(&self, stake: u64) -> bool {
        3 * stake as u128 > 2 * self.total as u128
    }

    /// For equal stakes: the least member count strictly above two thirds.
    pub fn quorum_count(&self) -> Option<usize> {
        self.uniform_stake
            .map(|_| least_count_above_two_thirds(self.len()))
    }
}

/// Least integer strictly greater than `2n/3` (68 for 101).
pub fn least_count_above_two_thirds(n: usize) -> usize {
    2 * n / 3 + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeKind {
    Join {
        proposer: ProposerId,
        stake: u64,
    },
    Leave {
        proposer: ProposerId,
    },
    /// Direct stake change of an existing member.
    Reweight {
        proposer: ProposerId,
        stake: u64,
    },
}

/// A scripted proposer-set change, recorded by the first block at or above
/// `at_height` whose proposer is eligible to include it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetChange {
    pub id: u32,
    pub at_height: u64,
    #[serde(flatten)]
    pub kind: ChangeKind,
    /// When set, only proposers in this partition group record the change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
}

/// Membership after applying every change recorded on a branch so far.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetState {
    stakes: BTreeMap<ProposerId, u64>,
    applied: BTreeSet<u32>,
    set: Arc<ProposerSet>,
}

impl SetState {
    pub fn initial(set: ProposerSet) -> Self {
        SetState {
            stakes: set.members().iter().copied().collect(),
            applied: BTreeSet::new(),
            set: Arc::new(set),
        }
    }

    pub fn set(&self) -> &Arc<ProposerSet> {
        &self.set
    }

    pub fn has_applied(&self, change: u32) -> bool {
        self.applied.contains(&change)
    }

    pub fn applied(&self) -> &BTreeSet<u32> {
        &self.applied
    }

    pub fn can_apply(&self, c: &SetChange) -> bool {
        self.clone().apply_one(c).is_ok()
    }

    fn apply_one(&mut self, c: &SetChange) -> Result<(), DynamicsError> {
        match c.kind {
            ChangeKind::Join { proposer, stake } => {
                if self.stakes.contains_key(&proposer) {
                    return Err(DynamicsError::AlreadyMember {
                        change: c.id,
                        proposer,
                    });
                }
                if stake == 0 {
                    return Err(DynamicsError::ZeroStake(proposer));
                }
                self.stakes.insert(proposer, stake);
            }
            ChangeKind::Leave { proposer } => {
                if self.stakes.remove(&proposer).is_none() {
                    return Err(DynamicsError::NotMember {
                        change: c.id,
                        proposer,
                    });
                }
                if self.stakes.is_empty() {
                    return Err(DynamicsError::WouldEmpty { change: c.id });
                }
            }
            ChangeKind::Reweight { proposer, stake } => {
                if stake == 0 {
                    return Err(DynamicsError::ZeroStake(proposer));
                }
                match self.stakes.get_mut(&proposer) {
                    Some(s) => *s = stake,
                    None => {
                        return Err(DynamicsError::NotMember {
                            change: c.id,
                            proposer,
                        })
                    }
                }
            }
        }
        self.applied.insert(c.id);
        Ok(())
    }

    /// Applies `changes` in order. `epoch` labels the resulting set and must
    /// be unique per distinct membership within a run.
    pub fn apply(&self, changes: &[SetChange], epoch: u64) -> Result<SetState, DynamicsError> {
        if changes.is_empty() {
            return Ok(self.clone());
        }
        let mut next = self.clone();
        for c in changes {
            next.apply_one(c)?;
        }
        next.set = Arc::new(ProposerSet::new(
            next.stakes.iter().map(|(p, s)| (*p, *s)),
            epoch,
        )?);
        Ok(next)
    }
}

/// Round structure, activation delay and round-robin slot assignment.
#[derive(Clone, Debug)]
pub struct RoundSchedule {
    pub round_length: u64,
    pub delay: u64,
    pub seed: u64,
    pub initial: Arc<SetState>,
    pub overrides: BTreeMap<u64, Vec<ProposerId>>,
}

impl RoundSchedule {
    pub fn new(
        round_length: u64,
        delay: u64,
        seed: u64,
        initial: ProposerSet,
    ) -> Result<Self, DynamicsError> {
        if round_length == 0 {
            return Err(DynamicsError::ZeroRoundLength);
        }
        Ok(RoundSchedule {
            round_length,
            delay,
            seed,
            initial: Arc::new(SetState::initial(initial)),
            overrides: BTreeMap::new(),
        })
    }

    pub fn round_of(&self, height: u64) -> u64 {
        height / self.round_length
    }

    pub fn first_height(&self, round: u64) -> u64 {
        round * self.round_length
    }

    /// Height of the block whose state fixes the set of `round`; `None`
    /// means the initial set applies.
    pub fn cutoff_height(&self, round: u64) -> Option<u64> {
        (round > self.delay).then(|| (round - self.delay) * self.round_length - 1)
    }

    /// Reference computation of the active set of `round` on `branch`
    /// (genesis first), replaying every recorded change up to the cutoff.
    pub fn active_set(
        &self,
        branch: &[Arc<Block>],
        round: u64,
    ) -> Result<Arc<ProposerSet>, DynamicsError> {
        let Some(cutoff) = self.cutoff_height(round) else {
            return Ok(self.initial.set().clone());
        };
        let mut state = (*self.initial).clone();
        for b in branch.iter().take_while(|b| b.height <= cutoff) {
            if !b.changes.is_empty() {
                state = state.apply(&b.changes, b.id.0)?;
            }
        }
        Ok(state.set().clone())
    }

    /// Round-robin order of `set` for `round`: a scenario override when one
    /// exists, otherwise a shuffle seeded by the run seed, round and epoch.
    pub fn permutation(&self, round: u64, set: &ProposerSet) -> Vec<ProposerId> {
        if let Some(order) = self.overrides.get(&round) {
            let mut out: Vec<ProposerId> = Vec::with_capacity(set.len());
            for p in order {
                if set.contains(*p) && !out.contains(p) {
                    out.push(*p);
                }
            }
            for p in set.ids() {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
            return out;
        }
        let mut ids: Vec<ProposerId> = set.ids().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, round, set.epoch()));
        ids.shuffle(&mut rng);
        ids
    }

    /// Owner of proposal slot `slot` in `round`.
    pub fn slot_proposer(&self, round: u64, set: &ProposerSet, slot: u64) -> ProposerId {
        let perm = self.permutation(round, set);
        perm[(slot % perm.len() as u64) as usize]
    }
}

fn mix(seed: u64, round: u64, epoch: u64) -> u64 {
    let mut z = seed ^ round.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ epoch.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Weight of the honest proposers present in every set. Each member counts
/// with its smallest normalized weight across the sets, which is the stable
/// part a weight change leaves in place.
pub fn honest_overlap(sets: &[&ProposerSet], honest: &VoterSet) -> Weight {
    let Some(first) = sets.first() else {
        return Weight::ZERO;
    };
    let common = sets
        .iter()
        .fold(first.mask().intersection(honest), |acc, s| {
            acc.intersection(s.mask())
        });
    let mut sum = Ratio::<u128>::from_integer(0);
    for p in common.iter() {
        let min = sets
            .iter()
            .map(|s| Ratio::new(s.stake(p) as u128, s.total() as u128))
            .min()
            .unwrap();
        sum += min;
    }
    Weight::new(*sum.numer(), *sum.denom())
}

/// One block of a chain, as needed by the change-rate validator.
#[derive(Clone, Debug)]
pub struct ChainPoint {
    pub height: u64,
    pub set: Arc<ProposerSet>,
    /// Largest height with a precommit quorum included up to this block.
    pub finalized_height: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeReport {
    /// Most honest members replaced between a block and the first later
    /// block finalizing one of its descendants.
    pub max_honest_change: usize,
    /// Fewest honest members in any active set on the chain.
    pub min_honest_members: usize,
}

impl ChangeReport {
    /// Precondition of the constrained-change safety bound with `m` changes:
    /// at most `m` honest changes between finalizations and at least
    /// `quorum + 2m` honest members in every set.
    pub fn satisfies(&self, m: usize, quorum: usize) -> bool {
        self.max_honest_change <= m && self.min_honest_members >= quorum + 2 * m
    }
}

/// Measures how many honest members change along `chain` (genesis first)
/// before a finalization covers them.
pub fn constrained_change_report(chain: &[ChainPoint], honest: &VoterSet) -> ChangeReport {
    if chain.is_empty() {
        return ChangeReport::default();
    }
    // runs of consecutive blocks sharing one set
    let mut runs: Vec<(usize, VoterSet)> = Vec::new();
    for (i, pt) in chain.iter().enumerate() {
        let hs = pt.set.mask().intersection(honest);
        if runs.last().map(|(_, s)| *s != hs).unwrap_or(true) {
            runs.push((i, hs));
        }
    }
    let min_honest_members = runs.iter().map(|(_, s)| s.len()).min().unwrap_or(0);
    let run_of = |i: usize| runs.partition_point(|(start, _)| *start <= i) - 1;

    let mut max_change = 0;
    let mut j = 0usize;
    for i in 0..chain.len() {
        if j <= i {
            j = i + 1;
        }
        while j < chain.len() && chain[j].finalized_height <= chain[i].height {
            j += 1;
        }
        let end = j.min(chain.len() - 1);
        let (ri, rj) = (run_of(i), run_of(end));
        let base = runs[ri].1;
        let mut left = VoterSet::new();
        let mut joined = VoterSet::new();
        for (_, s) in &runs[ri..=rj] {
            left = left.union(&base.difference(s));
            joined = joined.union(&s.difference(&base));
        }
        max_change = max_change.max(left.len().max(joined.len()));
    }
    ChangeReport {
        max_honest_change: max_change,
        min_honest_members,
    }
}
