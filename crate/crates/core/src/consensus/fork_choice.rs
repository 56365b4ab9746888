use std::cmp::Ordering;

use crate::blocktree::{BlockId, BlockTree};

use super::{ConsensusError, TallySource};

/// Fork-choice rank of a branch tip; the greater key wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchKey {
    /// Highest prevote-quorum height on the branch.
    pub prevoted_height: u64,
    pub height: u64,
    pub arrival: u64,
    pub id: BlockId,
}

impl Ord for BranchKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.prevoted_height, self.height)
            .cmp(&(other.prevoted_height, other.height))
            .then_with(|| other.arrival.cmp(&self.arrival))
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for BranchKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Rank of the branch ending at `tip`. With `exclude_tip_votes`, the votes
/// carried by the tip itself do not count towards the prevoted height.
pub fn branch_key(
    tree: &BlockTree,
    tallies: &impl TallySource,
    tip: BlockId,
    exclude_tip_votes: bool,
) -> Result<BranchKey, ConsensusError> {
    let source = match (exclude_tip_votes, tree.parent(tip)?) {
        (true, Some(p)) => p,
        _ => tip,
    };
    Ok(BranchKey {
        prevoted_height: tallies.require(source)?.max_prevoted_height(),
        height: tree.height(tip)?,
        arrival: tree.arrival(tip)?,
        id: tip,
    })
}

/// The longest branch among those containing the highest prevote-quorum
/// block; ties go to the tip that arrived first.
pub fn fork_choice_longest_chain(
    tree: &BlockTree,
    tallies: &impl TallySource,
    exclude_tip_votes: bool,
) -> Result<BlockId, ConsensusError> {
    let mut best: Option<BranchKey> = None;
    for leaf in tree.leaves() {
        let k = branch_key(tree, tallies, leaf, exclude_tip_votes)?;
        if best.is_none_or(|b| k > b) {
            best = Some(k);
        }
    }
    Ok(best.map(|k| k.id).unwrap_or(BlockId::GENESIS))
}

/// Incremental fork choice. Keys grow strictly along every branch, so the
/// best leaf is the best block seen so far.
#[derive(Clone, Copy, Debug)]
pub struct ForkChoice {
    pub exclude_tip_votes: bool,
    best: Option<BranchKey>,
}

impl ForkChoice {
    pub fn new(exclude_tip_votes: bool) -> Self {
        ForkChoice {
            exclude_tip_votes,
            best: None,
        }
    }

    pub fn best(&self) -> BlockId {
        self.best.map(|k| k.id).unwrap_or(BlockId::GENESIS)
    }

    pub fn best_key(&self) -> Option<BranchKey> {
        self.best
    }

    /// Considers a newly inserted block; returns true if it becomes the tip.
    pub fn observe(
        &mut self,
        tree: &BlockTree,
        tallies: &impl TallySource,
        block: BlockId,
    ) -> Result<bool, ConsensusError> {
        let k = branch_key(tree, tallies, block, self.exclude_tip_votes)?;
        if self.best.is_none_or(|b| k > b) {
            self.best = Some(k);
            return Ok(true);
        }
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocktree::Block;
    use crate::consensus::{update_tally, ChainTally, ProposerId, Vote};
    use crate::dynamics::ProposerSet;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    struct W {
        tree: BlockTree,
        tallies: BTreeMap<BlockId, ChainTally>,
        set: Arc<ProposerSet>,
    }

    impl W {
        fn new() -> Self {
            let set = Arc::new(ProposerSet::uniform(4));
            let mut tallies = BTreeMap::new();
            tallies.insert(
                BlockId::GENESIS,
                ChainTally::genesis(BlockId::GENESIS, set.clone(), None),
            );
            W {
                tree: BlockTree::new(),
                tallies,
                set,
            }
        }

        fn add(&mut self, id: u64, parent: u64, votes: Vec<Vote>) {
            let pb = self.tree.get(BlockId(parent)).unwrap().clone();
            let mut b = Block::child(BlockId(id), &pb, ProposerId(0), id);
            b.votes = votes.clone();
            self.tree.insert_block(b.clone()).unwrap();
            let t = update_tally(
                &self.tree,
                &self.tallies[&BlockId(parent)],
                &b,
                self.set.clone(),
                &votes,
            )
            .unwrap();
            self.tallies.insert(BlockId(id), t);
        }
    }

    fn quorum(target: u64) -> Vec<Vote> {
        (0..3)
            .map(|a| Vote::prevote(BlockId(target), BlockId(target), ProposerId(a)))
            .collect()
    }

    #[test]
    fn single_chain_picks_tip() {
        let mut w = W::new();
        for i in 1..=4 {
            w.add(i, i - 1, vec![]);
        }
        assert_eq!(
            fork_choice_longest_chain(&w.tree, &w.tallies, false).unwrap(),
            BlockId(4)
        );
    }

    #[test]
    fn prevoted_block_beats_length() {
        let mut w = W::new();
        // short branch: 1 - 2 with a quorum for 1 included in 2
        w.add(1, 0, vec![]);
        w.add(2, 1, quorum(1));
        // long branch: 11 - 12 - 13 - 14 without quorums
        w.add(11, 0, vec![]);
        for i in 12..=14 {
            w.add(i, i - 1, vec![]);
        }
        assert_eq!(
            fork_choice_longest_chain(&w.tree, &w.tallies, false).unwrap(),
            BlockId(2)
        );
        // excluding the tip's own votes drops the quorum from branch 2
        assert_eq!(
            fork_choice_longest_chain(&w.tree, &w.tallies, true).unwrap(),
            BlockId(14)
        );
    }

    #[test]
    fn equal_branches_prefer_earlier_arrival() {
        let mut w = W::new();
        w.add(7, 0, vec![]);
        w.add(3, 0, vec![]);
        assert_eq!(
            fork_choice_longest_chain(&w.tree, &w.tallies, false).unwrap(),
            BlockId(7)
        );
    }

    #[test]
    fn incremental_matches_batch() {
        let mut w = W::new();
        let mut fc = ForkChoice::new(false);
        let plan: [(u64, u64, Vec<Vote>); 6] = [
            (1, 0, vec![]),
            (2, 1, vec![]),
            (3, 0, vec![]),
            (4, 3, quorum(3)),
            (5, 2, vec![]),
            (6, 5, vec![]),
        ];
        for (id, parent, votes) in plan {
            w.add(id, parent, votes);
            fc.observe(&w.tree, &w.tallies, BlockId(id)).unwrap();
            assert_eq!(
                fc.best(),
                fork_choice_longest_chain(&w.tree, &w.tallies, false).unwrap()
            );
        }
    }
}
