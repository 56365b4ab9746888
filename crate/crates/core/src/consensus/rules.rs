use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::blocktree::BlockTree;

use super::{ChainTally, ConsensusError, Precommit, Prevote, ProposerId, TallySource, Vote};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// Two distinct prevotes at one height.
    #[serde(rename = "I")]
    I,
    /// Precommit without the author's own prevote in the chain.
    #[serde(rename = "IIa")]
    IIa,
    /// Precommit without a prevote quorum in the chain.
    #[serde(rename = "IIb")]
    IIb,
    /// Prevote leaving a precommitted block without justification.
    #[serde(rename = "III")]
    III,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleViolation {
    pub rule: Rule,
    pub author: ProposerId,
    pub offending: Vote,
    /// Earlier message the offending one conflicts with, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vote>,
}

/// Rule I: no two prevotes by one author for distinct blocks at one height.
pub fn check_rule_i(
    tree: &BlockTree,
    history: &[Prevote],
    new: &Prevote,
) -> Result<Option<RuleViolation>, ConsensusError> {
    let h = tree.height(new.target)?;
    for old in history {
        if old.author == new.author && old.target != new.target && tree.height(old.target)? == h {
            return Ok(Some(RuleViolation {
                rule: Rule::I,
                author: new.author,
                offending: Vote::Prevote(*new),
                witness: Some(Vote::Prevote(*old)),
            }));
        }
    }
    Ok(None)
}

/// Rule II against the tally of `pc.context`. Prevotes in `co_implied` come
/// from the same message as the precommit and count as the author's own.
pub fn check_rule_ii(
    tree: &BlockTree,
    context_tally: &ChainTally,
    pc: &Precommit,
    co_implied: &[Prevote],
) -> Result<Option<RuleViolation>, ConsensusError> {
    let h = tree.height(pc.target)?;
    tree.height(pc.context)?;
    let violation = |rule| {
        Some(RuleViolation {
            rule,
            author: pc.author,
            offending: Vote::Precommit(*pc),
            witness: None,
        })
    };
    let Some(entry) = context_tally.entry_for(pc.target, h) else {
        return Ok(violation(Rule::IIb));
    };
    let own = entry.prevoters.contains(pc.author)
        || co_implied
            .iter()
            .any(|v| v.author == pc.author && v.target == pc.target);
    if !own {
        return Ok(violation(Rule::IIa));
    }
    if !entry.has_prevote_quorum() {
        return Ok(violation(Rule::IIb));
    }
    Ok(None)
}

/// Rule III for a new prevote against the author's precommits.
pub fn check_rule_iii(
    tree: &BlockTree,
    tallies: &impl TallySource,
    precommits: &[Precommit],
    new: &Prevote,
) -> Result<Option<RuleViolation>, ConsensusError> {
    let h_new = tree.height(new.target)?;
    let justified = tallies.require(new.context)?.max_prevoted_height();
    for pc in precommits.iter().filter(|pc| pc.author == new.author) {
        let h = tree.height(pc.target)?;
        if h < h_new && justified < h && !tree.is_ancestor(pc.target, new.target)? {
            return Ok(Some(RuleViolation {
                rule: Rule::III,
                author: new.author,
                offending: Vote::Prevote(*new),
                witness: Some(Vote::Precommit(*pc)),
            }));
        }
    }
    Ok(None)
}

/// Rule III for a new precommit against the author's prevotes.
pub fn check_rule_iii_precommit(
    tree: &BlockTree,
    tallies: &impl TallySource,
    prevotes: &[Prevote],
    new: &Precommit,
) -> Result<Option<RuleViolation>, ConsensusError> {
    let h = tree.height(new.target)?;
    for pv in prevotes.iter().filter(|pv| pv.author == new.author) {
        let h_pv = tree.height(pv.target)?;
        if h < h_pv
            && tallies.require(pv.context)?.max_prevoted_height() < h
            && !tree.is_ancestor(new.target, pv.target)?
        {
            return Ok(Some(RuleViolation {
                rule: Rule::III,
                author: new.author,
                offending: Vote::Precommit(*new),
                witness: Some(Vote::Prevote(*pv)),
            }));
        }
    }
    Ok(None)
}

/// Every message one author sent, grouped by the message (vote bundle,
/// approve or header) that carried it.
#[derive(Clone, Debug)]
pub struct AuthorHistory {
    pub author: ProposerId,
    pub bundles: Vec<Vec<Vote>>,
}

impl AuthorHistory {
    pub fn new(author: ProposerId) -> Self {
        AuthorHistory {
            author,
            bundles: Vec::new(),
        }
    }

    pub fn push(&mut self, bundle: Vec<Vote>) {
        if !bundle.is_empty() {
            self.bundles.push(bundle);
        }
    }
}

/// Checks rules I to III over an author's full history.
pub fn audit(
    tree: &BlockTree,
    tallies: &impl TallySource,
    history: &AuthorHistory,
) -> Result<Vec<RuleViolation>, ConsensusError> {
    let mut out = Vec::new();
    let mine = |v: &Vote| v.author() == history.author;

    // rule I
    let mut by_height: BTreeMap<u64, Prevote> = BTreeMap::new();
    for v in history.bundles.iter().flatten().filter(|v| mine(v)) {
        if let Vote::Prevote(pv) = v {
            let h = tree.height(pv.target)?;
            match by_height.get(&h) {
                Some(first) if first.target != pv.target => out.push(RuleViolation {
                    rule: Rule::I,
                    author: history.author,
                    offending: *v,
                    witness: Some(Vote::Prevote(*first)),
                }),
                Some(_) => {}
                None => {
                    by_height.insert(h, *pv);
                }
            }
        }
    }

    // rule II
    for bundle in &history.bundles {
        let co: Vec<Prevote> = bundle
            .iter()
            .filter_map(|v| match v {
                Vote::Prevote(p) => Some(*p),
                _ => None,
            })
            .collect();
        for v in bundle.iter().filter(|v| mine(v)) {
            if let Vote::Precommit(pc) = v {
                let t = tallies.require(pc.context)?;
                if let Some(viol) = check_rule_ii(tree, t, pc, &co)? {
                    out.push(viol);
                }
            }
        }
    }

    // rule III: a prevote at height h' with justification height j conflicts
    // with precommits at heights in (j, h') that it does not descend from
    let mut precommits: BTreeMap<u64, Vec<Precommit>> = BTreeMap::new();
    for v in history.bundles.iter().flatten().filter(|v| mine(v)) {
        if let Vote::Precommit(pc) = v {
            precommits
                .entry(tree.height(pc.target)?)
                .or_default()
                .push(*pc);
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for v in history.bundles.iter().flatten().filter(|v| mine(v)) {
        if let Vote::Prevote(pv) = v {
            if !seen.insert(*pv) {
                continue;
            }
            let h_pv = tree.height(pv.target)?;
            let justified = tallies.require(pv.context)?.max_prevoted_height();
            if justified + 1 >= h_pv {
                continue;
            }
            for (_, pcs) in precommits.range(justified + 1..h_pv) {
                for pc in pcs {
                    if !tree.is_ancestor(pc.target, pv.target)? {
                        out.push(RuleViolation {
                            rule: Rule::III,
                            author: history.author,
                            offending: *v,
                            witness: Some(Vote::Precommit(*pc)),
                        });
                    }
                }
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocktree::{Block, BlockId};
    use crate::consensus::update_tally;
    use crate::dynamics::ProposerSet;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn p(i: u32) -> ProposerId {
        ProposerId(i)
    }

    fn b(i: u64) -> BlockId {
        BlockId(i)
    }

    struct World {
        tree: BlockTree,
        tallies: BTreeMap<BlockId, ChainTally>,
        set: Arc<ProposerSet>,
    }

    impl World {
        fn new(n: u32) -> Self {
            let set = Arc::new(ProposerSet::uniform(n));
            let mut tallies = BTreeMap::new();
            tallies.insert(
                BlockId::GENESIS,
                ChainTally::genesis(BlockId::GENESIS, set.clone(), None),
            );
            World {
                tree: BlockTree::new(),
                tallies,
                set,
            }
        }

        fn add(&mut self, id: u64, parent: u64, votes: Vec<Vote>) {
            let pb = self.tree.get(b(parent)).unwrap().clone();
            let mut blk = Block::child(b(id), &pb, p(0), id);
            blk.votes = votes.clone();
            self.tree.insert_block(blk.clone()).unwrap();
            let t = update_tally(
                &self.tree,
                &self.tallies[&b(parent)],
                &blk,
                self.set.clone(),
                &votes,
            )
            .unwrap();
            self.tallies.insert(b(id), t);
        }
    }

    fn pv(target: u64, ctx: u64, a: u32) -> Prevote {
        Prevote {
            target: b(target),
            context: b(ctx),
            author: p(a),
        }
    }

    fn pc(target: u64, ctx: u64, a: u32) -> Precommit {
        Precommit {
            target: b(target),
            context: b(ctx),
            author: p(a),
        }
    }

    /// genesis - 1 - 2 - 3 - 4 - 5 on the main branch, 11 - 12 - 13 forking
    /// off genesis.
    fn forked(n: u32) -> World {
        let mut w = World::new(n);
        for i in 1..=5 {
            w.add(i, i - 1, vec![]);
        }
        w.add(11, 0, vec![]);
        w.add(12, 11, vec![]);
        w.add(13, 12, vec![]);
        w
    }

    #[test]
    fn rule_i_same_height_distinct_blocks() {
        let w = forked(4);
        // block 3 and block 13 are both at height 3
        let v = check_rule_i(&w.tree, &[pv(3, 3, 0)], &pv(13, 13, 0)).unwrap();
        assert_eq!(v.unwrap().rule, Rule::I);
        assert!(check_rule_i(&w.tree, &[pv(3, 3, 0)], &pv(4, 4, 0))
            .unwrap()
            .is_none());
        assert!(check_rule_i(&w.tree, &[pv(3, 3, 0)], &pv(3, 3, 0))
            .unwrap()
            .is_none());
    }

    #[test]
    fn rule_ii_68_of_101() {
        let mut w = World::new(101);
        w.add(1, 0, vec![]);
        let votes: Vec<Vote> = (0..68).map(|a| Vote::Prevote(pv(1, 1, a))).collect();
        w.add(2, 1, votes);
        let ok = check_rule_ii(&w.tree, &w.tallies[&b(2)], &pc(1, 2, 0), &[]).unwrap();
        assert!(ok.is_none());

        let mut w = World::new(101);
        w.add(1, 0, vec![]);
        let votes: Vec<Vote> = (0..67).map(|a| Vote::Prevote(pv(1, 1, a))).collect();
        w.add(2, 1, votes);
        let bad = check_rule_ii(&w.tree, &w.tallies[&b(2)], &pc(1, 2, 0), &[]).unwrap();
        assert_eq!(bad.unwrap().rule, Rule::IIb);
    }

    #[test]
    fn rule_ii_requires_own_prevote() {
        let mut w = World::new(101);
        w.add(1, 0, vec![]);
        let votes: Vec<Vote> = (1..80).map(|a| Vote::Prevote(pv(1, 1, a))).collect();
        w.add(2, 1, votes);
        let bad = check_rule_ii(&w.tree, &w.tallies[&b(2)], &pc(1, 2, 0), &[]).unwrap();
        assert_eq!(bad.unwrap().rule, Rule::IIa);
        // a prevote carried by the same message satisfies (a)
        let ok = check_rule_ii(&w.tree, &w.tallies[&b(2)], &pc(1, 2, 0), &[pv(1, 2, 0)]).unwrap();
        assert!(ok.is_none());
    }

    #[test]
    fn rule_iii_cases() {
        let mut w = World::new(4);
        w.add(1, 0, vec![]);
        w.add(2, 1, vec![]);
        for i in 3..=5 {
            w.add(i, i - 1, vec![]);
        }
        // side branch from block 1 with a prevoted block at height 3
        w.add(22, 1, vec![]);
        w.add(23, 22, vec![]);
        let q: Vec<Vote> = (0..3).map(|a| Vote::Prevote(pv(23, 23, a))).collect();
        w.add(24, 23, q);
        w.add(25, 24, vec![]);
        // side branch from block 1 without any quorum
        w.add(32, 1, vec![]);
        w.add(33, 32, vec![]);

        let history = [pc(2, 2, 0)];
        // (a) descendant
        let ok = check_rule_iii(&w.tree, &w.tallies, &history, &pv(5, 5, 0)).unwrap();
        assert!(ok.is_none());
        // (b) justified by block 23 at height 3 >= 2
        let ok = check_rule_iii(&w.tree, &w.tallies, &history, &pv(25, 25, 0)).unwrap();
        assert!(ok.is_none());
        // neither
        let bad = check_rule_iii(&w.tree, &w.tallies, &history, &pv(33, 33, 0)).unwrap();
        assert_eq!(bad.unwrap().rule, Rule::III);
        // symmetric direction
        let bad =
            check_rule_iii_precommit(&w.tree, &w.tallies, &[pv(33, 33, 0)], &pc(2, 2, 0)).unwrap();
        assert_eq!(bad.unwrap().rule, Rule::III);
    }

    #[test]
    fn audit_finds_each_rule() {
        let w = forked(4);
        let mut h = AuthorHistory::new(p(0));
        h.push(vec![Vote::Prevote(pv(3, 3, 0))]);
        h.push(vec![Vote::Prevote(pv(13, 13, 0))]);
        h.push(vec![Vote::Precommit(pc(2, 5, 0))]);
        let v = audit(&w.tree, &w.tallies, &h).unwrap();
        let rules: Vec<Rule> = v.iter().map(|x| x.rule).collect();
        assert!(rules.contains(&Rule::I));
        assert!(rules.contains(&Rule::IIa));
        assert!(rules.contains(&Rule::III));
    }
}
