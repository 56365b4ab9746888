mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::{dynamic_split_scenario, rng};
use lbft_core::dynamics::{honest_overlap, ChangeKind, ProposerSet, RoundSchedule, SetChange};
use lbft_core::ledger::Ledger;
use lbft_core::sim::{run_full, Scenario, TraceLevel};
use lbft_core::{Block, BlockId, ProposerId, VoterSet, Weight};
use proptest::prelude::*;
use rand::Rng;

/// Replays the active set of every round on each block's branch and
/// compares it, and each member's activity start, with the ledger.
fn check_ledger_sets(ledger: &Ledger, sched: &RoundSchedule) {
    for rec in ledger.records().iter().skip(1) {
        let branch = ledger.tree().branch_to(rec.block.id).unwrap();
        let round = sched.round_of(rec.block.height);
        let want = sched.active_set(&branch, round).unwrap();
        assert_eq!(
            rec.set.members(),
            want.members(),
            "block {} round {round}",
            rec.block.id
        );
        for p in want.ids() {
            let mut r = round;
            while r > 0 && sched.active_set(&branch, r - 1).unwrap().contains(p) {
                r -= 1;
            }
            assert_eq!(
                rec.h0.get(&p).copied(),
                Some(sched.first_height(r)),
                "h0 of {p} at {}",
                rec.block.id
            );
        }
    }
}

fn general_with_changes(seed: u64, n: u32, m: u64, d: u64, changes: &[SetChange]) -> Scenario {
    let mut sc = Scenario::from_toml(&format!(
        "mode = \"general\"\nseed = {seed}\nclock = {{ delta = 2, gst = 0 }}\nproposers = {{ n = {n} }}\n\
         stop = {{ max_height = 40 }}\n[dynamics]\nround_length = {m}\ndelay = {d}\n"
    ))
    .unwrap();
    sc.dynamics.changes = changes.to_vec();
    sc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_is_a_deterministic_shuffle(seed in any::<u64>(), n in 1u32..120, round in 0u64..1000) {
        let set = ProposerSet::uniform(n);
        let s = RoundSchedule::new(101, 2, seed, set.clone()).unwrap();
        let p = s.permutation(round, &set);
        let mut sorted = p.clone();
        sorted.sort();
        prop_assert_eq!(sorted, set.ids().collect::<Vec<_>>());
        prop_assert_eq!(&p, &s.permutation(round, &set));
        // consecutive slots cycle through every member once
        let owners: BTreeSet<ProposerId> = (0..n as u64).map(|i| s.slot_proposer(round, &set, 17 + i)).collect();
        prop_assert_eq!(owners.len(), n as usize);
    }

    #[test]
    fn cutoff_trails_the_round_by_the_delay(m in 1u64..200, d in 0u64..5, round in 0u64..50) {
        let s = RoundSchedule::new(m, d, 0, ProposerSet::uniform(4)).unwrap();
        match s.cutoff_height(round) {
            None => prop_assert!(round <= d),
            Some(c) => {
                prop_assert_eq!(s.round_of(c), round - d - 1);
                prop_assert_eq!(c + 1, s.first_height(round - d));
            }
        }
        prop_assert_eq!(s.round_of(s.first_height(round)), round);
    }

    #[test]
    fn ledger_sets_match_branch_replay(seed in any::<u64>(), n in 4u32..9, m in 2u64..8, d in 0u64..3) {
        let mut r = rng(seed);
        let mut changes = Vec::new();
        let mut members: Vec<u32> = (0..n).collect();
        let mut next_joiner = n;
        for id in 0..r.gen_range(1..6) {
            let at_height = r.gen_range(1..30);
            let kind = match r.gen_range(0..3) {
                0 => {
                    next_joiner += 1;
                    members.push(next_joiner - 1);
                    ChangeKind::Join { proposer: ProposerId(next_joiner - 1), stake: r.gen_range(1..4) }
                }
                1 if members.len() > 3 => {
                    let i = r.gen_range(0..members.len());
                    ChangeKind::Leave { proposer: ProposerId(members.remove(i)) }
                }
                _ => ChangeKind::Reweight { proposer: ProposerId(members[r.gen_range(0..members.len())]), stake: r.gen_range(1..5) },
            };
            changes.push(SetChange { id, at_height, kind, group: None });
        }
        let sc = general_with_changes(seed, n, m, d, &changes);
        let res = sc.resolve().unwrap();
        let out = run_full(&sc, TraceLevel::Compact).unwrap();
        check_ledger_sets(&out.ledger, &res.schedule);
    }
}

#[test]
fn side_local_changes_match_branch_replay() {
    let mut sc = dynamic_split_scenario(3, "dyn", 98, 16, false, true);
    sc.stop.max_height = 330;
    let res = sc.resolve().unwrap();
    let out = run_full(&sc, TraceLevel::Compact).unwrap();
    check_ledger_sets(&out.ledger, &res.schedule);
    // both sides recorded their own changes
    let with_changes: Vec<BlockId> = out
        .ledger
        .records()
        .iter()
        .filter(|r| !r.block.changes.is_empty())
        .map(|r| r.block.id)
        .collect();
    assert!(with_changes.len() >= 2);
    assert!(out
        .ledger
        .tree()
        .are_conflicting(with_changes[0], *with_changes.last().unwrap())
        .unwrap());
}

#[test]
fn overlap_of_identical_sets_is_honest_share() {
    let set = ProposerSet::uniform(101);
    let honest = VoterSet::from_ids((0..68).map(ProposerId));
    assert_eq!(honest_overlap(&[&set, &set], &honest), Weight::new(68, 101));
    let fewer = ProposerSet::new((1..101).map(|i| (ProposerId(i), 1)), 1).unwrap();
    assert_eq!(
        honest_overlap(&[&set, &fewer], &honest),
        Weight::new(67, 101)
    );
}

#[test]
fn permutation_override_puts_listed_members_first() {
    let set = ProposerSet::uniform(5);
    let mut s = RoundSchedule::new(5, 0, 1, set.clone()).unwrap();
    s.overrides
        .insert(2, vec![ProposerId(4), ProposerId(9), ProposerId(1)]);
    let p = s.permutation(2, &set);
    assert_eq!(&p[..2], &[ProposerId(4), ProposerId(1)]);
    assert_eq!(p.len(), 5);
}

#[test]
fn active_set_ignores_changes_after_the_cutoff() {
    let s = RoundSchedule::new(4, 1, 0, ProposerSet::uniform(4)).unwrap();
    let mut chain = vec![Arc::new(Block::genesis())];
    for h in 1..=12u64 {
        let mut b = Block::child(BlockId(h), &chain[h as usize - 1], ProposerId(0), h);
        if h == 5 {
            b.changes.push(SetChange {
                id: 0,
                at_height: 5,
                kind: ChangeKind::Leave {
                    proposer: ProposerId(3),
                },
                group: None,
            });
        }
        chain.push(Arc::new(b));
    }
    // round 2 reads the state at height 3, round 3 at height 7
    assert_eq!(s.active_set(&chain, 2).unwrap().len(), 4);
    assert_eq!(s.active_set(&chain, 3).unwrap().len(), 3);
}
