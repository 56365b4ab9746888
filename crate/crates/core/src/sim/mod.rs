//! Deterministic discrete-event simulation of proposers on a partially
//! synchronous network.

pub mod scenario;
pub mod trace;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::blocktree::{Block, BlockId};
use crate::consensus::{
    BranchKey, ConsensusError, Decider, DecisionThreshold, ProposerId, TallySource, Vote,
};
use crate::dynamics::SetChange;
use crate::ledger::{Ledger, LedgerError};
use crate::lisk::{make_header, DelegateState};

pub use scenario::{Behavior, BehaviorKind, Mode, Resolved, Scenario, ScenarioError};
pub use trace::{Trace, TraceEvent, TraceLevel, ViolationKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

/// A finished run: the trace plus the ledger of every block created.
pub struct RunOutput {
    pub trace: Trace,
    pub ledger: Ledger,
    pub resolved: Resolved,
}

pub fn run(scenario: &Scenario, level: TraceLevel) -> Result<Trace, SimError> {
    Ok(run_full(scenario, level)?.trace)
}

pub fn run_full(scenario: &Scenario, level: TraceLevel) -> Result<RunOutput, SimError> {
    let resolved = scenario.resolve()?;
    let mut sim = Sim::new(&resolved, level);
    sim.run()?;
    let Sim { ledger, trace, .. } = sim;
    Ok(RunOutput {
        trace: Trace { events: trace },
        ledger,
        resolved,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Msg {
    Block(BlockId),
    Bundle(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Deliver { node: u32, msg: Msg },
    Slot(u64),
}

impl Ev {
    fn class(&self) -> u8 {
        match self {
            Ev::Deliver { .. } => 0,
            Ev::Slot(_) => 1,
        }
    }
}

/// Who gets a message on time; everyone else gets it late.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Route {
    All,
    /// Nodes whose index has this parity.
    Half(usize),
    /// Members of one partition group.
    Side(usize),
    /// The withholding coalition, until the sender's release time.
    Withheld,
}

const UNKNOWN: u8 = 0;
const VALID: u8 = 1;
const REJECTED: u8 = 2;

struct Node {
    id: ProposerId,
    behavior: Behavior,
    group: Option<usize>,
    status: Vec<u8>,
    arrival: Vec<u64>,
    next_arrival: u64,
    orphans: HashMap<BlockId, Vec<BlockId>>,
    best: Option<BranchKey>,
    decider: Decider,
    max_proposed: u64,
    side_max: Vec<u64>,
    sides_used: u64,
    /// First prevote sent per height: (target, context).
    prevoted: BTreeMap<u64, (BlockId, BlockId)>,
    precommitted: BTreeMap<u64, Vec<BlockId>>,
    /// Per side (one side for equivocators): (is prevote, target) sent.
    sent: Vec<HashSet<(bool, BlockId)>>,
    pool: Vec<u32>,
    marked: HashSet<ViolationKind>,
}

impl Node {
    fn tip(&self) -> BlockId {
        self.best.map_or(BlockId::GENESIS, |k| k.id)
    }

    fn status(&self, b: BlockId) -> u8 {
        self.status.get(b.0 as usize).copied().unwrap_or(UNKNOWN)
    }

    fn alive(&self, t: u64) -> bool {
        match self.behavior.kind {
            BehaviorKind::Crashed => self.behavior.crash_at.is_some_and(|c| t < c),
            _ => true,
        }
    }

    fn honest(&self) -> bool {
        !self.behavior.kind.is_byzantine()
    }
}

struct Sim<'a> {
    r: &'a Resolved,
    level: TraceLevel,
    ledger: Ledger,
    nodes: Vec<Node>,
    queue: BinaryHeap<Reverse<(u64, u8, u64, Ev)>>,
    seq: u64,
    rng: ChaCha8Rng,
    bundles: Vec<Vec<Vote>>,
    trace: Vec<TraceEvent>,
    now: u64,
    changes: Vec<SetChange>,
    groups: usize,
    until: Option<u64>,
    max_ticks: u64,
}

impl<'a> Sim<'a> {
    fn new(r: &'a Resolved, level: TraceLevel) -> Self {
        let sc = &r.scenario;
        let groups = sc.partition.as_ref().map_or(0, |p| p.groups.len());
        let nodes: Vec<Node> = r
            .nodes
            .iter()
            .map(|&p| {
                let tau = match sc.mode {
                    Mode::Lisk => DecisionThreshold::two_thirds(),
                    Mode::General => r.threshold(p),
                };
                Node {
                    id: p,
                    behavior: r.behavior(p),
                    group: r.group_of.get(&p).copied(),
                    status: vec![VALID],
                    arrival: vec![0],
                    next_arrival: 1,
                    orphans: HashMap::new(),
                    best: None,
                    decider: Decider::new(tau),
                    max_proposed: 0,
                    side_max: vec![0; groups],
                    sides_used: 0,
                    prevoted: BTreeMap::new(),
                    precommitted: BTreeMap::new(),
                    sent: vec![HashSet::new(); groups.max(1)],
                    pool: Vec::new(),
                    marked: HashSet::new(),
                }
            })
            .collect();
        let mut changes = sc.dynamics.changes.clone();
        changes.sort_by_key(|c| c.id);
        let d = r.slot_duration;
        let max_ticks = sc.stop.max_ticks.unwrap_or(
            sc.clock.gst + d * (3 * sc.stop.max_height + 2 * r.schedule.round_length + 10),
        );
        Sim {
            r,
            level,
            ledger: Ledger::from_resolved(r),
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5e_ed0f_d1ce),
            bundles: Vec::new(),
            trace: Vec::new(),
            now: 0,
            changes,
            groups,
            until: sc.partition.as_ref().map(|p| p.until),
            max_ticks,
        }
    }

    fn push(&mut self, time: u64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse((time, ev.class(), self.seq, ev)));
    }

    fn log(&mut self, e: TraceEvent) {
        self.trace.push(e);
    }

    fn run(&mut self) -> Result<(), SimError> {
        let sc = &self.r.scenario;
        self.log(TraceEvent::Header {
            scenario: Box::new(sc.clone()),
            level: self.level,
            n: self.r.initial.len(),
            quorum: self.r.quorum_count(),
            behaviors: self.r.behaviors.iter().map(|(p, b)| (*p, *b)).collect(),
            thresholds: self
                .nodes
                .iter()
                .map(|n| (n.id, n.decider.threshold()))
                .collect(),
        });
        self.push(self.r.slot_duration, Ev::Slot(1));
        while let Some(Reverse((t, _, _, ev))) = self.queue.pop() {
            self.now = t;
            match ev {
                Ev::Deliver { node, msg } => match msg {
                    Msg::Block(b) => self.deliver_block(node as usize, b)?,
                    Msg::Bundle(i) => self.deliver_bundle(node as usize, i)?,
                },
                Ev::Slot(s) => self.slot(s)?,
            }
        }
        self.log(TraceEvent::End {
            time: self.now,
            blocks: self.ledger.len() as u64 - 1,
            max_height: self.ledger.max_height(),
        });
        Ok(())
    }

    fn jitter(&mut self) -> u64 {
        self.rng.gen_range(0..=self.r.scenario.clock.delta)
    }

    fn delivery_time(&mut self, from: usize, to: usize, route: Route) -> u64 {
        let origin = self.now;
        let clock = &self.r.scenario.clock;
        let (gst, delta) = (clock.gst, clock.delta);
        let (gf, gt) = (self.nodes[from].group, self.nodes[to].group);
        let crossing =
            matches!((self.until, gf, gt), (Some(u), Some(a), Some(b)) if origin < u && a != b);
        let mut at = if crossing {
            self.until.unwrap() + self.jitter()
        } else if origin >= gst {
            origin + self.jitter()
        } else {
            let p = self.r.drop_rate;
            let dropped = *p.numer() > 0 && self.rng.gen_range(0..*p.denom()) < *p.numer();
            if dropped {
                gst + self.jitter()
            } else {
                let d = self.rng.gen_range(0..=self.r.max_delay);
                (origin + d).min(gst + delta)
            }
        };
        match route {
            Route::All => {}
            Route::Half(parity) => {
                if to % 2 != parity {
                    at = at.max(origin.max(gst) + delta);
                }
            }
            Route::Side(g) => {
                if gt.is_some_and(|x| x != g) {
                    let late = self.until.unwrap_or(origin).max(origin) + self.jitter();
                    at = at.max(late);
                }
            }
            Route::Withheld => {
                if self.nodes[to].behavior.kind != BehaviorKind::Withhold {
                    let release = self.nodes[from].behavior.release_at.unwrap_or(origin);
                    let late = release.max(origin) + self.jitter();
                    at = at.max(late);
                }
            }
        }
        at
    }

    fn broadcast(&mut self, from: usize, msg: Msg, route: Route) {
        for to in 0..self.nodes.len() {
            if to == from {
                continue;
            }
            let at = self.delivery_time(from, to, route);
            if !self.nodes[to].alive(at) {
                continue;
            }
            self.push(
                at,
                Ev::Deliver {
                    node: to as u32,
                    msg,
                },
            );
        }
    }

    fn slot(&mut self, s: u64) -> Result<(), SimError> {
        let t = self.now;
        for ni in 0..self.nodes.len() {
            if !self.nodes[ni].alive(t) {
                continue;
            }
            let splitting = self.nodes[ni].behavior.kind == BehaviorKind::SplitVote
                && self.until.is_some_and(|u| t < u);
            if splitting {
                self.split_slot(ni, s)?;
            } else {
                let tip = self.nodes[ni].tip();
                let group = self.nodes[ni].group;
                if self.ledger.record(tip).block.height >= self.r.scenario.stop.max_height {
                    continue;
                }
                if self.ledger.slot_owner(tip, s) == self.nodes[ni].id {
                    self.propose(ni, tip, s, group, None)?;
                }
            }
        }
        let max_height = self.r.scenario.stop.max_height;
        let done = self
            .nodes
            .iter()
            .filter(|n| n.honest() && n.alive(t))
            .all(|n| self.ledger.record(n.tip()).block.height >= max_height);
        let next = t + self.r.slot_duration;
        if !done && next <= self.max_ticks {
            self.push(next, Ev::Slot(s + 1));
        }
        Ok(())
    }

    /// Representative honest member of partition group `g`.
    fn representative(&self, g: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.group == Some(g) && n.honest() && n.alive(self.now))
    }

    fn split_slot(&mut self, ni: usize, s: u64) -> Result<(), SimError> {
        for g in 0..self.groups {
            let Some(rep) = self.representative(g) else {
                continue;
            };
            let tip = self.nodes[rep].tip();
            if self.r.scenario.mode == Mode::General {
                self.side_votes(ni, g, tip)?;
            }
            if self.ledger.record(tip).block.height >= self.r.scenario.stop.max_height {
                continue;
            }
            if self.ledger.slot_owner(tip, s) == self.nodes[ni].id {
                self.propose(ni, tip, s, Some(g), Some(g))?;
            }
        }
        Ok(())
    }

    fn pending_changes(
        &self,
        parent: BlockId,
        height: u64,
        group: Option<usize>,
    ) -> Vec<SetChange> {
        let mut out = Vec::new();
        if self.changes.is_empty() {
            return out;
        }
        let mut cur = (*self.ledger.record(parent).state).clone();
        for c in &self.changes {
            if c.at_height > height || cur.has_applied(c.id) {
                continue;
            }
            if c.group.is_some() && c.group != group {
                continue;
            }
            if let Ok(next) = cur.apply(std::slice::from_ref(c), 0) {
                cur = next;
                out.push(*c);
            }
        }
        out
    }

    /// Pool votes not yet counted on the branch ending at `parent`.
    fn collect_pool(&mut self, ni: usize, parent: BlockId) -> Vec<Vote> {
        let tally = &self.ledger.record(parent).tally;
        let tree = self.ledger.tree();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let bundles = &self.bundles;
        self.nodes[ni].pool.retain(|&i| {
            let mut pending = false;
            for v in &bundles[i as usize] {
                let h = tree.height(v.target()).expect("vote target exists");
                let Some(e) = tally.entry_at(h).filter(|e| e.block == v.target()) else {
                    pending = true;
                    continue;
                };
                let counted = if v.is_prevote() {
                    e.prevoters.contains(v.author())
                } else {
                    e.precommitters.contains(v.author())
                };
                if !counted && seen.insert(*v) {
                    out.push(*v);
                }
            }
            pending
        });
        out
    }

    fn propose(
        &mut self,
        ni: usize,
        parent: BlockId,
        slot: u64,
        group: Option<usize>,
        side: Option<usize>,
    ) -> Result<(), SimError> {
        let me = self.nodes[ni].id;
        let kind = self.nodes[ni].behavior.kind;
        let mode = self.r.scenario.mode;
        let prec = self.ledger.record(parent);
        let mut b = Block::child(self.ledger.next_id(), &prec.block, me, slot);
        let height = b.height;
        let mut understated = false;
        if mode == Mode::Lisk {
            let state = DelegateState {
                proposer: me,
                h0: self.ledger.child_h0(parent, me),
                max_proposed_height: match side {
                    Some(g) => self.nodes[ni].side_max[g],
                    None => self.nodes[ni].max_proposed,
                },
            };
            let mut header = match make_header(&state, &prec.tally) {
                Ok(h) => h,
                Err(e) => panic!("slot owner {me} cannot make a header: {e}"),
            };
            if kind == BehaviorKind::Understate && header.h_previous > 0 {
                header.h_previous = 0;
                understated = true;
            }
            b.header = Some(header);
        } else {
            b.votes = self.collect_pool(ni, parent);
        }
        b.changes = self.pending_changes(parent, height, group);

        let twin = (kind == BehaviorKind::Equivocate).then(|| b.clone());
        let id = self.add_proposed(ni, b)?;
        let node = &mut self.nodes[ni];
        node.max_proposed = node.max_proposed.max(height);
        if let Some(g) = side {
            node.side_max[g] = node.side_max[g].max(height);
            node.sides_used |= 1 << g;
            if mode == Mode::Lisk && node.sides_used.count_ones() > 1 {
                self.mark(ni, ViolationKind::SplitProposal, Some(id));
            }
        }
        if understated {
            self.mark(ni, ViolationKind::UnderstatedPrevious, Some(id));
        }

        if let Some(mut twin) = twin {
            twin.id = self.ledger.next_id();
            let tid = self.add_proposed(ni, twin)?;
            self.mark(ni, ViolationKind::DoubleProposal, Some(tid));
            self.broadcast(ni, Msg::Block(id), Route::Half(0));
            self.broadcast(ni, Msg::Block(tid), Route::Half(1));
            self.deliver_block(ni, id)?;
            self.deliver_block(ni, tid)?;
            return Ok(());
        }
        let route = match (side, kind) {
            (Some(g), _) => Route::Side(g),
            (None, BehaviorKind::Withhold) => Route::Withheld,
            _ => Route::All,
        };
        self.broadcast(ni, Msg::Block(id), route);
        self.deliver_block(ni, id)
    }

    fn add_proposed(&mut self, ni: usize, b: Block) -> Result<BlockId, SimError> {
        self.log(TraceEvent::Proposed {
            time: self.now,
            node: self.nodes[ni].id,
            block: Box::new(b.clone()),
        });
        Ok(self.ledger.add_block(b)?)
    }

    /// Records a scripted violation once per node and kind.
    fn mark(&mut self, ni: usize, kind: ViolationKind, block: Option<BlockId>) {
        if self.nodes[ni].marked.insert(kind) {
            self.log(TraceEvent::Violation {
                time: self.now,
                node: self.nodes[ni].id,
                kind,
                block,
            });
        }
    }

    fn deliver_block(&mut self, ni: usize, id: BlockId) -> Result<(), SimError> {
        if !self.nodes[ni].alive(self.now) || self.nodes[ni].status(id) != UNKNOWN {
            return Ok(());
        }
        if self.level == TraceLevel::Full {
            self.log(TraceEvent::Delivered {
                time: self.now,
                node: self.nodes[ni].id,
                block: id,
            });
        }
        let parent = self
            .ledger
            .record(id)
            .block
            .parent
            .expect("delivered blocks have parents");
        if self.nodes[ni].status(parent) == UNKNOWN {
            self.nodes[ni].orphans.entry(parent).or_default().push(id);
            return Ok(());
        }
        let before = self.nodes[ni].tip();
        let mut stack = vec![id];
        while let Some(b) = stack.pop() {
            if self.nodes[ni].status(b) != UNKNOWN {
                continue;
            }
            self.accept(ni, b)?;
            if let Some(children) = self.nodes[ni].orphans.remove(&b) {
                stack.extend(children);
            }
        }
        let tip = self.nodes[ni].tip();
        if tip != before {
            self.adopted(ni, tip)?;
        }
        Ok(())
    }

    fn accept(&mut self, ni: usize, b: BlockId) -> Result<(), SimError> {
        let rec = self.ledger.record(b);
        let parent = rec.block.parent.expect("delivered blocks have parents");
        let valid = rec.is_valid() && self.nodes[ni].status(parent) == VALID;
        let height = rec.block.height;
        let node = &mut self.nodes[ni];
        let i = b.0 as usize;
        if node.status.len() <= i {
            node.status.resize(i + 1, UNKNOWN);
            node.arrival.resize(i + 1, u64::MAX);
        }
        node.status[i] = if valid { VALID } else { REJECTED };
        node.arrival[i] = node.next_arrival;
        node.next_arrival += 1;
        if !valid {
            return Ok(());
        }
        let mode = self.r.scenario.mode;
        let source = match mode {
            Mode::Lisk => parent,
            Mode::General => b,
        };
        let key = BranchKey {
            prevoted_height: self.ledger.record(source).tally.max_prevoted_height(),
            height,
            arrival: node.arrival[i],
            id: b,
        };
        if node.best.is_none_or(|k| key > k) {
            node.best = Some(key);
        }
        if node.honest() {
            match mode {
                Mode::Lisk => {
                    let (h, top) = self.ledger.record(b).tally.max_precommitted();
                    if h > 0 && node.decider.mark_decided(self.ledger.tree(), top)? {
                        self.finalized(ni, top);
                    }
                }
                Mode::General => {
                    let pcs: Vec<Vote> = self
                        .ledger
                        .record(b)
                        .votes
                        .iter()
                        .filter(|v| !v.is_prevote())
                        .copied()
                        .collect();
                    self.take_precommits(ni, &pcs)?;
                }
            }
        } else if mode == Mode::General && node.behavior.kind == BehaviorKind::Equivocate {
            self.reckless_votes(ni, b)?;
        }
        Ok(())
    }

    fn finalized(&mut self, ni: usize, block: BlockId) {
        let height = self.ledger.record(block).block.height;
        self.log(TraceEvent::Finalized {
            time: self.now,
            node: self.nodes[ni].id,
            block,
            height,
        });
    }

    fn take_precommits(&mut self, ni: usize, votes: &[Vote]) -> Result<(), SimError> {
        for v in votes {
            if let Vote::Precommit(pc) = v {
                let set = self.ledger.record(pc.target).set.clone();
                let d = self.nodes[ni].decider.add_precommit(
                    self.ledger.tree(),
                    pc.author,
                    pc.target,
                    &set,
                )?;
                if let Some(d) = d {
                    self.finalized(ni, d);
                }
            }
        }
        Ok(())
    }

    fn adopted(&mut self, ni: usize, tip: BlockId) -> Result<(), SimError> {
        if self.nodes[ni].honest() {
            self.log(TraceEvent::Adopted {
                time: self.now,
                node: self.nodes[ni].id,
                tip,
                height: self.ledger.record(tip).block.height,
                finalized: self.nodes[ni].decider.finalized_height(),
            });
        }
        if self.r.scenario.mode != Mode::General {
            return Ok(());
        }
        let route = match self.nodes[ni].behavior.kind {
            BehaviorKind::Honest | BehaviorKind::Crashed => Route::All,
            BehaviorKind::Withhold => Route::Withheld,
            BehaviorKind::SplitVote if self.until.is_some_and(|u| self.now >= u) => Route::All,
            _ => return Ok(()),
        };
        let votes = self.honest_votes(ni, tip);
        if !votes.is_empty() {
            self.send(ni, votes, route)?;
        }
        Ok(())
    }

    /// Votes an honest proposer sends on adopting `tip`: prevotes for every
    /// branch block at a height it has not prevoted yet, then precommits for
    /// branch blocks with a prevote quorum, without breaking rules I to III.
    fn honest_votes(&mut self, ni: usize, tip: BlockId) -> Vec<Vote> {
        let tally = &self.ledger.record(tip).tally;
        let tree = self.ledger.tree();
        let mp = tally.max_prevoted_height();
        let node = &mut self.nodes[ni];
        let me = node.id;
        let mut out = Vec::new();
        for e in tally.entries().filter(|e| e.height > 0) {
            if node.prevoted.contains_key(&e.height) {
                continue;
            }
            // rule III: earlier precommits off this branch need a quorum at or above them
            let blocked = e.height > mp + 1
                && node
                    .precommitted
                    .range(mp + 1..e.height)
                    .any(|(&h, bs)| bs.iter().any(|&b| tally.block_at(h) != Some(b)));
            if blocked {
                continue;
            }
            node.prevoted.insert(e.height, (e.block, tip));
            out.push(Vote::prevote(e.block, tip, me));
        }
        let mut co = Vec::new();
        for e in tally
            .entries()
            .filter(|e| e.height > 0 && e.has_prevote_quorum())
        {
            if node
                .precommitted
                .get(&e.height)
                .is_some_and(|bs| bs.contains(&e.block))
            {
                continue;
            }
            if node.prevoted.get(&e.height).map(|p| p.0) != Some(e.block) {
                continue;
            }
            // the same rule seen from the precommit: later prevotes off its subtree
            let blocked = node.prevoted.range(e.height + 1..).any(|(_, &(t, ctx))| {
                !tree.is_ancestor(e.block, t).unwrap_or(false)
                    && self
                        .ledger
                        .tally(ctx)
                        .is_none_or(|c| c.max_prevoted_height() < e.height)
            });
            if blocked {
                continue;
            }
            if !e.prevoters.contains(me) && !out.contains(&Vote::prevote(e.block, tip, me)) {
                co.push(Vote::prevote(e.block, tip, me));
            }
            node.precommitted.entry(e.height).or_default().push(e.block);
            out.push(Vote::precommit(e.block, tip, me));
        }
        out.extend(co);
        out
    }

    /// Prevotes `b` and precommits every quorum block of its chain, with no
    /// regard for the voting rules.
    fn reckless_votes(&mut self, ni: usize, b: BlockId) -> Result<(), SimError> {
        let votes = self.side_bundle(ni, 0, b);
        if !votes.is_empty() {
            self.send(ni, votes, Route::All)?;
        }
        Ok(())
    }

    fn side_votes(&mut self, ni: usize, g: usize, tip: BlockId) -> Result<(), SimError> {
        let votes = self.side_bundle(ni, g, tip);
        if !votes.is_empty() {
            self.send(ni, votes, Route::Side(g))?;
        }
        Ok(())
    }

    fn side_bundle(&mut self, ni: usize, g: usize, tip: BlockId) -> Vec<Vote> {
        let tally = &self.ledger.record(tip).tally;
        let node = &mut self.nodes[ni];
        let me = node.id;
        let mut out = Vec::new();
        let mut conflict = None;
        for e in tally.entries().filter(|e| e.height > 0) {
            let pv = Vote::prevote(e.block, tip, me);
            let fresh = node.sent[g].insert((true, e.block));
            if fresh {
                let first = node.prevoted.entry(e.height).or_insert((e.block, tip));
                if first.0 != e.block {
                    conflict = Some(e.block);
                }
                out.push(pv);
            }
            if e.has_prevote_quorum() && node.sent[g].insert((false, e.block)) {
                if !fresh && !e.prevoters.contains(me) {
                    out.push(pv);
                }
                node.precommitted.entry(e.height).or_default().push(e.block);
                out.push(Vote::precommit(e.block, tip, me));
            }
        }
        if let Some(b) = conflict {
            self.mark(ni, ViolationKind::ConflictingPrevote, Some(b));
        }
        out
    }

    fn send(&mut self, ni: usize, votes: Vec<Vote>, route: Route) -> Result<(), SimError> {
        let idx = self.bundles.len() as u32;
        self.log(TraceEvent::Sent {
            time: self.now,
            node: self.nodes[ni].id,
            votes: votes.clone(),
        });
        self.bundles.push(votes);
        self.broadcast(ni, Msg::Bundle(idx), route);
        self.deliver_bundle(ni, idx)
    }

    fn deliver_bundle(&mut self, ni: usize, idx: u32) -> Result<(), SimError> {
        if !self.nodes[ni].alive(self.now) {
            return Ok(());
        }
        self.nodes[ni].pool.push(idx);
        if self.nodes[ni].honest() {
            let votes = self.bundles[idx as usize].clone();
            self.take_precommits(ni, &votes)?;
        }
        Ok(())
    }
}
