//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use lbft_core::approve::{expand_approve, Approve};
use lbft_core::consensus::{update_tally, AuthorHistory, ChainTally, TallySource};
use lbft_core::dynamics::ProposerSet;
use lbft_core::ledger::Ledger;
use lbft_core::lisk::{expand_header, LiskConfig, LiskHeader};
use lbft_core::sim::Scenario;
use lbft_core::{Block, BlockId, BlockTree, ProposerId, Vote};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parent choice for a growing tree: mostly the newest or highest block,
/// sometimes anything.
fn pick_parent(rng: &mut ChaCha8Rng, tree: &BlockTree, newest: BlockId, fork_rate: f64) -> BlockId {
    if rng.gen_bool(fork_rate) {
        BlockId(rng.gen_range(0..tree.len() as u64))
    } else if rng.gen_bool(0.5) {
        newest
    } else {
        tree.ids()
            .max_by_key(|b| (tree.height(*b).unwrap(), b.0))
            .unwrap()
    }
}

/// A random tree with ids `0..=len`, each block's parent an earlier id.
pub fn random_tree(rng: &mut ChaCha8Rng, len: u64, fork_rate: f64) -> BlockTree {
    let mut tree = BlockTree::new();
    for i in 1..=len {
        let parent = pick_parent(rng, &tree, BlockId(i - 1), fork_rate);
        let p = tree.get(parent).unwrap().clone();
        tree.insert_block(Block::child(BlockId(i), &p, ProposerId(0), i))
            .unwrap();
    }
    tree
}

/// Ancestor test by walking parent pointers.
pub fn naive_is_ancestor_or_self(tree: &BlockTree, a: BlockId, b: BlockId) -> bool {
    let mut cur = Some(b);
    while let Some(c) = cur {
        if c == a {
            return true;
        }
        cur = tree.get(c).unwrap().parent;
    }
    false
}

pub fn naive_conflicting(tree: &BlockTree, a: BlockId, b: BlockId) -> bool {
    !naive_is_ancestor_or_self(tree, a, b) && !naive_is_ancestor_or_self(tree, b, a)
}

/// A block tree with one tally per block, built from explicit vote lists.
pub struct World {
    pub tree: BlockTree,
    pub tallies: BTreeMap<BlockId, ChainTally>,
    pub set: Arc<ProposerSet>,
    pub n: u32,
}

impl World {
    pub fn new(n: u32, window: Option<u64>) -> Self {
        let set = Arc::new(ProposerSet::uniform(n));
        let mut tallies = BTreeMap::new();
        tallies.insert(
            BlockId::GENESIS,
            ChainTally::genesis(BlockId::GENESIS, set.clone(), window),
        );
        World {
            tree: BlockTree::new(),
            tallies,
            set,
            n,
        }
    }

    pub fn next_id(&self) -> BlockId {
        BlockId(self.tree.len() as u64)
    }

    pub fn tally(&self, b: BlockId) -> &ChainTally {
        &self.tallies[&b]
    }

    pub fn push(&mut self, block: Block, votes: &[Vote]) {
        let parent = block.parent.unwrap();
        self.tree.insert_block(block.clone()).unwrap();
        let t = update_tally(
            &self.tree,
            &self.tallies[&parent],
            &block,
            self.set.clone(),
            votes,
        )
        .unwrap();
        self.tallies.insert(block.id, t);
    }

    fn mp(&self, b: BlockId) -> u64 {
        self.tallies[&b].max_prevoted_height()
    }
}

/// Honest approve streams of `n` authors over a random tree.
pub struct ApproveHistory {
    pub world: World,
    pub approves: BTreeMap<ProposerId, Vec<Approve>>,
    pub bundles: BTreeMap<ProposerId, AuthorHistory>,
}

impl ApproveHistory {
    /// Authors approve the parent of each new block whenever that keeps
    /// their stream monotone: `k` is the height of their last context and
    /// the declared prevoted height never goes down.
    pub fn honest(rng: &mut ChaCha8Rng, n: u32, len: u64) -> Self {
        let mut world = World::new(n, None);
        let mut approves: BTreeMap<ProposerId, Vec<Approve>> = BTreeMap::new();
        let mut bundles: BTreeMap<ProposerId, AuthorHistory> = BTreeMap::new();
        let rate = (6.0 / n as f64).clamp(0.15, 0.9);
        for i in 1..=len {
            let parent = pick_parent(rng, &world.tree, BlockId(i - 1), 0.25);
            let ph = world.tree.height(parent).unwrap();
            let p_mp = world.mp(parent);
            let mut block = Block::child(
                BlockId(i),
                world.tree.get(parent).unwrap(),
                ProposerId(rng.gen_range(0..n)),
                i,
            );
            let mut votes = Vec::new();
            for a in 0..n {
                let author = ProposerId(a);
                if !rng.gen_bool(rate) {
                    continue;
                }
                let last = approves.get(&author).and_then(|v| v.last());
                let k = last.map_or(0, |l| world.tree.height(l.context).unwrap());
                if ph <= k || last.is_some_and(|l| l.p > p_mp) {
                    continue;
                }
                let ap = Approve {
                    k,
                    p: p_mp,
                    context: parent,
                    author,
                };
                let implied = expand_approve(&ap, &world.tree, world.tally(parent))
                    .unwrap()
                    .into_votes();
                bundles
                    .entry(author)
                    .or_insert_with(|| AuthorHistory::new(author))
                    .push(implied.clone());
                votes.extend(implied);
                approves.entry(author).or_default().push(ap);
                block.approves.push(ap);
            }
            world.push(block, &votes);
        }
        ApproveHistory {
            world,
            approves,
            bundles,
        }
    }
}

/// Honest Lisk delegates forging on a random tree.
pub struct HeaderHistory {
    pub world: World,
    pub cfg: LiskConfig,
    /// Blocks per author in proposal order.
    pub by_author: BTreeMap<ProposerId, Vec<BlockId>>,
    pub bundles: BTreeMap<ProposerId, AuthorHistory>,
}

impl HeaderHistory {
    /// Each delegate builds only on chains whose prevoted height is at least
    /// the one it declared last, and above every height it proposed before.
    pub fn honest(rng: &mut ChaCha8Rng, n: u32, len: u64) -> Self {
        let cfg = LiskConfig::new(n as u64, 3 * n as u64);
        let mut world = World::new(n, Some(cfg.window));
        let mut by_author: BTreeMap<ProposerId, Vec<BlockId>> = BTreeMap::new();
        let mut bundles: BTreeMap<ProposerId, AuthorHistory> = BTreeMap::new();
        let mut state: BTreeMap<ProposerId, (u64, u64)> = BTreeMap::new();
        // large sets need long stretches on one branch to gather precommits
        let fork_rate = if n > 20 { 0.02 } else { 0.2 };
        let mut i = 1;
        while i <= len {
            let author = ProposerId(rng.gen_range(0..n));
            let (max_h, last_pv) = state.get(&author).copied().unwrap_or((0, 0));
            let mut parent = pick_parent(rng, &world.tree, BlockId(i - 1), fork_rate);
            let ok =
                |w: &World, b: BlockId| w.tree.height(b).unwrap() >= max_h && w.mp(b) >= last_pv;
            if !ok(&world, parent) {
                let cands: Vec<BlockId> = world.tree.ids().filter(|b| ok(&world, *b)).collect();
                parent = *cands.choose(rng).unwrap();
            }
            let mut block = Block::child(BlockId(i), world.tree.get(parent).unwrap(), author, i);
            let header = LiskHeader {
                h_previous: max_h,
                h_prevoted: world.mp(parent),
            };
            block.header = Some(header);
            let implied = expand_header(&block, world.tally(parent), Some(0), &cfg)
                .unwrap()
                .into_votes();
            bundles
                .entry(author)
                .or_insert_with(|| AuthorHistory::new(author))
                .push(implied.clone());
            state.insert(author, (block.height, header.h_prevoted));
            by_author.entry(author).or_default().push(block.id);
            world.push(block, &implied);
            i += 1;
        }
        HeaderHistory {
            world,
            cfg,
            by_author,
            bundles,
        }
    }

    pub fn blocks_of(&self, author: ProposerId) -> Vec<Block> {
        self.by_author[&author]
            .iter()
            .map(|b| (**self.world.tree.get(*b).unwrap()).clone())
            .collect()
    }
}

/// Recounts the votes included along the branch ending at `tip` and checks
/// the ledger's incremental tally against the recount.
pub fn recount_matches(ledger: &Ledger, tip: BlockId) -> Result<(), String> {
    let window = ledger.tally(BlockId::GENESIS).unwrap().window();
    recount(
        ledger.tree(),
        tip,
        window,
        |b| ledger.record(b).votes.as_slice(),
        |b| ledger.record(b).set.clone(),
        ledger.tally(tip).unwrap(),
    )
}

pub fn world_recount_matches(
    world: &World,
    votes: &BTreeMap<BlockId, Vec<Vote>>,
    tip: BlockId,
) -> Result<(), String> {
    let window = world.tally(BlockId::GENESIS).window();
    recount(
        &world.tree,
        tip,
        window,
        |b| votes.get(&b).map_or(&[][..], |v| v.as_slice()),
        |_| world.set.clone(),
        world.tally(tip),
    )
}

/// Brute-force recount: a vote counts once per author if its target is on
/// the branch, at or below the carrying block, and not below the window of
/// the carrying block's parent.
pub fn recount<'a>(
    tree: &BlockTree,
    tip: BlockId,
    window: Option<u64>,
    votes_of: impl Fn(BlockId) -> &'a [Vote],
    set_of: impl Fn(BlockId) -> Arc<ProposerSet>,
    t: &ChainTally,
) -> Result<(), String> {
    let branch = tree.branch_ids(tip).unwrap();
    let height_of: BTreeMap<BlockId, u64> = branch
        .iter()
        .map(|b| (*b, tree.height(*b).unwrap()))
        .collect();
    let mut prevoters: BTreeMap<u64, BTreeSet<ProposerId>> = BTreeMap::new();
    let mut precommitters: BTreeMap<u64, BTreeSet<ProposerId>> = BTreeMap::new();
    prevoters.insert(0, set_of(BlockId::GENESIS).ids().collect());
    for b in &branch[1..] {
        let h = height_of[b];
        let lowest = window.map_or(0, |w| h.saturating_sub(w));
        for v in votes_of(*b) {
            let Some(&th) = height_of.get(&v.target()) else {
                continue;
            };
            if th > h || th < lowest {
                continue;
            }
            let m = if v.is_prevote() {
                &mut prevoters
            } else {
                &mut precommitters
            };
            m.entry(th).or_default().insert(v.author());
        }
    }
    let stake = |b: BlockId, s: Option<&BTreeSet<ProposerId>>| -> u64 {
        let set = set_of(b);
        s.map_or(0, |s| s.iter().map(|p| set.stake(*p)).sum())
    };
    let quorum = |b: BlockId, st: u64| 3 * st as u128 > 2 * set_of(b).total() as u128;
    let mut mp = (0, BlockId::GENESIS);
    let mut mc = (0, BlockId::GENESIS);
    for b in &branch {
        let h = height_of[b];
        if quorum(*b, stake(*b, prevoters.get(&h))) {
            mp = (h, *b);
        }
        if h > 0 && quorum(*b, stake(*b, precommitters.get(&h))) {
            mc = (h, *b);
        }
    }
    let tip_h = height_of[&tip];
    let base = window.map_or(0, |w| (tip_h + 1).saturating_sub(w.max(1)));
    let mut err = String::new();
    if t.tip() != tip || t.base_height() != base {
        let _ = writeln!(
            err,
            "tip {} base {} != {} {}",
            t.tip(),
            t.base_height(),
            tip,
            base
        );
    }
    if t.entries().count() as u64 != tip_h + 1 - base {
        let _ = writeln!(
            err,
            "{} entries for heights {base}..={tip_h}",
            t.entries().count()
        );
    }
    for e in t.entries() {
        let h = e.height;
        if branch[h as usize] != e.block {
            let _ = writeln!(
                err,
                "entry at {h} is {} not {}",
                e.block, branch[h as usize]
            );
        }
        let pv: BTreeSet<ProposerId> = e.prevoters.iter().collect();
        let pc: BTreeSet<ProposerId> = e.precommitters.iter().collect();
        if pv != prevoters.get(&h).cloned().unwrap_or_default() {
            let _ = writeln!(err, "prevoters differ at {h}");
        }
        if pc != precommitters.get(&h).cloned().unwrap_or_default() {
            let _ = writeln!(err, "precommitters differ at {h}");
        }
        if e.prevote_stake != stake(e.block, prevoters.get(&h))
            || e.precommit_stake != stake(e.block, precommitters.get(&h))
        {
            let _ = writeln!(err, "stake differs at {h}");
        }
    }
    if t.max_prevoted() != mp {
        let _ = writeln!(err, "max prevoted {:?} != {:?}", t.max_prevoted(), mp);
    }
    if t.max_precommitted() != mc {
        let _ = writeln!(
            err,
            "max precommitted {:?} != {:?}",
            t.max_precommitted(),
            mc
        );
    }
    if err.is_empty() {
        Ok(())
    } else {
        Err(err)
    }
}

fn ids_list(ids: &[u32]) -> String {
    let parts: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

fn random_subset(rng: &mut ChaCha8Rng, from: std::ops::Range<u32>, k: usize) -> Vec<u32> {
    let mut all: Vec<u32> = from.collect();
    all.shuffle(rng);
    all.truncate(k);
    all.sort_unstable();
    all
}

/// 101 equal proposers, 33 of them equivocating; Lisk runs add header
/// understatement, general runs add pre-GST loss.
pub fn equivocation_scenario(seed: u64, lisk: bool) -> Scenario {
    let mut r = rng(seed ^ 0x5eed);
    let byz = random_subset(&mut r, 0..101, 33);
    let (eq, under) = if lisk {
        let cut = r.gen_range(20..=33);
        (byz[..cut].to_vec(), byz[cut..].to_vec())
    } else {
        (byz.clone(), Vec::new())
    };
    let mut s = String::new();
    if lisk {
        let gst = r.gen_range(0..400);
        let _ = writeln!(
            s,
            "name = \"equivocate-lisk\"\nmode = \"lisk\"\nseed = {seed}"
        );
        let _ = writeln!(
            s,
            "clock = {{ delta = 2, gst = {gst} }}\nproposers = {{ n = 101 }}"
        );
        let _ = writeln!(
            s,
            "network = {{ max_delay = 9, drop_rate = \"1/20\" }}\nstop = {{ max_height = 240 }}"
        );
    } else {
        let gst = r.gen_range(0..60);
        let _ = writeln!(
            s,
            "name = \"equivocate-general\"\nmode = \"general\"\nseed = {seed}"
        );
        let _ = writeln!(
            s,
            "clock = {{ delta = 2, gst = {gst} }}\nproposers = {{ n = 101 }}"
        );
        let _ = writeln!(
            s,
            "network = {{ max_delay = 12, drop_rate = \"1/10\" }}\nstop = {{ max_height = 24 }}"
        );
    }
    let _ = writeln!(
        s,
        "[[behaviors]]\nkind = \"equivocate\"\nproposers = {}",
        ids_list(&eq)
    );
    if !under.is_empty() {
        let _ = writeln!(
            s,
            "[[behaviors]]\nkind = \"understate\"\nproposers = {}",
            ids_list(&under)
        );
    }
    Scenario::from_toml(&s).unwrap()
}

/// Honest groups `0..h/2` and `h/2..h` partitioned until `until`, with the
/// remaining `101 - h` proposers voting on both sides.
pub fn split_scenario(seed: u64, byzantine: u32, lisk: bool) -> Scenario {
    let h = 101 - byzantine;
    let a: Vec<u32> = (0..h / 2).collect();
    let b: Vec<u32> = (h / 2..h).collect();
    let (mode, until, max_h) = if lisk {
        ("lisk", 2500, 400)
    } else {
        ("general", 200, 40)
    };
    let s = format!(
        "name = \"split-{byzantine}-{mode}\"\nmode = \"{mode}\"\nseed = {seed}\n\
         clock = {{ delta = 2, gst = {until} }}\nproposers = {{ n = 101 }}\n\
         network = {{ max_delay = 2 }}\nstop = {{ max_height = {max_h} }}\n\
         [partition]\nuntil = {until}\ngroups = [{}, {}]\n\
         [[behaviors]]\nkind = \"split_vote\"\nrange = [{h}, 101]\n",
        ids_list(&a),
        ids_list(&b)
    );
    Scenario::from_toml(&s).unwrap()
}

/// Lisk, no faults besides `crashed` proposers that never send.
pub fn crash_scenario(seed: u64, crashed: &[u32], max_height: u64) -> Scenario {
    let mut s = format!(
        "name = \"crash-{}\"\nmode = \"lisk\"\nseed = {seed}\n\
         clock = {{ delta = 2, gst = 0 }}\nproposers = {{ n = 101 }}\n\
         stop = {{ max_height = {max_height} }}\n",
        crashed.len()
    );
    if !crashed.is_empty() {
        let _ = writeln!(
            s,
            "[[behaviors]]\nkind = \"crashed\"\nproposers = {}",
            ids_list(crashed)
        );
    }
    Scenario::from_toml(&s).unwrap()
}

pub fn random_crash_set(seed: u64, k: usize) -> Vec<u32> {
    random_subset(&mut rng(seed ^ 0xc4a5), 0..101, k)
}

/// One partition side's set changes: `joins` enter and `leaves` exit, as
/// seen only by proposers of `group`.
fn side_changes(
    s: &mut String,
    next_id: &mut u32,
    group: usize,
    at: u64,
    joins: &[u32],
    leaves: &[u32],
) {
    for j in joins {
        let _ = writeln!(
            s,
            "  {{ id = {}, at_height = {at}, kind = \"join\", proposer = {j}, stake = 1, group = {group} }},",
            next_id
        );
        *next_id += 1;
    }
    for l in leaves {
        let _ = writeln!(
            s,
            "  {{ id = {}, at_height = {at}, kind = \"leave\", proposer = {l}, group = {group} }},",
            next_id
        );
        *next_id += 1;
    }
}

/// A partitioned Lisk run where each side replaces `changes` members of the
/// other side with its own joiners. `honest` proposers `0..honest` are split
/// into two random groups; the rest of the initial 101 vote on both sides.
/// Byzantine joiners (when `byzantine_joins`) replace Byzantine members.
/// A `balanced` split puts exactly half the honest proposers on each side.
pub fn dynamic_split_scenario(
    seed: u64,
    name: &str,
    honest: u32,
    changes: u32,
    byzantine_joins: bool,
    balanced: bool,
) -> Scenario {
    let mut r = rng(seed ^ 0xd1a);
    let mut ids: Vec<u32> = (0..honest).collect();
    ids.shuffle(&mut r);
    let lo = if balanced {
        honest / 2
    } else {
        honest / 2 - honest / 10
    };
    let cut = r.gen_range(lo..=honest - lo) as usize;
    let mut ga = ids[..cut].to_vec();
    let mut gb = ids[cut..].to_vec();
    ga.sort_unstable();
    gb.sort_unstable();
    let joins_a: Vec<u32> = (101..101 + changes).collect();
    let joins_b: Vec<u32> = (101 + changes..101 + 2 * changes).collect();
    let at = r.gen_range(2..40);
    let mut s = format!(
        "name = \"{name}\"\nmode = \"lisk\"\nseed = {seed}\n\
         clock = {{ delta = 2, gst = 30000 }}\nproposers = {{ n = 101 }}\n\
         network = {{ max_delay = 2 }}\nstop = {{ max_height = 900 }}\n"
    );
    let mut behaviors = format!("[[behaviors]]\nkind = \"split_vote\"\nrange = [{honest}, 101]\n");
    let mut changes_toml = String::from("[dynamics]\nchanges = [\n");
    let mut next = 0;
    if byzantine_joins {
        let k = (changes as usize).min((101 - honest) as usize);
        let leave_a = random_subset(&mut r, honest..101, k);
        let leave_b = random_subset(&mut r, honest..101, k);
        side_changes(&mut changes_toml, &mut next, 0, at, &joins_a[..k], &leave_a);
        side_changes(&mut changes_toml, &mut next, 1, at, &joins_b[..k], &leave_b);
        let joiners: Vec<u32> = joins_a[..k].iter().chain(&joins_b[..k]).copied().collect();
        let _ = writeln!(
            behaviors,
            "[[behaviors]]\nkind = \"split_vote\"\nproposers = {}",
            ids_list(&joiners)
        );
    } else {
        let k = changes as usize;
        let leave_a = random_subset_of(&mut r, &gb, k);
        let leave_b = random_subset_of(&mut r, &ga, k);
        side_changes(&mut changes_toml, &mut next, 0, at, &joins_a, &leave_a);
        side_changes(&mut changes_toml, &mut next, 1, at, &joins_b, &leave_b);
        ga.extend(&joins_a);
        gb.extend(&joins_b);
    }
    changes_toml.push_str("]\n");
    let _ = writeln!(
        s,
        "[partition]\nuntil = 30000\ngroups = [{}, {}]",
        ids_list(&ga),
        ids_list(&gb)
    );
    s.push_str(&behaviors);
    s.push_str(&changes_toml);
    Scenario::from_toml(&s).unwrap()
}

fn random_subset_of(rng: &mut ChaCha8Rng, from: &[u32], k: usize) -> Vec<u32> {
    let mut v = from.to_vec();
    v.shuffle(rng);
    v.truncate(k);
    v.sort_unstable();
    v
}

/// One chain of `len` blocks by `n` authors. Most headers are what an honest
/// delegate would write; some are perturbed at random.
pub fn random_header_chain(rng: &mut ChaCha8Rng, len: u64, n: u32, noise: f64) -> Vec<Arc<Block>> {
    let mut chain = vec![Arc::new(Block::genesis())];
    let mut last: BTreeMap<ProposerId, u64> = BTreeMap::new();
    let mut pv = 0u64;
    for h in 1..=len {
        let author = ProposerId(rng.gen_range(0..n));
        if rng.gen_bool(0.3) {
            pv = rng.gen_range(pv..h);
        }
        let mut header = LiskHeader {
            h_previous: last.get(&author).copied().unwrap_or(0),
            h_prevoted: pv,
        };
        if rng.gen_bool(noise) {
            header.h_previous = rng.gen_range(0..h);
        }
        if rng.gen_bool(noise) {
            header.h_prevoted = rng.gen_range(0..h);
        }
        let mut b = Block::child(BlockId(h), &chain[h as usize - 1], author, h);
        b.header = Some(header);
        last.insert(author, h);
        chain.push(Arc::new(b));
    }
    chain
}
