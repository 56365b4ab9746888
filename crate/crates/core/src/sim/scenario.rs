//! Declarative scenario files (TOML).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{DecisionThreshold, ProposerId, Weight, MAX_PROPOSERS};
use crate::dynamics::{ChangeKind, DynamicsError, ProposerSet, RoundSchedule, SetChange};
use crate::lisk::LiskConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "general", alias = "general-framework")]
    General,
    #[serde(rename = "lisk", alias = "lisk-bft")]
    Lisk,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::General => "general",
            Mode::Lisk => "lisk",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "general" | "general-framework" => Ok(Mode::General),
            "lisk" | "lisk-bft" => Ok(Mode::Lisk),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    /// Post-GST delivery bound, in ticks.
    pub delta: u64,
    #[serde(default)]
    pub gst: u64,
    /// Defaults to `2 * delta + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_duration: Option<u64>,
}

impl ClockConfig {
    pub fn slot_duration(&self) -> u64 {
        self.slot_duration.unwrap_or(2 * self.delta + 1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Largest pre-GST delay; defaults to `3 * delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delay: Option<u64>,
    /// Probability that a pre-GST message is lost until GST, as `"a/b"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_rate: Option<Weight>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub id: u32,
    pub weight: Weight,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposerConfig {
    /// `n` proposers with ids `0..n` and equal weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    /// Explicit members with rational weights summing to one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<MemberSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermutationOverride {
    pub round: u64,
    pub order: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Blocks per round; defaults to 101 in Lisk mode and to the initial
    /// set size otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_length: Option<u64>,
    /// Activation delay in rounds; defaults to 2 in Lisk mode, else 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<u64>,
    /// Lisk vote window; defaults to three rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<SetChange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub permutation: Vec<PermutationOverride>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    #[serde(default = "DecisionThreshold::two_thirds")]
    pub default: DecisionThreshold,
    /// Per-proposer thresholds keyed by id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_proposer: BTreeMap<String, DecisionThreshold>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            default: DecisionThreshold::two_thirds(),
            per_proposer: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Honest,
    /// Sends nothing from `crash_at` (default: start) onward.
    Crashed,
    /// Two sibling blocks per owned slot, sent to disjoint halves.
    Equivocate,
    /// Reports an `h_previous` below its true maximum (Lisk only).
    Understate,
    /// Keeps a private chain until `release_at`.
    Withhold,
    /// Builds and votes on every partition side with side-local history.
    SplitVote,
}

impl BehaviorKind {
    pub fn is_byzantine(self) -> bool {
        !matches!(self, BehaviorKind::Honest | BehaviorKind::Crashed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorSpec {
    pub kind: BehaviorKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proposers: Vec<u32>,
    /// Half-open id range `[from, to)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release_at: Option<u64>,
}

impl BehaviorSpec {
    pub fn ids(&self) -> Vec<u32> {
        let mut out = self.proposers.clone();
        if let Some([a, b]) = self.range {
            out.extend(a..b);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub groups: Vec<Vec<u32>>,
    /// Messages between groups sent before this tick wait for GST.
    pub until: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    pub max_height: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ticks: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub clock: ClockConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    pub proposers: ProposerConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub behaviors: Vec<BehaviorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    pub stop: StopConfig,
}

/// Per-node behavior after resolving the scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Behavior {
    pub kind: BehaviorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release_at: Option<u64>,
}

impl Behavior {
    pub const HONEST: Behavior = Behavior {
        kind: BehaviorKind::Honest,
        crash_at: None,
        release_at: None,
    };
}

/// A validated scenario with derived quantities.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub initial: ProposerSet,
    /// Every simulated node: initial members and later joiners.
    pub nodes: Vec<ProposerId>,
    pub behaviors: BTreeMap<ProposerId, Behavior>,
    pub thresholds: BTreeMap<ProposerId, DecisionThreshold>,
    pub group_of: BTreeMap<ProposerId, usize>,
    pub schedule: RoundSchedule,
    pub lisk: LiskConfig,
    pub slot_duration: u64,
    pub max_delay: u64,
    pub drop_rate: Ratio<u128>,
}

impl Resolved {
    pub fn behavior(&self, p: ProposerId) -> Behavior {
        self.behaviors.get(&p).copied().unwrap_or(Behavior::HONEST)
    }

    pub fn is_honest(&self, p: ProposerId) -> bool {
        !self.behavior(p).kind.is_byzantine()
    }

    pub fn threshold(&self, p: ProposerId) -> DecisionThreshold {
        self.thresholds
            .get(&p)
            .copied()
            .unwrap_or(self.scenario.thresholds.default)
    }

    /// Least member count strictly above two thirds of the initial set.
    pub fn quorum_count(&self) -> usize {
        crate::dynamics::least_count_above_two_thirds(self.initial.len())
    }

    /// Blocks after the reference block within which a block must be
    /// finalized. General mode allows one full round.
    pub fn default_deadline(&self) -> u64 {
        match self.scenario.mode {
            Mode::Lisk => self.lisk.window - 1,
            Mode::General => self.initial.len() as u64,
        }
    }
}

fn id(i: u32) -> Result<ProposerId, ScenarioError> {
    if i as usize >= MAX_PROPOSERS {
        return invalid(format!("proposer id {i} exceeds {}", MAX_PROPOSERS - 1));
    }
    Ok(ProposerId(i))
}

/// Integer stakes proportional to rational weights.
pub fn stakes_from_weights(ws: &[Weight]) -> Vec<u64> {
    let l = ws
        .iter()
        .fold(1u128, |acc, w| num_integer::lcm(acc, w.denom()));
    ws.iter()
        .map(|w| (w.numer() * (l / w.denom())) as u64)
        .collect()
}

impl Scenario {
    pub fn from_toml(s: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        let initial = match (&self.proposers.n, self.proposers.members.is_empty()) {
            (Some(n), true) => {
                if *n == 0 {
                    return invalid("proposers.n must be positive");
                }
                id(n - 1)?;
                ProposerSet::uniform(*n)
            }
            (None, false) => {
                let ws: Vec<Weight> = self.proposers.members.iter().map(|m| m.weight).collect();
                let sum = ws
                    .iter()
                    .fold(Ratio::<u128>::from_integer(0), |a, w| a + w.ratio());
                if sum != Ratio::from_integer(1) {
                    return invalid(format!("member weights sum to {sum}, not 1"));
                }
                let stakes = stakes_from_weights(&ws);
                let mut members = Vec::new();
                for (m, s) in self.proposers.members.iter().zip(stakes) {
                    members.push((id(m.id)?, s));
                }
                ProposerSet::new(members, 0)?
            }
            _ => return invalid("give exactly one of proposers.n and proposers.members"),
        };

        let mut nodes: BTreeSet<ProposerId> = initial.ids().collect();
        let mut change_ids = BTreeSet::new();
        for c in &self.dynamics.changes {
            if !change_ids.insert(c.id) {
                return invalid(format!("change id {} used twice", c.id));
            }
            if let ChangeKind::Join { proposer, .. } = c.kind {
                nodes.insert(id(proposer.0)?);
            }
        }
        let nodes: Vec<ProposerId> = nodes.into_iter().collect();
        let known = |p: u32| nodes.contains(&ProposerId(p));

        if self.clock.slot_duration() < 2 * self.clock.delta + 1 {
            return invalid("slot_duration must be at least 2 * delta + 1");
        }
        if self.stop.max_height == 0 {
            return invalid("stop.max_height must be positive");
        }

        let (m_default, d_default) = match self.mode {
            Mode::Lisk => (101, 2),
            Mode::General => (initial.len() as u64, 0),
        };
        let m = self.dynamics.round_length.unwrap_or(m_default);
        let delay = self.dynamics.delay.unwrap_or(d_default);
        let window = self.dynamics.window.unwrap_or(3 * m);
        if window == 0 {
            return invalid("dynamics.window must be positive");
        }
        let mut schedule = RoundSchedule::new(m, delay, self.seed, initial.clone())?;
        for o in &self.dynamics.permutation {
            let order = o
                .order
                .iter()
                .map(|&p| id(p))
                .collect::<Result<Vec<_>, _>>()?;
            schedule.overrides.insert(o.round, order);
        }

        let mut behaviors = BTreeMap::new();
        for b in &self.behaviors {
            if b.kind == BehaviorKind::Understate && self.mode != Mode::Lisk {
                return invalid("understate applies to Lisk mode only");
            }
            if b.kind == BehaviorKind::Withhold && b.release_at.is_none() {
                return invalid("withhold needs release_at");
            }
            if b.kind == BehaviorKind::SplitVote && self.partition.is_none() {
                return invalid("split_vote needs a partition");
            }
            for p in b.ids() {
                if !known(p) {
                    return invalid(format!("behavior for unknown proposer {p}"));
                }
                let beh = Behavior {
                    kind: b.kind,
                    crash_at: b.crash_at,
                    release_at: b.release_at,
                };
                if behaviors.insert(ProposerId(p), beh).is_some() {
                    return invalid(format!("proposer {p} has two behaviors"));
                }
            }
        }

        let mut thresholds = BTreeMap::new();
        for (k, t) in &self.thresholds.per_proposer {
            let p: u32 = k
                .parse()
                .map_err(|_| ScenarioError::Invalid(format!("threshold key {k:?} is not an id")))?;
            if !known(p) {
                return invalid(format!("threshold for unknown proposer {p}"));
            }
            thresholds.insert(ProposerId(p), *t);
        }

        let mut group_of = BTreeMap::new();
        if let Some(part) = &self.partition {
            if part.until > self.clock.gst {
                return invalid("partition must end no later than GST");
            }
            for (g, members) in part.groups.iter().enumerate() {
                for &p in members {
                    if !known(p) {
                        return invalid(format!("partition lists unknown proposer {p}"));
                    }
                    if group_of.insert(ProposerId(p), g).is_some() {
                        return invalid(format!("proposer {p} is in two partition groups"));
                    }
                }
            }
        }
        for c in &self.dynamics.changes {
            if let Some(g) = c.group {
                if self.partition.as_ref().is_none_or(|p| g >= p.groups.len()) {
                    return invalid(format!("change {} names unknown group {g}", c.id));
                }
            }
        }

        Ok(Resolved {
            scenario: self.clone(),
            initial,
            nodes,
            behaviors,
            thresholds,
            group_of,
            schedule,
            lisk: LiskConfig {
                round_length: m,
                window,
                delay,
            },
            slot_duration: self.clock.slot_duration(),
            max_delay: self.network.max_delay.unwrap_or(3 * self.clock.delta),
            drop_rate: self
                .network
                .drop_rate
                .map_or(Ratio::from_integer(0), |w| w.ratio()),
        })
    }
}
