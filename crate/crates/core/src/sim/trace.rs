//! Line-delimited run records.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::blocktree::{Block, BlockId};
use crate::consensus::{DecisionThreshold, ProposerId, Vote};

use super::scenario::{Behavior, Scenario};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    /// Every event, including per-recipient block deliveries.
    #[default]
    Full,
    /// Everything the checkers need; block deliveries are left out.
    Compact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Two blocks in one slot.
    DoubleProposal,
    /// `h_previous` below the largest height proposed before.
    UnderstatedPrevious,
    /// Blocks on both sides of a partition.
    SplitProposal,
    /// Prevotes for two blocks at one height.
    ConflictingPrevote,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Header {
        scenario: Box<Scenario>,
        level: TraceLevel,
        n: usize,
        quorum: usize,
        behaviors: Vec<(ProposerId, Behavior)>,
        thresholds: Vec<(ProposerId, DecisionThreshold)>,
    },
    Proposed {
        time: u64,
        node: ProposerId,
        block: Box<Block>,
    },
    Delivered {
        time: u64,
        node: ProposerId,
        block: BlockId,
    },
    Sent {
        time: u64,
        node: ProposerId,
        votes: Vec<Vote>,
    },
    Adopted {
        time: u64,
        node: ProposerId,
        tip: BlockId,
        height: u64,
        finalized: u64,
    },
    Finalized {
        time: u64,
        node: ProposerId,
        block: BlockId,
        height: u64,
    },
    Violation {
        time: u64,
        node: ProposerId,
        kind: ViolationKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block: Option<BlockId>,
    },
    End {
        time: u64,
        blocks: u64,
        max_height: u64,
    },
}

impl TraceEvent {
    pub fn time(&self) -> u64 {
        match self {
            TraceEvent::Header { .. } => 0,
            TraceEvent::Proposed { time, .. }
            | TraceEvent::Delivered { time, .. }
            | TraceEvent::Sent { time, .. }
            | TraceEvent::Adopted { time, .. }
            | TraceEvent::Finalized { time, .. }
            | TraceEvent::Violation { time, .. }
            | TraceEvent::End { time, .. } => *time,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("trace does not start with a header")]
    MissingHeader,
}

impl Trace {
    pub fn header(&self) -> Option<&TraceEvent> {
        self.events
            .first()
            .filter(|e| matches!(e, TraceEvent::Header { .. }))
    }

    pub fn scenario(&self) -> Result<&Scenario, TraceError> {
        match self.header() {
            Some(TraceEvent::Header { scenario, .. }) => Ok(scenario),
            _ => Err(TraceError::MissingHeader),
        }
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|source| TraceError::Parse {
                line: i + 1,
                source,
            })?;
            events.push(e);
        }
        let t = Trace { events };
        t.scenario()?;
        Ok(t)
    }

    pub fn from_jsonl(s: &str) -> Result<Self, TraceError> {
        Self::read_jsonl(s.as_bytes())
    }
}
