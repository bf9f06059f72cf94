//! Experience pool of `(key, value)` memory units.
//!
//! A pool is created empty and is append-only. How one finished episode turns
//! into units depends on the pool's [`Representation`] and [`Condition`]:
//! a raw trajectory always becomes one unit, an insight list becomes one
//! bundle under [`Condition::Agg`] and one unit per insight otherwise.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::representation::{serialize_raw, RawTrajectory};
use crate::retrieval::Bm25Index;

/// Separator line placed between insights inside a bundle.
pub const BUNDLE_SEPARATOR: &str = "---";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Task-level bundle, single retrieval before the episode.
    Agg,
    /// One unit per insight, single retrieval before the episode.
    Ind,
    /// One unit per insight, re-queried every `step_interval` steps.
    Step,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Agg, Condition::Ind, Condition::Step];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Agg => "agg",
            Condition::Ind => "ind",
            Condition::Step => "step",
        }
    }

    /// Retrieval depth used when the config does not override it.
    pub fn default_top_k(self) -> usize {
        match self {
            Condition::Agg => 1,
            Condition::Ind | Condition::Step => 3,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Raw,
    Insight,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Raw => "raw",
            Representation::Insight => "insight",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    RawTrajectory,
    InsightBundle,
    InsightSingle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        matches!(self, Outcome::Success)
    }
}

/// A distilled lesson plus the situation it applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insight {
    pub body: String,
    pub when_to_use: String,
}

impl Insight {
    pub fn new(body: impl Into<String>, when_to_use: impl Into<String>) -> Self {
        Self {
            body: body.into(),
            when_to_use: when_to_use.into(),
        }
    }
}

/// One stored `(key, value)` entry with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryUnit {
    pub id: String,
    pub key_text: String,
    pub value_text: String,
    pub kind: UnitKind,
    pub source_task: String,
    pub source_episode: String,
    /// Outcome of the source episode. Stored, never used as a retrieval weight.
    pub outcome: Outcome,
    pub insert_seq: u64,
}

/// What an episode contributes to the pool.
#[derive(Debug, Clone)]
pub enum Payload {
    Raw(RawTrajectory),
    Insights(Vec<Insight>),
}

/// Provenance shared by every unit created from one episode.
#[derive(Debug, Clone)]
pub struct EpisodeSource<'a> {
    pub instruction: &'a str,
    pub source_task: &'a str,
    pub episode_id: &'a str,
    pub outcome: Outcome,
}

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("empty payload: nothing to insert")]
    EmptyPayload,
    #[error("payload does not match pool representation {0}")]
    PayloadMismatch(Representation),
    #[error("snapshot is malformed: {0}")]
    Snapshot(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    condition: Condition,
    representation: Representation,
    unit_count: usize,
}

/// Append-only store of memory units with an incrementally maintained BM25
/// index over unit keys.
#[derive(Debug, Clone)]
pub struct ExperiencePool {
    condition: Condition,
    representation: Representation,
    units: Vec<MemoryUnit>,
    index: Bm25Index,
    next_seq: u64,
}

impl ExperiencePool {
    pub fn new(condition: Condition, representation: Representation) -> Self {
        Self {
            condition,
            representation,
            units: Vec::new(),
            index: Bm25Index::default(),
            next_seq: 0,
        }
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn units(&self) -> &[MemoryUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    pub fn get(&self, id: &str) -> Option<&MemoryUnit> {
        self.position(id).map(|i| &self.units[i])
    }

    pub(crate) fn position(&self, id: &str) -> Option<usize> {
        // ids are "m" + zero-padded insert_seq, so the common case is O(1)
        let guess = id
            .strip_prefix('m')
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&i| i < self.units.len() && self.units[i].id == id);
        guess.or_else(|| self.units.iter().position(|u| u.id == id))
    }

    /// Turns one finished episode into units and appends them.
    ///
    /// Returns the ids of the new units in insertion order. An empty payload
    /// inserts nothing and is reported as [`MemoryError::EmptyPayload`].
    pub fn insert_episode(
        &mut self,
        source: &EpisodeSource<'_>,
        payload: &Payload,
    ) -> Result<Vec<String>, MemoryError> {
        let drafts: Vec<(String, String, UnitKind)> = match (self.representation, payload) {
            (Representation::Raw, Payload::Raw(traj)) => {
                let (key, value) = serialize_raw(traj).map_err(|_| MemoryError::EmptyPayload)?;
                vec![(key, value, UnitKind::RawTrajectory)]
            }
            (Representation::Insight, Payload::Insights(insights)) => {
                if insights.is_empty() {
                    return Err(MemoryError::EmptyPayload);
                }
                match self.condition {
                    Condition::Agg => {
                        let sep = format!("\n{BUNDLE_SEPARATOR}\n");
                        let value = insights
                            .iter()
                            .map(|i| i.body.as_str())
                            .collect::<Vec<_>>()
                            .join(&sep);
                        vec![(
                            source.instruction.to_string(),
                            value,
                            UnitKind::InsightBundle,
                        )]
                    }
                    Condition::Ind | Condition::Step => insights
                        .iter()
                        .map(|i| {
                            (
                                i.when_to_use.clone(),
                                i.body.clone(),
                                UnitKind::InsightSingle,
                            )
                        })
                        .collect(),
                }
            }
            (repr, _) => return Err(MemoryError::PayloadMismatch(repr)),
        };
        if drafts
            .iter()
            .any(|(k, v, _)| k.trim().is_empty() || v.trim().is_empty())
        {
            return Err(MemoryError::EmptyPayload);
        }

        let mut ids = Vec::with_capacity(drafts.len());
        for (key_text, value_text, kind) in drafts {
            let seq = self.next_seq;
            self.next_seq += 1;
            let unit = MemoryUnit {
                id: format!("m{seq:06}"),
                key_text,
                value_text,
                kind,
                source_task: source.source_task.to_string(),
                source_episode: source.episode_id.to_string(),
                outcome: source.outcome,
                insert_seq: seq,
            };
            ids.push(unit.id.clone());
            self.push_unit(unit);
        }
        Ok(ids)
    }

    fn push_unit(&mut self, unit: MemoryUnit) {
        self.index.add_document(&unit.key_text);
        self.units.push(unit);
    }

    /// JSONL snapshot: a header line followed by one unit per line in
    /// insertion order.
    pub fn snapshot(&self) -> String {
        let header = SnapshotHeader {
            condition: self.condition,
            representation: self.representation,
            unit_count: self.units.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for unit in &self.units {
            out.push_str(&serde_json::to_string(unit).expect("unit serializes"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a pool (index included) from [`ExperiencePool::snapshot`] output.
    pub fn restore(snapshot: &str) -> Result<Self, MemoryError> {
        let mut lines = snapshot.lines();
        let header: SnapshotHeader = lines
            .next()
            .ok_or_else(|| MemoryError::Snapshot("missing header".into()))
            .and_then(|l| {
                serde_json::from_str(l).map_err(|e| MemoryError::Snapshot(format!("header: {e}")))
            })?;
        let mut pool = ExperiencePool::new(header.condition, header.representation);
        let mut seen = HashSet::new();
        for (n, line) in lines.enumerate() {
            let unit: MemoryUnit = serde_json::from_str(line)
                .map_err(|e| MemoryError::Snapshot(format!("unit line {}: {e}", n + 2)))?;
            if !seen.insert(unit.id.clone()) {
                return Err(MemoryError::Snapshot(format!("duplicate id {}", unit.id)));
            }
            if unit.insert_seq < pool.next_seq {
                return Err(MemoryError::Snapshot(format!(
                    "insert_seq not increasing at {}",
                    unit.id
                )));
            }
            if !pool.accepts_kind(unit.kind) {
                return Err(MemoryError::Snapshot(format!(
                    "kind {:?} not allowed under {}/{}",
                    unit.kind, pool.condition, pool.representation
                )));
            }
            pool.next_seq = unit.insert_seq + 1;
            pool.push_unit(unit);
        }
        if pool.units.len() != header.unit_count {
            return Err(MemoryError::Snapshot(format!(
                "header says {} units, found {}",
                header.unit_count,
                pool.units.len()
            )));
        }
        Ok(pool)
    }

    /// Whether a unit of `kind` may live in this pool.
    pub fn accepts_kind(&self, kind: UnitKind) -> bool {
        matches!(
            (self.representation, self.condition, kind),
            (Representation::Raw, _, UnitKind::RawTrajectory)
                | (
                    Representation::Insight,
                    Condition::Agg,
                    UnitKind::InsightBundle
                )
                | (
                    Representation::Insight,
                    Condition::Ind | Condition::Step,
                    UnitKind::InsightSingle
                )
        )
    }
}
