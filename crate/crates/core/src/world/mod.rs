//! Two scripted micro-worlds and a rule-based agent that reads memory.
//!
//! `cleanplace` pairs "put X in Y" (family A) with "put a clean X in Y"
//! (family B): the B procedure is the A procedure with a cleaning step
//! inserted before placing. `gridfind` pairs three heterogeneous navigation
//! sub-tasks (family A) with homogeneous "find the X" searches (family B).

mod agent;
mod env;
mod schema;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use agent::{
    apply_guidance, baseline_rate, calibrate_threshold, run_episode, AgentState, EpisodeParams,
    EpisodeRecord, Guidance,
};
pub use env::{generate_tasks, BaselineThresholds, Split};
pub use schema::{
    SkillSchema, SkillSpec, FAILURE_MARKER, GENERIC_LESSON, GENERIC_WHEN, SUCCESS_MARKER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum World {
    Cleanplace,
    Gridfind,
}

impl World {
    pub fn as_str(self) -> &'static str {
        match self {
            World::Cleanplace => "cleanplace",
            World::Gridfind => "gridfind",
        }
    }
}

impl fmt::Display for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for World {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cleanplace" => Ok(World::Cleanplace),
            "gridfind" => Ok(World::Gridfind),
            other => Err(format!("unknown world {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::A => "A",
            Family::B => "B",
        }
    }

    pub fn other(self) -> Family {
        match self {
            Family::A => Family::B,
            Family::B => Family::A,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Locate,
    CleanStep,
    Place,
    Orient,
    ScanRooms,
    ApproachObject,
    PickUp,
    OpenDoor,
}

impl Skill {
    pub fn as_str(self) -> &'static str {
        match self {
            Skill::Locate => "locate",
            Skill::CleanStep => "clean_step",
            Skill::Place => "place",
            Skill::Orient => "orient",
            Skill::ScanRooms => "scan_rooms",
            Skill::ApproachObject => "approach_object",
            Skill::PickUp => "pick_up",
            Skill::OpenDoor => "open_door",
        }
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Instruction template an instance was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Put,
    CleanPut,
    GoTo,
    PickUp,
    OpenDoor,
    Find,
}

/// Instance-specific environment details that stretch or shorten episodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// cleanplace: stops before the object turns up. gridfind: rooms to scan.
    pub search_len: u8,
    /// gridfind: forward moves before reaching an object or door.
    pub approach_len: u8,
    /// gridfind: left turns before facing forward.
    pub turn_len: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub world: World,
    pub family: Family,
    pub template: Template,
    pub instruction: String,
    pub initial_observation: String,
    pub required_skills: Vec<Skill>,
    /// The one skill the no-memory agent may be missing.
    pub critical_skill: Skill,
    pub difficulty: f64,
    /// Object noun (cleanplace, gridfind).
    pub object: String,
    /// Target receptacle (cleanplace) or colour (gridfind).
    pub target: String,
    pub layout: Layout,
}

impl TaskInstance {
    /// Task-family label used as provenance on stored units.
    pub fn task_label(&self) -> &'static str {
        self.family.as_str()
    }
}
