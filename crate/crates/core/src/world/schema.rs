use super::{Skill, World};
use crate::representation::{Actor, RawTrajectory};

pub const SUCCESS_MARKER: &str = "Task completed.";
pub const FAILURE_MARKER: &str = "Task failed.";

/// Static description of one skill: how it shows up in action text, the
/// phrase that teaches it, and the text templates used when distilling it.
#[derive(Debug, Clone, Copy)]
pub struct SkillSpec {
    pub skill: Skill,
    /// Gerund phrase used in failure lessons.
    pub label: &'static str,
    /// Prefix of the action that completes the skill.
    pub completion: &'static str,
    /// Phrase whose presence in an insight teaches the skill.
    pub trigger: &'static str,
    pub lesson: &'static str,
    /// Applicability template; `{s}` is replaced by the episode's situation.
    pub when: &'static str,
}

#[derive(Debug)]
pub struct SkillSchema {
    pub world: World,
    pub skills: &'static [SkillSpec],
    /// Skills that raw trajectories carry as literal, copyable action scripts.
    pub scripted: &'static [Skill],
}

const CLEANPLACE_SKILLS: &[SkillSpec] = &[
    SkillSpec {
        skill: Skill::Locate,
        label: "fetching the object",
        completion: "take ",
        trigger: "search the receptacles one by one",
        lesson: "If the object is not visible, search the receptacles one by one until it turns up.",
        when: "When the object is not in hand yet and {s}",
    },
    SkillSpec {
        skill: Skill::CleanStep,
        label: "cleaning the object",
        completion: "clean ",
        trigger: "clean it at the sinkbasin",
        lesson: "When the goal asks for a clean object, clean it at the sinkbasin before placing it.",
        when: "When the object in hand must be clean before it is placed and {s}",
    },
    SkillSpec {
        skill: Skill::Place,
        label: "placing the object",
        completion: "put ",
        trigger: "carry it straight to the target receptacle",
        lesson: "Once the object is in hand, carry it straight to the target receptacle and put it there.",
        when: "When the object is in hand and the target receptacle is known and {s}",
    },
];

const GRIDFIND_SKILLS: &[SkillSpec] = &[
    SkillSpec {
        skill: Skill::Orient,
        label: "facing forward",
        completion: "face ",
        trigger: "face forward before moving",
        lesson: "Always face forward before moving so the initial view stays your spatial anchor.",
        when: "When the layout around you is unclear, with {s}, before any move",
    },
    SkillSpec {
        skill: Skill::ScanRooms,
        label: "scanning rooms",
        completion: "scan ",
        trigger: "scan each room in turn",
        lesson: "If the target is not in view, scan each room in turn instead of wandering.",
        when: "When {s}, go to the door, open the door and find the target",
    },
    SkillSpec {
        skill: Skill::ApproachObject,
        label: "walking up to the target",
        completion: "approach ",
        trigger: "approach the target directly",
        lesson: "Once the target is visible, approach the target directly without detours.",
        when: "When you must go to a target that is already in view, with {s}",
    },
    SkillSpec {
        skill: Skill::PickUp,
        label: "picking the item up",
        completion: "pick up ",
        trigger: "pick up the object once adjacent",
        lesson:
            "Walk up to the item and pick up the object once adjacent; grabbing from afar fails.",
        when: "When you need to pick up an item right next to you, with {s}",
    },
    SkillSpec {
        skill: Skill::OpenDoor,
        label: "opening a door",
        completion: "open ",
        trigger: "open the door in front of you",
        lesson: "Doors do not open from afar; move up and open the door in front of you.",
        when: "When a closed door blocks the way and you must open it, with {s}",
    },
];

static CLEANPLACE: SkillSchema = SkillSchema {
    world: World::Cleanplace,
    skills: CLEANPLACE_SKILLS,
    scripted: &[Skill::Locate, Skill::CleanStep, Skill::Place],
};

static GRIDFIND: SkillSchema = SkillSchema {
    world: World::Gridfind,
    skills: GRIDFIND_SKILLS,
    scripted: &[
        Skill::Orient,
        Skill::ScanRooms,
        Skill::ApproachObject,
        Skill::PickUp,
        Skill::OpenDoor,
    ],
};

pub const GENERIC_LESSON: &str =
    "Fall back on a systematic search of every reachable place before giving up.";
pub const GENERIC_WHEN: &str = "When no specific strategy is known yet for this kind of task";

pub(crate) const GRID_ROOM_PREFIX: &str = "You are in a grid room. You see ";

impl SkillSchema {
    pub fn for_world(world: World) -> &'static SkillSchema {
        match world {
            World::Cleanplace => &CLEANPLACE,
            World::Gridfind => &GRIDFIND,
        }
    }

    pub fn spec(&self, skill: Skill) -> Option<&SkillSpec> {
        self.skills.iter().find(|s| s.skill == skill)
    }

    pub fn skill_ids(&self) -> impl Iterator<Item = Skill> + '_ {
        self.skills.iter().map(|s| s.skill)
    }

    /// Skill completed by an action, if the action is a completion action.
    pub fn skill_of_action(&self, action: &str) -> Option<Skill> {
        self.skills
            .iter()
            .find(|s| action.starts_with(s.completion))
            .map(|s| s.skill)
    }

    /// Skills whose trigger phrase occurs in `text`, in schema order.
    pub fn triggers_in(&self, text: &str) -> Vec<Skill> {
        let lower = text.to_lowercase();
        self.skills
            .iter()
            .filter(|s| lower.contains(s.trigger))
            .map(|s| s.skill)
            .collect()
    }

    /// Skill sequence of a rendered raw trajectory (`[Agent]: ...` lines).
    /// Repeated completions of one skill (scanning several rooms) count once.
    pub fn script_from_raw_value(&self, value_text: &str) -> Vec<Skill> {
        let mut script: Vec<Skill> = value_text
            .lines()
            .filter_map(|l| l.strip_prefix(Actor::Agent.tag()))
            .filter_map(|a| self.skill_of_action(a.trim_start()))
            .collect();
        script.dedup();
        script
    }

    /// Short description of the episode's circumstances, used to fill
    /// applicability templates.
    pub fn situation(&self, traj: &RawTrajectory) -> String {
        match self.world {
            World::Cleanplace => {
                let mut stops = 0;
                for turn in traj.steps.iter().filter(|t| t.actor == Actor::Agent) {
                    if turn.text.starts_with("go to ") {
                        stops += 1;
                    }
                    if let Some(rest) = turn.text.strip_prefix("take ") {
                        let place = rest
                            .split(" from ")
                            .nth(1)
                            .and_then(|p| p.split_whitespace().next())
                            .unwrap_or("receptacle");
                        let plural = if stops == 1 { "" } else { "s" };
                        return format!("it turned up on the {place} after {stops} stop{plural}");
                    }
                }
                "the object has not turned up yet".to_string()
            }
            World::Gridfind => traj
                .initial_observation
                .strip_prefix(GRID_ROOM_PREFIX)
                .map(|s| s.trim_end_matches('.').to_string())
                .unwrap_or_else(|| "an unfamiliar room around you".to_string()),
        }
    }

    pub fn when_to_use(&self, skill: Skill, situation: &str) -> String {
        self.spec(skill)
            .map(|s| s.when.replace("{s}", situation))
            .unwrap_or_else(|| GENERIC_WHEN.to_string())
    }

    pub fn avoid_lesson(&self, skill: Skill) -> String {
        let label = self.spec(skill).map_or("this step", |s| s.label);
        format!("Avoid {label} too early: the episode failed right after it.")
    }
}
