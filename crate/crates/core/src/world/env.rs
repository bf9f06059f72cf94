use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::GRID_ROOM_PREFIX;
use super::{Family, Layout, Skill, TaskInstance, Template, World};

pub(crate) const CLEAN_OBJECTS: &[&str] = &[
    "bowl", "mug", "apple", "plate", "cup", "egg", "potato", "tomato", "lettuce", "spoon", "fork",
    "pan",
];
pub(crate) const CLEAN_TARGETS: &[&str] = &[
    "fridge",
    "sidetable",
    "diningtable",
    "coffeetable",
    "dresser",
    "microwave",
    "garbagecan",
    "armchair",
];
const SEARCH_SPOTS: &[&str] = &["countertop", "cabinet", "drawer", "shelf"];
const CLEAN_ROOM: &str = "You are in the middle of a room. Looking quickly around you, you see a cabinet, a countertop, a drawer, a shelf and a sinkbasin.";

pub(crate) const GRID_COLORS: &[&str] = &["red", "green", "blue", "purple", "yellow", "grey"];
pub(crate) const GRID_OBJECTS: &[&str] = &["ball", "box", "key"];
const GRID_FEATURES: &[&str] = &[
    "a closed door directly in front",
    "a dead end to the right",
    "an empty corridor ahead",
    "two doors side by side",
    "a wall on the left",
    "a narrow passage behind you",
    "a long hallway stretching north",
    "a small alcove to the east",
    "an open doorway far away",
    "a cluttered corner nearby",
    "a dark room beyond a gap",
    "a bright window high above",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Difficulty cut-offs below which the no-memory agent knows an instance's
/// critical skill, one per (world, family).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineThresholds {
    pub cleanplace_a: f64,
    pub cleanplace_b: f64,
    pub gridfind_a: f64,
    pub gridfind_b: f64,
}

impl Default for BaselineThresholds {
    /// Frozen by simulating the no-memory agent on the seed-42 test sets.
    fn default() -> Self {
        Self {
            cleanplace_a: 0.95,
            cleanplace_b: 0.54,
            gridfind_a: 0.70,
            gridfind_b: 0.49,
        }
    }
}

impl BaselineThresholds {
    pub fn get(&self, world: World, family: Family) -> f64 {
        match (world, family) {
            (World::Cleanplace, Family::A) => self.cleanplace_a,
            (World::Cleanplace, Family::B) => self.cleanplace_b,
            (World::Gridfind, Family::A) => self.gridfind_a,
            (World::Gridfind, Family::B) => self.gridfind_b,
        }
    }

    pub fn set(&mut self, world: World, family: Family, value: f64) {
        match (world, family) {
            (World::Cleanplace, Family::A) => self.cleanplace_a = value,
            (World::Cleanplace, Family::B) => self.cleanplace_b = value,
            (World::Gridfind, Family::A) => self.gridfind_a = value,
            (World::Gridfind, Family::B) => self.gridfind_b = value,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit seed from a base seed and a label.
pub(crate) fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the base seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(seed))
}

/// Deterministic task stream for one (world, family, split).
///
/// Difficulties are a shuffled uniform grid `(i + 0.5) / n`, so a threshold
/// `t` leaves the critical skill known for `round(t * n)` instances.
pub fn generate_tasks(
    world: World,
    family: Family,
    n: usize,
    seed: u64,
    split: Split,
) -> Vec<TaskInstance> {
    let label = format!("{}-{}-{}", world, family, split.as_str());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &label));
    let mut difficulty: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    difficulty.shuffle(&mut rng);

    difficulty
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let id = format!("{label}-{seed}-{i:04}");
            match world {
                World::Cleanplace => cleanplace_instance(id, family, d, &mut rng),
                World::Gridfind => gridfind_instance(id, family, d, &mut rng),
            }
        })
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn cleanplace_instance(id: String, family: Family, d: f64, rng: &mut ChaCha8Rng) -> TaskInstance {
    let object = pick(rng, CLEAN_OBJECTS);
    let target = pick(rng, CLEAN_TARGETS);
    let search_len = rng.gen_range(1..=SEARCH_SPOTS.len() as u8);
    let (template, instruction, required, critical) = match family {
        Family::A => (
            Template::Put,
            format!("put some {object} in {target}"),
            vec![Skill::Locate, Skill::Place],
            Skill::Locate,
        ),
        Family::B => (
            Template::CleanPut,
            format!("put a clean {object} in {target}"),
            vec![Skill::Locate, Skill::CleanStep, Skill::Place],
            Skill::CleanStep,
        ),
    };
    TaskInstance {
        id,
        world: World::Cleanplace,
        family,
        template,
        instruction,
        initial_observation: CLEAN_ROOM.to_string(),
        required_skills: required,
        critical_skill: critical,
        difficulty: d,
        object: object.to_string(),
        target: target.to_string(),
        layout: Layout {
            search_len,
            approach_len: 0,
            turn_len: 0,
        },
    }
}

fn gridfind_instance(id: String, family: Family, d: f64, rng: &mut ChaCha8Rng) -> TaskInstance {
    let color = pick(rng, GRID_COLORS);
    let object = pick(rng, GRID_OBJECTS);
    let f1 = rng.gen_range(0..GRID_FEATURES.len());
    let mut f2 = rng.gen_range(0..GRID_FEATURES.len() - 1);
    if f2 >= f1 {
        f2 += 1;
    }
    let layout = Layout {
        search_len: rng.gen_range(1..=3),
        approach_len: rng.gen_range(1..=2),
        turn_len: rng.gen_range(0..=2),
    };
    let template = match family {
        Family::A => [Template::GoTo, Template::PickUp, Template::OpenDoor][rng.gen_range(0..3)],
        Family::B => Template::Find,
    };
    let (instruction, object, required, critical) = match template {
        Template::GoTo => (
            format!("go to the {color} {object}"),
            object,
            vec![Skill::Orient, Skill::ApproachObject],
            Skill::ApproachObject,
        ),
        Template::PickUp => (
            format!("pick up the {color} {object}"),
            object,
            vec![Skill::Orient, Skill::ApproachObject, Skill::PickUp],
            Skill::PickUp,
        ),
        Template::OpenDoor => (
            format!("open the {color} door"),
            "door",
            vec![Skill::Orient, Skill::OpenDoor],
            Skill::OpenDoor,
        ),
        _ => (
            format!("find the {color} {object}"),
            object,
            vec![Skill::ScanRooms, Skill::ApproachObject],
            Skill::ScanRooms,
        ),
    };
    TaskInstance {
        id,
        world: World::Gridfind,
        family,
        template,
        instruction,
        initial_observation: format!(
            "{GRID_ROOM_PREFIX}{} and {}.",
            GRID_FEATURES[f1], GRID_FEATURES[f2]
        ),
        required_skills: required,
        critical_skill: critical,
        difficulty: d,
        object: object.to_string(),
        target: color.to_string(),
        layout,
    }
}

/// One primitive action and the environment's normal response to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Action {
    pub text: String,
    pub observation: String,
}

/// Primitive actions that carry out `skill` on `inst`; the last one completes it.
pub(crate) fn skill_actions(inst: &TaskInstance, skill: Skill) -> Vec<Action> {
    let act = |text: String, observation: String| Action { text, observation };
    let x = inst.object.as_str();
    let y = inst.target.as_str();
    let lay = &inst.layout;
    match skill {
        Skill::Locate => {
            let found = usize::from(lay.search_len.max(1)) - 1;
            let mut v: Vec<Action> = SEARCH_SPOTS[..found]
                .iter()
                .map(|s| {
                    act(
                        format!("go to {s} 1"),
                        format!("On the {s} 1, you see nothing useful."),
                    )
                })
                .collect();
            let spot = SEARCH_SPOTS[found];
            v.push(act(
                format!("go to {spot} 1"),
                format!("On the {spot} 1, you see a {x} 1."),
            ));
            v.push(act(
                format!("take {x} 1 from {spot} 1"),
                format!("You pick up the {x} 1 from the {spot} 1."),
            ));
            v
        }
        Skill::CleanStep => vec![
            act(
                "go to sinkbasin 1".into(),
                "On the sinkbasin 1, you see a faucet.".into(),
            ),
            act(
                format!("clean {x} 1 with sinkbasin 1"),
                format!("You clean the {x} 1 using the sinkbasin 1."),
            ),
        ],
        Skill::Place => vec![
            act(format!("go to {y} 1"), format!("You arrive at the {y} 1.")),
            act(
                format!("put {x} 1 in {y} 1"),
                format!("You put the {x} 1 in the {y} 1."),
            ),
        ],
        Skill::Orient => {
            let mut v: Vec<Action> = (0..lay.turn_len)
                .map(|_| act("turn left".into(), "You turn left and see a wall.".into()))
                .collect();
            v.push(act("face forward".into(), "You face forward.".into()));
            v
        }
        Skill::ScanRooms => {
            let rooms = lay.search_len.max(1);
            let mut v = Vec::new();
            for r in 1..=rooms {
                v.push(act(
                    format!("go through door {r}"),
                    format!("You step into room {r}."),
                ));
                let seen = if r == rooms {
                    format!("Room {r} holds the {y} {x}.")
                } else {
                    format!("Room {r} is empty.")
                };
                v.push(act(format!("scan room {r}"), seen));
            }
            v
        }
        Skill::ApproachObject => {
            let mut v = forward_moves(lay.approach_len);
            v.push(act(
                format!("approach the {y} {x}"),
                format!("You are next to the {y} {x}."),
            ));
            v
        }
        Skill::PickUp => vec![act(
            format!("pick up the {y} {x}"),
            format!("You pick up the {y} {x}."),
        )],
        Skill::OpenDoor => {
            let mut v = forward_moves(lay.approach_len);
            v.push(act(
                format!("open the {y} door"),
                format!("The {y} door swings open."),
            ));
            v
        }
    }
}

fn forward_moves(n: u8) -> Vec<Action> {
    (0..n.max(1))
        .map(|_| Action {
            text: "move forward".into(),
            observation: "You move forward.".into(),
        })
        .collect()
}
