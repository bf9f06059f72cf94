//! Episode payloads: verbatim trajectories and distilled insights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionClient, CompletionRequest};
use crate::memory::{Insight, Outcome};
use crate::world::{Skill, SkillSchema, GENERIC_LESSON, GENERIC_WHEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Agent,
    Environment,
}

impl Actor {
    pub fn tag(self) -> &'static str {
        match self {
            Actor::Agent => "[Agent]: ",
            Actor::Environment => "[Env]: ",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub actor: Actor,
    pub text: String,
}

impl Turn {
    pub fn new(actor: Actor, text: impl Into<String>) -> Self {
        Self {
            actor,
            text: text.into(),
        }
    }
}

/// The full action-observation record of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTrajectory {
    pub instruction: String,
    pub initial_observation: String,
    pub steps: Vec<Turn>,
    pub outcome: Outcome,
}

impl RawTrajectory {
    pub fn agent_actions(&self) -> impl Iterator<Item = &str> {
        self.steps
            .iter()
            .filter(|t| t.actor == Actor::Agent)
            .map(|t| t.text.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RepresentationError {
    #[error("trajectory has no agent steps")]
    EmptyTrajectory,
    #[error("completion adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("could not parse insights from completion: {0}")]
    ParseFailure(String),
}

/// `(key, value)` for a raw unit: the key is the instruction plus the initial
/// observation, the value one `[Agent]:`/`[Env]:` line per turn.
pub fn serialize_raw(traj: &RawTrajectory) -> Result<(String, String), RepresentationError> {
    if traj.agent_actions().next().is_none() {
        return Err(RepresentationError::EmptyTrajectory);
    }
    let key = if traj.initial_observation.trim().is_empty() {
        traj.instruction.clone()
    } else {
        format!("{}\n{}", traj.instruction, traj.initial_observation)
    };
    let value = traj
        .steps
        .iter()
        .map(|t| format!("{}{}", t.actor.tag(), t.text))
        .collect::<Vec<_>>()
        .join("\n");
    Ok((key, value))
}

/// Turns a finished trajectory into insights.
pub trait Abstractor {
    fn distill(&self, traj: &RawTrajectory) -> Vec<Insight>;
}

pub const RULE_DISTILL_CAP: usize = 3;
pub const LLM_DISTILL_CAP: usize = 5;

/// Deterministic distiller driven by a world's skill schema.
///
/// One insight per distinct skill exercised, in order of first use, at most
/// three. A failed episode leads with an "avoid" lesson about the skill whose
/// action ended it.
pub fn rule_distill(traj: &RawTrajectory, schema: &SkillSchema) -> Vec<Insight> {
    let mut exercised: Vec<Skill> = Vec::new();
    for action in traj.agent_actions() {
        if let Some(skill) = schema.skill_of_action(action) {
            if !exercised.contains(&skill) {
                exercised.push(skill);
            }
        }
    }
    let situation = schema.situation(traj);
    if exercised.is_empty() {
        return vec![Insight::new(GENERIC_LESSON, GENERIC_WHEN)];
    }

    let mut out = Vec::new();
    let failed = match traj.outcome {
        Outcome::Success => None,
        Outcome::Failure => traj
            .agent_actions()
            .filter_map(|a| schema.skill_of_action(a))
            .last(),
    };
    if let Some(skill) = failed {
        out.push(Insight::new(
            schema.avoid_lesson(skill),
            schema.when_to_use(skill, &situation),
        ));
    }
    for skill in exercised.into_iter().filter(|s| Some(*s) != failed) {
        if out.len() == RULE_DISTILL_CAP {
            break;
        }
        let spec = schema.spec(skill).expect("exercised skill is in schema");
        out.push(Insight::new(
            spec.lesson,
            schema.when_to_use(skill, &situation),
        ));
    }
    out
}

/// [`Abstractor`] backed by [`rule_distill`].
pub struct RuleAbstractor {
    pub schema: &'static SkillSchema,
}

impl Abstractor for RuleAbstractor {
    fn distill(&self, traj: &RawTrajectory) -> Vec<Insight> {
        rule_distill(traj, self.schema)
    }
}

/// Prompt template asset for the distillation request (v1).
pub const DISTILL_PROMPT_V1: &str = include_str!("../assets/distill_prompt_v1.txt");

pub fn render_distill_prompt(traj: &RawTrajectory) -> Result<String, RepresentationError> {
    let (_, value) = serialize_raw(traj)?;
    let outcome = match traj.outcome {
        Outcome::Success => "success",
        Outcome::Failure => "failure",
    };
    Ok(DISTILL_PROMPT_V1
        .replace("{instruction}", &traj.instruction)
        .replace("{observation}", &traj.initial_observation)
        .replace("{outcome}", outcome)
        .replace("{trajectory}", &value))
}

/// Parses `Insight N. body` blocks with an optional `When: ...` line.
pub fn parse_insights(text: &str) -> Result<Vec<Insight>, RepresentationError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines().map(str::trim) {
        if let Some(body) = strip_insight_header(line) {
            out.push((body.to_string(), String::new()));
        } else if let Some(when) = line
            .strip_prefix("When:")
            .or_else(|| line.strip_prefix("**When:**"))
        {
            if let Some(last) = out.last_mut() {
                last.1 = when.trim().to_string();
            }
        } else if !line.is_empty() {
            if let Some(last) = out.last_mut() {
                if last.1.is_empty() {
                    last.0.push(' ');
                    last.0.push_str(line);
                }
            }
        }
    }
    let insights: Vec<Insight> = out
        .into_iter()
        .filter(|(b, _)| !b.trim().is_empty())
        .take(LLM_DISTILL_CAP)
        .map(|(body, when)| {
            let when = if when.is_empty() { body.clone() } else { when };
            Insight::new(body, when)
        })
        .collect();
    if insights.is_empty() {
        return Err(RepresentationError::ParseFailure(
            "no `Insight N.` lines found".to_string(),
        ));
    }
    Ok(insights)
}

fn strip_insight_header(line: &str) -> Option<&str> {
    let line = line.trim_start_matches("**");
    let rest = line.strip_prefix("Insight ")?;
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = rest[digits..].strip_prefix('.')?;
    Some(rest.trim_start_matches("**").trim())
}

/// Distils through a completion backend.
///
/// One request with the v1 template; a response that fails to parse is
/// retried once, after which the rule distiller is used instead.
pub fn llm_distill(
    traj: &RawTrajectory,
    client: &dyn CompletionClient,
    schema: &SkillSchema,
) -> Result<Vec<Insight>, RepresentationError> {
    let prompt = render_distill_prompt(traj)?;
    let request = CompletionRequest::new(
        "You distil agent trajectories into reusable strategy insights.",
        prompt,
    );
    for _ in 0..2 {
        let text = client
            .complete(&request)
            .map_err(|e| RepresentationError::AdapterUnavailable(e.to_string()))?;
        if let Ok(insights) = parse_insights(&text) {
            return Ok(insights);
        }
    }
    Ok(rule_distill(traj, schema))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::AdapterError;
    use crate::world::World;
    use std::cell::RefCell;

    fn turn(a: Actor, t: &str) -> Turn {
        Turn::new(a, t)
    }

    fn clean_trajectory(outcome: Outcome) -> RawTrajectory {
        RawTrajectory {
            instruction: "put a clean bowl in fridge".into(),
            initial_observation: "You are in the middle of a room.".into(),
            steps: vec![
                turn(Actor::Agent, "go to countertop 1"),
                turn(Actor::Environment, "On the countertop 1, you see a bowl 1."),
                turn(Actor::Agent, "take bowl 1 from countertop 1"),
                turn(
                    Actor::Environment,
                    "You pick up the bowl 1 from the countertop 1.",
                ),
                turn(Actor::Agent, "go to sinkbasin 1"),
                turn(Actor::Environment, "On the sinkbasin 1, you see a faucet."),
                turn(Actor::Agent, "clean bowl 1 with sinkbasin 1"),
                turn(
                    Actor::Environment,
                    "You clean the bowl 1 using the sinkbasin 1.",
                ),
                turn(Actor::Agent, "go to fridge 1"),
                turn(Actor::Environment, "You arrive at fridge 1."),
                turn(Actor::Agent, "put bowl 1 in fridge 1"),
                turn(
                    Actor::Environment,
                    "You put the bowl 1 in the fridge 1. Task completed.",
                ),
            ],
            outcome,
        }
    }

    #[test]
    fn raw_serialization_renders_each_turn() {
        let mut t = clean_trajectory(Outcome::Success);
        t.steps.truncate(4);
        let (key, value) = serialize_raw(&t).unwrap();
        assert_eq!(
            key,
            "put a clean bowl in fridge\nYou are in the middle of a room."
        );
        let lines: Vec<&str> = value.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines.iter().filter(|l| l.starts_with("[Agent]: ")).count(),
            2
        );
        assert_eq!(lines[1], "[Env]: On the countertop 1, you see a bowl 1.");
        assert_eq!(serialize_raw(&t).unwrap(), (key, value));
    }

    #[test]
    fn raw_key_without_observation_is_instruction() {
        let mut t = clean_trajectory(Outcome::Success);
        t.initial_observation.clear();
        assert_eq!(serialize_raw(&t).unwrap().0, "put a clean bowl in fridge");
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        let mut t = clean_trajectory(Outcome::Success);
        t.steps.clear();
        assert_eq!(serialize_raw(&t), Err(RepresentationError::EmptyTrajectory));
    }

    #[test]
    fn rule_distill_names_each_exercised_skill() {
        let schema = SkillSchema::for_world(World::Cleanplace);
        let insights = rule_distill(&clean_trajectory(Outcome::Success), schema);
        assert_eq!(insights.len(), 3);
        let skills: Vec<Vec<Skill>> = insights
            .iter()
            .map(|i| schema.triggers_in(&i.body))
            .collect();
        assert_eq!(
            skills,
            vec![
                vec![Skill::Locate],
                vec![Skill::CleanStep],
                vec![Skill::Place]
            ]
        );
        assert!(insights[1].body.contains("clean it at the sinkbasin"));
        assert_eq!(
            insights[0].when_to_use,
            "When the object is not in hand yet and it turned up on the countertop after 1 stop"
        );
    }

    #[test]
    fn rule_distill_single_skill_gives_one_insight() {
        let schema = SkillSchema::for_world(World::Cleanplace);
        let mut t = clean_trajectory(Outcome::Success);
        t.steps.truncate(4);
        assert_eq!(rule_distill(&t, schema).len(), 1);
    }

    #[test]
    fn rule_distill_bodies_depend_only_on_skill_sequence() {
        let schema = SkillSchema::for_world(World::Cleanplace);
        let a = clean_trajectory(Outcome::Success);
        let mut b = a.clone();
        for s in &mut b.steps {
            s.text = s.text.replace("bowl", "mug").replace("fridge", "sidetable");
        }
        b.instruction = "put a clean mug in sidetable".into();
        let ia = rule_distill(&a, schema);
        let ib = rule_distill(&b, schema);
        let bodies = |v: &[Insight]| v.iter().map(|i| i.body.clone()).collect::<Vec<_>>();
        assert_eq!(bodies(&ia), bodies(&ib));
        assert_eq!(ia, rule_distill(&a, schema));
    }

    #[test]
    fn failed_trajectory_leads_with_avoid_lesson() {
        let schema = SkillSchema::for_world(World::Cleanplace);
        let mut t = clean_trajectory(Outcome::Failure);
        // skip cleaning: locate then place, rejected at the put
        t.steps.drain(4..8);
        t.steps.last_mut().unwrap().text =
            "You put the bowl 1 in the fridge 1. The task is not complete. Task failed.".into();
        let insights = rule_distill(&t, schema);
        assert_eq!(insights.len(), 2);
        assert!(insights[0].body.starts_with("Avoid placing the object"));
        assert!(schema.triggers_in(&insights[0].body).is_empty());
        assert_eq!(schema.triggers_in(&insights[1].body), vec![Skill::Locate]);
    }

    #[test]
    fn no_skills_gives_generic_search_insight() {
        let schema = SkillSchema::for_world(World::Gridfind);
        let t = RawTrajectory {
            instruction: "find the red ball".into(),
            initial_observation: String::new(),
            steps: vec![
                turn(Actor::Agent, "wait"),
                turn(Actor::Environment, "Nothing happens."),
            ],
            outcome: Outcome::Failure,
        };
        let insights = rule_distill(&t, schema);
        assert_eq!(insights.len(), 1);
        assert!(insights[0].body.contains("systematic search"));
    }

    #[test]
    fn parse_numbered_insights() {
        let text = "Insight 1. Check countertops first.\nWhen: looking for portable objects\n\
                    Insight 2. Visit receptacles in order.\n\
                    Insight 3. Go straight to the target.\nWhen: object in hand";
        let parsed = parse_insights(text).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].when_to_use, "looking for portable objects");
        assert_eq!(parsed[1].when_to_use, parsed[1].body);
        assert_eq!(parsed[2].body, "Go straight to the target.");
    }

    #[test]
    fn parse_caps_at_five() {
        let text: String = (1..=7)
            .map(|i| format!("Insight {i}. lesson {i}\n"))
            .collect();
        let parsed = parse_insights(&text).unwrap();
        assert_eq!(parsed.len(), 5);
        assert_eq!(parsed[4].body, "lesson 5");
    }

    #[test]
    fn parse_rejects_unstructured_text() {
        assert!(matches!(
            parse_insights("I think the agent did fine."),
            Err(RepresentationError::ParseFailure(_))
        ));
    }

    struct Scripted {
        replies: RefCell<Vec<Result<String, AdapterError>>>,
        calls: RefCell<usize>,
    }

    impl CompletionClient for Scripted {
        fn complete(&self, _req: &CompletionRequest) -> Result<String, AdapterError> {
            *self.calls.borrow_mut() += 1;
            self.replies.borrow_mut().remove(0)
        }
    }

    #[test]
    fn llm_distill_parses_well_formed_reply() {
        let client = Scripted {
            replies: RefCell::new(vec![Ok(
                "Insight 1. a\nInsight 2. b\nInsight 3. c".to_string()
            )]),
            calls: RefCell::new(0),
        };
        let schema = SkillSchema::for_world(World::Cleanplace);
        let out = llm_distill(&clean_trajectory(Outcome::Success), &client, schema).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(*client.calls.borrow(), 1);
    }

    #[test]
    fn llm_distill_falls_back_after_two_bad_replies() {
        let client = Scripted {
            replies: RefCell::new(vec![Ok("garbage".into()), Ok("still garbage".into())]),
            calls: RefCell::new(0),
        };
        let schema = SkillSchema::for_world(World::Cleanplace);
        let traj = clean_trajectory(Outcome::Success);
        let out = llm_distill(&traj, &client, schema).unwrap();
        assert_eq!(out, rule_distill(&traj, schema));
        assert_eq!(*client.calls.borrow(), 2);
    }

    #[test]
    fn llm_distill_surfaces_unavailable_adapter() {
        let client = Scripted {
            replies: RefCell::new(vec![Err(AdapterError::Timeout(1.0))]),
            calls: RefCell::new(0),
        };
        let schema = SkillSchema::for_world(World::Cleanplace);
        let err = llm_distill(&clean_trajectory(Outcome::Success), &client, schema).unwrap_err();
        assert!(matches!(err, RepresentationError::AdapterUnavailable(_)));
    }

    #[test]
    fn prompt_template_is_filled() {
        let p = render_distill_prompt(&clean_trajectory(Outcome::Success)).unwrap();
        assert!(p.contains("put a clean bowl in fridge"));
        assert!(p.contains("[Agent]: take bowl 1 from countertop 1"));
        assert!(!p.contains("{trajectory}"));
    }
}
