//! Rule-based agent: plans from the skills it knows, lets retrieved memory
//! extend or replace that plan, then executes it against the scripted world.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::env::{skill_actions, Action, BaselineThresholds};
use super::schema::{SkillSchema, FAILURE_MARKER, SUCCESS_MARKER};
use super::{Skill, TaskInstance};
use crate::memory::{Condition, ExperiencePool, MemoryUnit, Outcome, UnitKind};
use crate::representation::{Actor, RawTrajectory, Turn};
use crate::retrieval::{
    build_step_query, retrieve, should_requery, tokenize, Bm25Params, RetrievalError, RetrievalLog,
    TraceStep,
};

/// Hints collected from retrieved units during one episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guidance {
    /// Skills learned from insight trigger phrases, in order of discovery.
    pub hinted: Vec<Skill>,
    /// Literal skill script copied from a raw unit, if one took over.
    pub override_script: Option<Vec<Skill>>,
    pub override_unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub known_skills: BTreeSet<Skill>,
    pub plan: Vec<Skill>,
    pub guidance: Guidance,
}

impl AgentState {
    /// Memory-free starting state: every world skill is known except the
    /// instance's critical skill once its difficulty reaches the threshold.
    pub fn initial(instance: &TaskInstance, thresholds: &BaselineThresholds) -> Self {
        let schema = SkillSchema::for_world(instance.world);
        let cut = thresholds.get(instance.world, instance.family);
        let known_skills: BTreeSet<Skill> = schema
            .skill_ids()
            .filter(|&s| !(s == instance.critical_skill && instance.difficulty >= cut))
            .collect();
        let mut state = Self {
            known_skills,
            plan: Vec::new(),
            guidance: Guidance::default(),
        };
        state.replan(instance);
        state
    }

    fn replan(&mut self, instance: &TaskInstance) {
        self.plan = match &self.guidance.override_script {
            Some(script) => script.clone(),
            None => instance
                .required_skills
                .iter()
                .copied()
                .filter(|s| self.known_skills.contains(s))
                .collect(),
        };
    }
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: BTreeSet<&str> = a.iter().map(String::as_str).collect();
    let b: BTreeSet<&str> = b.iter().map(String::as_str).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Folds retrieved units (best first) into the agent state.
///
/// Insight units only teach skills: each trigger phrase in the value adds
/// that skill to `known_skills`. A raw unit from a successful episode whose
/// instruction overlaps the current one by at least `overlap_threshold`
/// (Jaccard over tokens) replaces the plan with its literal skill script.
/// The first such override in a call wins; an earlier override from a
/// previous call is kept unless a new one fires.
pub fn apply_guidance(
    state: &AgentState,
    retrieved: &[&MemoryUnit],
    instance: &TaskInstance,
    overlap_threshold: f64,
) -> AgentState {
    let schema = SkillSchema::for_world(instance.world);
    let mut next = state.clone();
    let instruction = tokenize(&instance.instruction);
    let mut overridden = false;
    for unit in retrieved {
        match unit.kind {
            UnitKind::InsightBundle | UnitKind::InsightSingle => {
                for skill in schema.triggers_in(&unit.value_text) {
                    if next.known_skills.insert(skill) {
                        next.guidance.hinted.push(skill);
                    }
                }
            }
            UnitKind::RawTrajectory => {
                if overridden || !unit.value_text.contains(SUCCESS_MARKER) {
                    continue;
                }
                let source = unit.key_text.lines().next().unwrap_or("");
                if jaccard(&tokenize(source), &instruction) < overlap_threshold {
                    continue;
                }
                let script = schema.script_from_raw_value(&unit.value_text);
                if script.is_empty() {
                    continue;
                }
                next.guidance.override_script = Some(script);
                next.guidance.override_unit = Some(unit.id.clone());
                overridden = true;
            }
        }
    }
    next.replan(instance);
    next
}

/// Knobs of one episode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeParams {
    pub top_k: usize,
    pub bm25: Bm25Params,
    pub step_interval: u32,
    /// Trace steps rendered into a step-level query.
    pub window: usize,
    pub overlap_threshold: f64,
    pub max_steps: u32,
    pub thresholds: BaselineThresholds,
}

impl EpisodeParams {
    pub fn for_condition(condition: Condition) -> Self {
        Self {
            top_k: condition.default_top_k(),
            bm25: Bm25Params::default(),
            step_interval: 4,
            window: 4,
            overlap_threshold: 0.5,
            max_steps: 30,
            thresholds: BaselineThresholds::default(),
        }
    }
}

/// Everything observable about one attempt at one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instance_id: String,
    pub instruction: String,
    /// Plan in force when the episode ended.
    pub plan: Vec<Skill>,
    /// Skills whose completion action was executed, in order.
    pub executed_skills: Vec<Skill>,
    pub outcome: Outcome,
    pub steps: u32,
    /// Ids into the phase retrieval log.
    pub retrieval_event_ids: Vec<u64>,
    pub retrieval_steps: Vec<u32>,
    pub override_unit: Option<String>,
    pub trajectory: RawTrajectory,
}

fn next_skill(plan: &[Skill], done: &[Skill]) -> Option<Skill> {
    if plan.len() >= done.len() && plan[..done.len()] == *done {
        plan.get(done.len()).copied()
    } else {
        plan.iter().copied().find(|s| !done.contains(s))
    }
}

struct Retriever<'a> {
    pool: &'a ExperiencePool,
    params: &'a EpisodeParams,
}

impl Retriever<'_> {
    fn consult(
        &self,
        state: &AgentState,
        instance: &TaskInstance,
        trace: &[TraceStep],
        step: u32,
        log: &mut RetrievalLog,
        record: &mut EpisodeRecord,
    ) -> Result<AgentState, RetrievalError> {
        let start = trace.len().saturating_sub(self.params.window);
        let query = build_step_query(&instance.instruction, &trace[start..], &instance.id, step);
        let event = retrieve(self.pool, &query, self.params.top_k, &self.params.bm25)?;
        let units: Vec<&MemoryUnit> = event
            .returned_ids
            .iter()
            .filter_map(|id| self.pool.get(id))
            .collect();
        let next = apply_guidance(state, &units, instance, self.params.overlap_threshold);
        record.retrieval_event_ids.push(log.record(event));
        record.retrieval_steps.push(step);
        Ok(next)
    }
}

/// Runs one episode, reading (never writing) `pool` when given.
///
/// Memory is consulted before the first action and, under
/// [`Condition::Step`], again after every `step_interval` actions including
/// the last one. The episode succeeds iff the executed skill sequence equals
/// the instance's required skills; it fails at the first out-of-order
/// completion, when the plan runs out, or at `max_steps`.
pub fn run_episode(
    instance: &TaskInstance,
    pool: Option<&ExperiencePool>,
    condition: Condition,
    params: &EpisodeParams,
    log: &mut RetrievalLog,
) -> Result<EpisodeRecord, RetrievalError> {
    let mut state = AgentState::initial(instance, &params.thresholds);
    let mut record = EpisodeRecord {
        instance_id: instance.id.clone(),
        instruction: instance.instruction.clone(),
        plan: Vec::new(),
        executed_skills: Vec::new(),
        outcome: Outcome::Failure,
        steps: 0,
        retrieval_event_ids: Vec::new(),
        retrieval_steps: Vec::new(),
        override_unit: None,
        trajectory: RawTrajectory {
            instruction: instance.instruction.clone(),
            initial_observation: instance.initial_observation.clone(),
            steps: Vec::new(),
            outcome: Outcome::Failure,
        },
    };
    let retriever = pool.map(|pool| Retriever { pool, params });
    let mut trace: Vec<TraceStep> = Vec::new();
    if let Some(r) = &retriever {
        state = r.consult(&state, instance, &trace, 0, log, &mut record)?;
    }

    let mut done: Vec<Skill> = Vec::new();
    let mut current: Option<(Skill, VecDeque<Action>)> = None;
    let mut finished = false;
    let mut step: u32 = 0;
    while step < params.max_steps && !finished {
        if current.as_ref().is_none_or(|(_, q)| q.is_empty()) {
            current = next_skill(&state.plan, &done)
                .map(|s| (s, skill_actions(instance, s).into_iter().collect()));
        }
        let Some((skill, queue)) = current.as_mut() else {
            break;
        };
        let action = queue.pop_front().expect("skill has at least one action");
        let mut observation = action.observation;
        step += 1;
        if queue.is_empty() {
            record.executed_skills.push(*skill);
            if instance.required_skills.get(done.len()) == Some(skill) {
                done.push(*skill);
                if done.len() == instance.required_skills.len() {
                    observation = format!("{observation} {SUCCESS_MARKER}");
                    record.outcome = Outcome::Success;
                    finished = true;
                }
            } else {
                observation = format!("{observation} The task is not complete. {FAILURE_MARKER}");
                finished = true;
            }
        }
        trace.push(TraceStep {
            action: action.text,
            observation,
        });
        if let Some(r) = &retriever {
            if should_requery(condition, params.step_interval, step) {
                state = r.consult(&state, instance, &trace, step, log, &mut record)?;
            }
        }
    }

    if trace.is_empty() {
        step = 1;
        trace.push(TraceStep {
            action: "wait".into(),
            observation: format!("Nothing happens. The task is not complete. {FAILURE_MARKER}"),
        });
    } else if !finished {
        let last = trace.last_mut().expect("non-empty trace");
        last.observation = format!(
            "{} The task is not complete. {FAILURE_MARKER}",
            last.observation
        );
    }

    record.steps = step;
    record.plan = state.plan.clone();
    record.override_unit = state.guidance.override_unit.clone();
    record.trajectory.outcome = record.outcome;
    record.trajectory.steps = trace
        .into_iter()
        .flat_map(|t| {
            [
                Turn::new(Actor::Agent, t.action),
                Turn::new(Actor::Environment, t.observation),
            ]
        })
        .collect();
    Ok(record)
}

/// Success rate of the no-memory agent on a generated test set.
pub fn baseline_rate(
    world: super::World,
    family: super::Family,
    n: usize,
    seed: u64,
    thresholds: &BaselineThresholds,
) -> f64 {
    let mut params = EpisodeParams::for_condition(Condition::Agg);
    params.thresholds = *thresholds;
    let tasks = super::generate_tasks(world, family, n, seed, super::Split::Test);
    let mut log = RetrievalLog::default();
    let solved = tasks
        .iter()
        .filter(|t| {
            run_episode(t, None, Condition::Agg, &params, &mut log)
                .map(|r| r.outcome.is_success())
                .unwrap_or(false)
        })
        .count();
    solved as f64 / n.max(1) as f64
}

/// Bisects the difficulty threshold of one (world, family) until the
/// simulated baseline rate is as close to `target` as the test set allows.
pub fn calibrate_threshold(
    world: super::World,
    family: super::Family,
    target: f64,
    n: usize,
    seed: u64,
) -> f64 {
    let mut t = BaselineThresholds::default();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = (lo + hi) / 2.0;
        t.set(world, family, mid);
        if baseline_rate(world, family, n, seed, &t) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // round to the grid resolution so the frozen value reads cleanly
    (hi * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{EpisodeSource, Insight, Payload, Representation};
    use crate::world::{generate_tasks, Family, Split, World};

    fn hard_clean_instance() -> TaskInstance {
        generate_tasks(World::Cleanplace, Family::B, 100, 42, Split::Test)
            .into_iter()
            .find(|t| t.difficulty >= 0.54)
            .unwrap()
    }

    fn params() -> EpisodeParams {
        EpisodeParams::for_condition(Condition::Agg)
    }

    #[test]
    fn baseline_lacking_clean_step_fails() {
        let inst = hard_clean_instance();
        let mut log = RetrievalLog::default();
        let rec = run_episode(&inst, None, Condition::Agg, &params(), &mut log).unwrap();
        assert_eq!(rec.outcome, Outcome::Failure);
        assert!(!rec.plan.contains(&Skill::CleanStep));
        assert!(log.is_empty());
        let again = run_episode(&inst, None, Condition::Agg, &params(), &mut log).unwrap();
        assert_eq!(rec, again);
    }

    #[test]
    fn insight_naming_clean_step_rescues_episode() {
        let inst = hard_clean_instance();
        let mut pool = ExperiencePool::new(Condition::Agg, Representation::Insight);
        let schema = SkillSchema::for_world(World::Cleanplace);
        let lesson = schema.spec(Skill::CleanStep).unwrap().lesson;
        pool.insert_episode(
            &EpisodeSource {
                instruction: &inst.instruction,
                source_task: "B",
                episode_id: "train-0",
                outcome: Outcome::Success,
            },
            &Payload::Insights(vec![Insight::new(lesson, "when cleaning")]),
        )
        .unwrap();
        let mut log = RetrievalLog::default();
        let rec = run_episode(&inst, Some(&pool), Condition::Agg, &params(), &mut log).unwrap();
        assert_eq!(rec.outcome, Outcome::Success);
        assert_eq!(rec.executed_skills, inst.required_skills);
        assert_eq!(rec.retrieval_steps, [0]);
    }

    fn a_raw_pool(inst: &TaskInstance) -> ExperiencePool {
        // a successful family-A episode on the same object and target
        let mut a = inst.clone();
        a.family = Family::A;
        a.instruction = format!("put some {} in {}", inst.object, inst.target);
        a.required_skills = vec![Skill::Locate, Skill::Place];
        a.critical_skill = Skill::Locate;
        a.difficulty = 0.0;
        let mut log = RetrievalLog::default();
        let rec = run_episode(&a, None, Condition::Agg, &params(), &mut log).unwrap();
        assert_eq!(rec.outcome, Outcome::Success);
        let mut pool = ExperiencePool::new(Condition::Agg, Representation::Raw);
        pool.insert_episode(
            &EpisodeSource {
                instruction: &a.instruction,
                source_task: "A",
                episode_id: "a-0",
                outcome: rec.outcome,
            },
            &Payload::Raw(rec.trajectory),
        )
        .unwrap();
        pool
    }

    #[test]
    fn raw_override_from_other_family_causes_failure() {
        let mut inst = hard_clean_instance();
        inst.difficulty = 0.0; // the agent would know how to clean on its own
        let pool = a_raw_pool(&inst);
        let mut log = RetrievalLog::default();
        let rec = run_episode(&inst, Some(&pool), Condition::Agg, &params(), &mut log).unwrap();
        assert_eq!(rec.plan, [Skill::Locate, Skill::Place]);
        assert_eq!(rec.override_unit.as_deref(), Some("m000000"));
        assert_eq!(rec.outcome, Outcome::Failure);
        assert!(rec
            .trajectory
            .steps
            .last()
            .unwrap()
            .text
            .ends_with(FAILURE_MARKER));
    }

    #[test]
    fn override_needs_instruction_overlap() {
        let inst = hard_clean_instance();
        let pool = a_raw_pool(&inst);
        let unit = &pool.units()[0];
        let state = AgentState::initial(&inst, &BaselineThresholds::default());
        let strict = apply_guidance(&state, &[unit], &inst, 0.9);
        assert!(strict.guidance.override_script.is_none());
        let loose = apply_guidance(&state, &[unit], &inst, 0.5);
        assert!(loose.guidance.override_script.is_some());
    }

    #[test]
    fn insights_never_replace_the_plan() {
        let inst = hard_clean_instance();
        let mut pool = ExperiencePool::new(Condition::Ind, Representation::Insight);
        pool.insert_episode(
            &EpisodeSource {
                instruction: "x",
                source_task: "A",
                episode_id: "e",
                outcome: Outcome::Success,
            },
            &Payload::Insights(vec![Insight::new(
                "[Agent]: take bowl 1 from shelf 1\n[Agent]: put bowl 1 in fridge 1 Task completed.",
                "w",
            )]),
        )
        .unwrap();
        let state = AgentState::initial(&inst, &BaselineThresholds::default());
        let next = apply_guidance(&state, &[&pool.units()[0]], &inst, 0.0);
        assert_eq!(next, state);
    }

    #[test]
    fn calibration_recovers_frozen_thresholds() {
        use crate::world::World;
        assert_eq!(
            calibrate_threshold(World::Cleanplace, Family::B, 0.54, 100, 42),
            0.54
        );
        assert_eq!(
            calibrate_threshold(World::Gridfind, Family::A, 0.70, 100, 42),
            0.70
        );
    }

    #[test]
    fn no_units_leave_state_unchanged() {
        let inst = hard_clean_instance();
        let state = AgentState::initial(&inst, &BaselineThresholds::default());
        assert_eq!(apply_guidance(&state, &[], &inst, 0.5), state);
    }

    #[test]
    fn step_condition_requeries_on_schedule() {
        let inst = generate_tasks(World::Gridfind, Family::B, 20, 3, Split::Test)
            .into_iter()
            .max_by_key(|t| t.layout.search_len)
            .unwrap();
        let mut pool = ExperiencePool::new(Condition::Step, Representation::Insight);
        pool.insert_episode(
            &EpisodeSource {
                instruction: "x",
                source_task: "B",
                episode_id: "e",
                outcome: Outcome::Success,
            },
            &Payload::Insights(vec![Insight::new(
                "scan each room in turn",
                "find the room",
            )]),
        )
        .unwrap();
        let p = EpisodeParams::for_condition(Condition::Step);
        let mut log = RetrievalLog::default();
        let rec = run_episode(&inst, Some(&pool), Condition::Step, &p, &mut log).unwrap();
        let expected: Vec<u32> = std::iter::once(0)
            .chain((1..=rec.steps).filter(|s| s % 4 == 0))
            .collect();
        assert_eq!(rec.retrieval_steps, expected);
        assert_eq!(log.len(), expected.len());
    }
}
