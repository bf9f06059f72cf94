//! The two-phase sequential protocol and its on-disk artifacts.
//!
//! Per repetition `r`: no-memory baselines on both test sets, scratch runs
//! `∅→A` and `∅→B`, and cross runs `A→B` and `B→A`, each evaluated on its
//! later task and then probed on its earlier task. Training streams use seed
//! `seed + r`; test sets always come from `seed`. Evaluations never write.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_config, ConfigError, Distiller, RunConfig};
use crate::llm::HttpClient;
use crate::memory::{EpisodeSource, ExperiencePool, MemoryError, Payload};
use crate::metrics::OutcomeMap;
use crate::representation::{llm_distill, rule_distill};
use crate::retrieval::{RetrievalError, RetrievalLog};
use crate::world::{
    generate_tasks, run_episode, EpisodeParams, EpisodeRecord, Family, SkillSchema, Split,
    TaskInstance,
};
use crate::Representation;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("artifact is corrupt: {0}")]
    Corrupt(String),
}

fn io_err(path: &Path, e: std::io::Error) -> ProtocolError {
    ProtocolError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Train,
    Eval,
    Probe,
}

impl PhaseKind {
    fn as_str(self) -> &'static str {
        match self {
            PhaseKind::Train => "train",
            PhaseKind::Eval => "eval",
            PhaseKind::Probe => "probe",
        }
    }
}

/// Which run of the matrix a set of phases belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunKind {
    Baseline,
    Scratch(Family),
    /// Sequence starting with the given family.
    Cross(Family),
}

impl RunKind {
    pub fn all() -> [RunKind; 5] {
        [
            RunKind::Baseline,
            RunKind::Scratch(Family::A),
            RunKind::Scratch(Family::B),
            RunKind::Cross(Family::A),
            RunKind::Cross(Family::B),
        ]
    }

    pub fn run_type(self, rep: u32) -> String {
        format!("rep{rep}-{self}")
    }
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunKind::Baseline => write!(f, "baseline"),
            RunKind::Scratch(t) => write!(f, "scratch-{t}"),
            RunKind::Cross(first) => write!(f, "cross-{first}{}", first.other()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub run_type: String,
    pub phase: String,
    pub kind: PhaseKind,
    pub task: Family,
    pub milestone: u32,
    pub milestones: u32,
    /// Pool the evaluation read from, snapshotted before it started.
    pub pool_snapshot: String,
    pub pool_unit_count: usize,
    pub accuracy: f64,
    pub outcomes: OutcomeMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseArtifacts {
    /// Directory name, `NN-kind-T` or `NN-eval-T-mK`.
    pub name: String,
    pub kind: PhaseKind,
    pub task: Family,
    pub milestone: Option<u32>,
    pub episodes: Vec<EpisodeRecord>,
    pub retrieval: RetrievalLog,
    /// Pool at the end of a training phase, or the frozen pool an evaluation read.
    pub pool_snapshot: String,
    pub eval: Option<EvalResult>,
}

impl PhaseArtifacts {
    /// Name without the ordering prefix, e.g. `eval-B-m1`.
    pub fn label(&self) -> &str {
        self.name
            .split_once('-')
            .map_or(&self.name, |(_, rest)| rest)
    }

    pub fn outcomes(&self) -> OutcomeMap {
        self.episodes
            .iter()
            .map(|e| (e.instance_id.clone(), e.outcome.is_success()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub config: RunConfig,
    /// Run type (`rep0-cross-AB`, ...) to its phases in execution order.
    pub runs: BTreeMap<String, Vec<PhaseArtifacts>>,
}

impl RunArtifacts {
    pub fn phase(&self, run_type: &str, label: &str) -> Option<&PhaseArtifacts> {
        self.runs.get(run_type)?.iter().find(|p| p.label() == label)
    }

    /// Outcomes of the final evaluation of `task` in `run_type`.
    pub fn final_eval(&self, run_type: &str, kind: PhaseKind, task: Family) -> Option<OutcomeMap> {
        self.runs
            .get(run_type)?
            .iter()
            .rfind(|p| p.kind == kind && p.task == task)
            .map(PhaseArtifacts::outcomes)
    }
}

/// Result of evaluating a frozen pool on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub outcomes: OutcomeMap,
    pub episodes: Vec<EpisodeRecord>,
    pub log: RetrievalLog,
}

/// Runs every test instance against a read-only pool (or none).
pub fn eval_probe(
    pool: Option<&ExperiencePool>,
    tests: &[TaskInstance],
    condition: crate::Condition,
    params: &EpisodeParams,
) -> Result<EvalRun, RetrievalError> {
    let mut log = RetrievalLog::default();
    let mut episodes = Vec::with_capacity(tests.len());
    for inst in tests {
        episodes.push(run_episode(inst, pool, condition, params, &mut log)?);
    }
    let outcomes = episodes
        .iter()
        .map(|e| (e.instance_id.clone(), e.outcome.is_success()))
        .collect();
    Ok(EvalRun {
        outcomes,
        episodes,
        log,
    })
}

struct Job<'a> {
    config: &'a RunConfig,
    params: EpisodeParams,
    llm: Option<HttpClient>,
    phases: Vec<PhaseArtifacts>,
    run_type: String,
}

impl Job<'_> {
    fn push(
        &mut self,
        label: String,
        kind: PhaseKind,
        task: Family,
        milestone: Option<u32>,
    ) -> &mut PhaseArtifacts {
        let name = format!("{:02}-{label}", self.phases.len() + 1);
        self.phases.push(PhaseArtifacts {
            name,
            kind,
            task,
            milestone,
            episodes: Vec::new(),
            retrieval: RetrievalLog::default(),
            pool_snapshot: String::new(),
            eval: None,
        });
        self.phases.last_mut().expect("just pushed")
    }

    fn evaluate(
        &mut self,
        pool: Option<&ExperiencePool>,
        tests: &[TaskInstance],
        kind: PhaseKind,
        task: Family,
        milestone: Option<u32>,
    ) -> Result<(), ProtocolError> {
        let label = match milestone {
            Some(m) => format!("{}-{task}-m{m}", kind.as_str()),
            None => format!("{}-{task}", kind.as_str()),
        };
        let snapshot = match pool {
            Some(p) => p.snapshot(),
            None => {
                ExperiencePool::new(self.config.condition, self.config.representation).snapshot()
            }
        };
        let unit_count = pool.map_or(0, ExperiencePool::len);
        let run = eval_probe(pool, tests, self.config.condition, &self.params)?;
        let run_type = self.run_type.clone();
        let milestones = self.config.milestones;
        let phase = self.push(label, kind, task, milestone);
        let accuracy = crate::metrics::accuracy(&run.outcomes).unwrap_or(0.0);
        phase.eval = Some(EvalResult {
            run_type,
            phase: phase.name.clone(),
            kind,
            task,
            milestone: milestone.unwrap_or(1),
            milestones: milestone.map_or(1, |_| milestones),
            pool_snapshot: "pool.jsonl".into(),
            pool_unit_count: unit_count,
            accuracy,
            outcomes: run.outcomes,
        });
        phase.episodes = run.episodes;
        phase.retrieval = run.log;
        phase.pool_snapshot = snapshot;
        Ok(())
    }

    /// Trains on `stream`, evaluating on `tests` at each milestone when given.
    fn train(
        &mut self,
        pool: &mut ExperiencePool,
        stream: &[TaskInstance],
        task: Family,
        tests: Option<&[TaskInstance]>,
    ) -> Result<(), ProtocolError> {
        let schema = SkillSchema::for_world(self.config.world);
        let idx = self.phases.len();
        self.push(format!("train-{task}"), PhaseKind::Train, task, None);
        let m_total = self.config.milestones as usize;
        let cuts: Vec<usize> = (1..=m_total).map(|m| stream.len() * m / m_total).collect();
        let mut pending_evals = Vec::new();
        let mut log = RetrievalLog::default();
        let mut episodes = Vec::with_capacity(stream.len());
        for (i, inst) in stream.iter().enumerate() {
            let rec = run_episode(
                inst,
                Some(pool),
                self.config.condition,
                &self.params,
                &mut log,
            )?;
            let payload = match self.config.representation {
                Representation::Raw => Payload::Raw(rec.trajectory.clone()),
                Representation::Insight => {
                    let insights = match (&self.config.distiller, &self.llm) {
                        (Distiller::Llm, Some(client)) => {
                            llm_distill(&rec.trajectory, client, schema)
                                .unwrap_or_else(|_| rule_distill(&rec.trajectory, schema))
                        }
                        _ => rule_distill(&rec.trajectory, schema),
                    };
                    Payload::Insights(insights)
                }
            };
            pool.insert_episode(
                &EpisodeSource {
                    instruction: &inst.instruction,
                    source_task: inst.task_label(),
                    episode_id: &inst.id,
                    outcome: rec.outcome,
                },
                &payload,
            )?;
            episodes.push(rec);
            if let Some(tests) = tests {
                for (m, &cut) in cuts.iter().enumerate() {
                    if cut == i + 1 {
                        let milestone = m as u32 + 1;
                        // evaluation phases are appended after the training phase
                        let run = (
                            pool.snapshot(),
                            pool.len(),
                            eval_probe(Some(pool), tests, self.config.condition, &self.params)?,
                        );
                        pending_evals.push((milestone, run));
                    }
                }
            }
        }
        let train = &mut self.phases[idx];
        train.episodes = episodes;
        train.retrieval = log;
        train.pool_snapshot = pool.snapshot();
        for (milestone, (snapshot, units, run)) in pending_evals {
            let label = format!("eval-{task}-m{milestone}");
            let run_type = self.run_type.clone();
            let milestones = self.config.milestones;
            let phase = self.push(label, PhaseKind::Eval, task, Some(milestone));
            phase.eval = Some(EvalResult {
                run_type,
                phase: phase.name.clone(),
                kind: PhaseKind::Eval,
                task,
                milestone,
                milestones,
                pool_snapshot: "pool.jsonl".into(),
                pool_unit_count: units,
                accuracy: crate::metrics::accuracy(&run.outcomes).unwrap_or(0.0),
                outcomes: run.outcomes,
            });
            phase.episodes = run.episodes;
            phase.retrieval = run.log;
            phase.pool_snapshot = snapshot;
        }
        Ok(())
    }
}

fn run_job(
    config: &RunConfig,
    rep: u32,
    kind: RunKind,
) -> Result<(String, Vec<PhaseArtifacts>), ProtocolError> {
    let train_seed = config.seed + u64::from(rep);
    let tests =
        |f: Family| generate_tasks(config.world, f, config.test_n, config.seed, Split::Test);
    let stream =
        |f: Family| generate_tasks(config.world, f, config.train_n, train_seed, Split::Train);
    let mut job = Job {
        config,
        params: config.episode_params(),
        llm: match (config.distiller, &config.llm) {
            (Distiller::Llm, Some(a)) => Some(HttpClient::new(a.clone())),
            _ => None,
        },
        phases: Vec::new(),
        run_type: kind.run_type(rep),
    };
    let new_pool = || ExperiencePool::new(config.condition, config.representation);
    match kind {
        RunKind::Baseline => {
            for f in [Family::A, Family::B] {
                job.evaluate(None, &tests(f), PhaseKind::Eval, f, None)?;
            }
        }
        RunKind::Scratch(f) => {
            let mut pool = new_pool();
            job.train(&mut pool, &stream(f), f, Some(&tests(f)))?;
        }
        RunKind::Cross(first) => {
            let later = first.other();
            let mut pool = new_pool();
            job.train(&mut pool, &stream(first), first, None)?;
            job.train(&mut pool, &stream(later), later, Some(&tests(later)))?;
            job.evaluate(Some(&pool), &tests(first), PhaseKind::Probe, first, None)?;
        }
    }
    Ok((job.run_type, job.phases))
}

/// Executes the whole matrix. Independent runs go to a pool of `workers`
/// threads; output does not depend on the worker count.
pub fn run_matrix(config: &RunConfig, workers: usize) -> Result<RunArtifacts, ProtocolError> {
    config.validate()?;
    let jobs: Vec<(u32, RunKind)> = (0..config.runs)
        .flat_map(|r| RunKind::all().into_iter().map(move |k| (r, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ProtocolError::Corrupt(format!("thread pool: {e}")))?;
    let results: Vec<Result<(String, Vec<PhaseArtifacts>), ProtocolError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(r, k)| run_job(config, r, k))
            .collect()
    });
    let mut runs = BTreeMap::new();
    for res in results {
        let (name, phases) = res?;
        runs.insert(name, phases);
    }
    Ok(RunArtifacts {
        config: config.clone(),
        runs,
    })
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// File contents of an artifact directory, keyed by relative path.
pub fn render_artifacts(art: &RunArtifacts) -> BTreeMap<String, String> {
    let mut files = BTreeMap::new();
    files.insert("config.json".to_string(), pretty_json(&art.config));
    for (run_type, phases) in &art.runs {
        for p in phases {
            let dir = format!("{run_type}/{}", p.name);
            files.insert(format!("{dir}/episodes.jsonl"), jsonl(&p.episodes));
            files.insert(format!("{dir}/retrieval.jsonl"), p.retrieval.to_jsonl());
            files.insert(format!("{dir}/pool.jsonl"), p.pool_snapshot.clone());
            if let Some(e) = &p.eval {
                files.insert(format!("{dir}/eval.json"), pretty_json(e));
            }
        }
    }
    files
}

/// Writes `art` under `root/<config-hash>/` and returns that directory.
pub fn write_artifacts(art: &RunArtifacts, root: &Path) -> Result<PathBuf, ProtocolError> {
    let dir = root.join(art.config.hash());
    for (rel, content) in render_artifacts(art) {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        std::fs::write(&path, content).map_err(|e| io_err(&path, e))?;
    }
    Ok(dir)
}

fn read(path: &Path) -> Result<String, ProtocolError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>, ProtocolError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn parse_phase_name(name: &str) -> Option<(PhaseKind, Family, Option<u32>)> {
    let mut parts = name.split('-').skip(1);
    let kind = match parts.next()? {
        "train" => PhaseKind::Train,
        "eval" => PhaseKind::Eval,
        "probe" => PhaseKind::Probe,
        _ => return None,
    };
    let task = match parts.next()? {
        "A" => Family::A,
        "B" => Family::B,
        _ => return None,
    };
    let milestone = match parts.next() {
        Some(m) => Some(m.strip_prefix('m')?.parse().ok()?),
        None => None,
    };
    Some((kind, task, milestone))
}

/// Reads an artifact directory written by [`write_artifacts`]. Run
/// directories are the subdirectories holding phase directories; a `report`
/// directory, if present, is skipped.
pub fn load_artifacts(dir: &Path) -> Result<RunArtifacts, ProtocolError> {
    let config = parse_config(&read(&dir.join("config.json"))?, &[])?;
    let mut runs = BTreeMap::new();
    for run_dir in sorted_subdirs(dir)? {
        let run_type = run_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if !run_type.starts_with("rep") {
            continue;
        }
        let mut phases = Vec::new();
        for phase_dir in sorted_subdirs(&run_dir)? {
            let name = phase_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let (kind, task, milestone) = parse_phase_name(&name).ok_or_else(|| {
                ProtocolError::Corrupt(format!("unexpected phase directory {name}"))
            })?;
            let episodes = read(&phase_dir.join("episodes.jsonl"))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<Vec<EpisodeRecord>, _>>()
                .map_err(|e| ProtocolError::Corrupt(format!("{name}/episodes.jsonl: {e}")))?;
            let retrieval = RetrievalLog::from_jsonl(&read(&phase_dir.join("retrieval.jsonl"))?)
                .map_err(|e| ProtocolError::Corrupt(format!("{name}/retrieval.jsonl: {e}")))?;
            let pool_snapshot = read(&phase_dir.join("pool.jsonl"))?;
            let eval_path = phase_dir.join("eval.json");
            let eval = if eval_path.exists() {
                Some(
                    serde_json::from_str(&read(&eval_path)?)
                        .map_err(|e| ProtocolError::Corrupt(format!("{name}/eval.json: {e}")))?,
                )
            } else {
                None
            };
            phases.push(PhaseArtifacts {
                name,
                kind,
                task,
                milestone,
                episodes,
                retrieval,
                pool_snapshot,
                eval,
            });
        }
        runs.insert(run_type, phases);
    }
    Ok(RunArtifacts { config, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small(extra: &[&str]) -> RunConfig {
        let mut o: Vec<String> = vec!["train_n=20".into(), "test_n=10".into()];
        o.extend(extra.iter().map(|s| s.to_string()));
        parse_config("{}", &o).unwrap()
    }

    #[test]
    fn matrix_enumerates_all_blocks() {
        let art = run_matrix(&small(&[]), 2).unwrap();
        assert_eq!(art.runs.len(), 10);
        let cross = &art.runs["rep0-cross-AB"];
        let labels: Vec<&str> = cross.iter().map(PhaseArtifacts::label).collect();
        assert_eq!(labels, ["train-A", "train-B", "eval-B-m1", "probe-A"]);
        let eval_blocks: usize = art
            .runs
            .values()
            .flatten()
            .filter(|p| p.kind != PhaseKind::Train)
            .count();
        assert_eq!(eval_blocks, 2 * (2 + 2 + 2 + 2));
    }

    #[test]
    fn cross_pool_holds_both_phases() {
        let art = run_matrix(&small(&["representation=raw"]), 1).unwrap();
        let probe = art.phase("rep0-cross-AB", "probe-A").unwrap();
        let pool = ExperiencePool::restore(&probe.pool_snapshot).unwrap();
        assert_eq!(pool.len(), 40);
        assert_eq!(probe.eval.as_ref().unwrap().pool_unit_count, 40);
    }

    #[test]
    fn shared_prefix_with_scratch() {
        let art = run_matrix(&small(&["condition=step"]), 1).unwrap();
        let scratch = art.phase("rep0-scratch-A", "train-A").unwrap();
        let cross = art.phase("rep0-cross-AB", "train-A").unwrap();
        assert_eq!(scratch.episodes, cross.episodes);
        assert_eq!(scratch.retrieval, cross.retrieval);
        assert_eq!(scratch.pool_snapshot, cross.pool_snapshot);
    }

    #[test]
    fn evaluation_is_read_only_and_repeatable() {
        let art = run_matrix(&small(&[]), 1).unwrap();
        let phase = art.phase("rep0-scratch-B", "eval-B-m1").unwrap();
        let pool = ExperiencePool::restore(&phase.pool_snapshot).unwrap();
        let before = pool.len();
        let c = &art.config;
        let tests = generate_tasks(c.world, Family::B, c.test_n, c.seed, Split::Test);
        let a = eval_probe(Some(&pool), &tests, c.condition, &c.episode_params()).unwrap();
        let b = eval_probe(Some(&pool), &tests, c.condition, &c.episode_params()).unwrap();
        assert_eq!(pool.len(), before);
        assert_eq!(a, b);
        assert_eq!(a.outcomes, phase.outcomes());
    }

    #[test]
    fn empty_pool_probe_matches_baseline() {
        let c = small(&[]);
        let tests = generate_tasks(c.world, Family::B, c.test_n, c.seed, Split::Test);
        let empty = ExperiencePool::new(c.condition, c.representation);
        let with_empty =
            eval_probe(Some(&empty), &tests, c.condition, &c.episode_params()).unwrap();
        let without = eval_probe(None, &tests, c.condition, &c.episode_params()).unwrap();
        assert_eq!(with_empty.outcomes, without.outcomes);
    }

    #[test]
    fn milestones_split_the_later_phase() {
        let art = run_matrix(&small(&["milestones=2", "runs=1"]), 1).unwrap();
        let labels: Vec<&str> = art.runs["rep0-cross-BA"]
            .iter()
            .map(PhaseArtifacts::label)
            .collect();
        assert_eq!(
            labels,
            ["train-B", "train-A", "eval-A-m1", "eval-A-m2", "probe-B"]
        );
        let m1 = art.phase("rep0-cross-BA", "eval-A-m1").unwrap();
        assert_eq!(m1.eval.as_ref().unwrap().pool_unit_count, 30);
    }

    #[test]
    fn parse_phase_names() {
        assert_eq!(
            parse_phase_name("03-eval-B-m2"),
            Some((PhaseKind::Eval, Family::B, Some(2)))
        );
        assert_eq!(
            parse_phase_name("04-probe-A"),
            Some((PhaseKind::Probe, Family::A, None))
        );
        assert_eq!(parse_phase_name("x"), None);
    }
}
