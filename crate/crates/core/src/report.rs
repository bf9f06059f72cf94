//! Report emission: metrics JSON, study-style CSV tables, diversity JSON and
//! plot-data TSVs, all recomputed from the per-instance logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    diversity_report, DiversityReport, COVERAGE_DENOMINATOR, DIVERSITY_FORMULA,
};
use crate::memory::ExperiencePool;
use crate::metrics::{
    accuracy, bwt, cumulative_success, delta_rr_nl, fwt, partition, pct1, rr_nl_dynamics,
    DeltaRrNl, MetricsError, OutcomeMap,
};
use crate::protocol::{pretty_json, PhaseKind, RunArtifacts, RunKind};
use crate::world::Family;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("incomplete artifacts: missing {0}")]
    IncompleteArtifacts(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("pool snapshot of {0} is unreadable")]
    Snapshot(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub const AGGREGATION: &str = "mean of per-repetition accuracies; transfer = difference of means";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub task: Family,
    pub accuracy_per_rep: Vec<f64>,
    pub n_s: usize,
    pub n_f: usize,
    pub nl_unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepTransfer {
    pub rep: u32,
    pub scratch_later: f64,
    pub cross_later: f64,
    pub fwt: f64,
    /// RR/NL of cross vs scratch on the later task; `None` if a subset is empty.
    pub forward: Option<DeltaRrNl>,
    pub scratch_earlier: f64,
    pub probe_earlier: f64,
    pub bwt: f64,
    pub backward: Option<DeltaRrNl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTransfer {
    pub scratch_later: f64,
    pub cross_later: f64,
    pub fwt: f64,
    pub delta_rr: Option<f64>,
    pub delta_nl: Option<f64>,
    pub nl_unreliable: bool,
    pub scratch_earlier: f64,
    pub probe_earlier: f64,
    pub bwt: f64,
    pub bwt_delta_rr: Option<f64>,
    pub bwt_delta_nl: Option<f64>,
    pub bwt_nl_unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    /// `A→B` or `B→A`.
    pub sequence: String,
    pub earlier: Family,
    pub later: Family,
    pub reps: Vec<RepTransfer>,
    pub mean: MeanTransfer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeSeries {
    pub run_type: String,
    pub phase: String,
    pub series: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrNlSeries {
    pub run_type: String,
    pub task: Family,
    pub milestones: Vec<u32>,
    pub rr: Vec<f64>,
    pub nl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub world: String,
    pub condition: String,
    pub representation: String,
    pub aggregation: String,
    pub eval_write: bool,
    pub baselines: Vec<BaselineEntry>,
    pub sequences: Vec<SequenceMetrics>,
    pub cumulative_success: Vec<CumulativeSeries>,
    pub rr_nl_dynamics: Vec<RrNlSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityEntry {
    pub run_type: String,
    pub phase: String,
    pub task: Family,
    pub report: Option<DiversityReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityFile {
    pub config_hash: String,
    pub condition: String,
    pub formula: String,
    pub coverage_denominator: String,
    pub entries: Vec<DiversityEntry>,
}

fn arrow(first: Family) -> String {
    format!("{first}→{}", first.other())
}

fn need(
    art: &RunArtifacts,
    rep: u32,
    kind: RunKind,
    phase: PhaseKind,
    task: Family,
    name: impl FnOnce() -> String,
) -> Result<OutcomeMap, ReportError> {
    art.final_eval(&kind.run_type(rep), phase, task)
        .filter(|m| !m.is_empty())
        .ok_or_else(|| ReportError::IncompleteArtifacts(name()))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Checks that every transfer input exists, naming the first missing block.
pub fn check_complete(art: &RunArtifacts) -> Result<(), ReportError> {
    for rep in 0..art.config.runs {
        for t in [Family::A, Family::B] {
            need(art, rep, RunKind::Baseline, PhaseKind::Eval, t, || {
                format!("baseline:{t}")
            })?;
            need(art, rep, RunKind::Scratch(t), PhaseKind::Eval, t, || {
                format!("scratch:∅→{t}")
            })?;
        }
        for first in [Family::A, Family::B] {
            let seq = RunKind::Cross(first);
            need(art, rep, seq, PhaseKind::Eval, first.other(), || {
                format!("cross:{}", arrow(first))
            })?;
            need(art, rep, seq, PhaseKind::Probe, first, || {
                format!("probe:{}", arrow(first))
            })?;
        }
    }
    Ok(())
}

pub fn compute_metrics(art: &RunArtifacts) -> Result<MetricsReport, ReportError> {
    check_complete(art)?;
    let cfg = &art.config;
    let reps: Vec<u32> = (0..cfg.runs).collect();
    let base =
        |rep: u32, t: Family| need(art, rep, RunKind::Baseline, PhaseKind::Eval, t, String::new);

    let mut baselines = Vec::new();
    for t in [Family::A, Family::B] {
        let maps: Vec<OutcomeMap> = reps.iter().map(|&r| base(r, t)).collect::<Result<_, _>>()?;
        let p = partition(&maps[0]);
        baselines.push(BaselineEntry {
            task: t,
            accuracy_per_rep: maps.iter().map(accuracy).collect::<Result<_, _>>()?,
            n_s: p.n_s(),
            n_f: p.n_f(),
            nl_unreliable: !p.nl_reliable(),
        });
    }

    let mut sequences = Vec::new();
    for first in [Family::A, Family::B] {
        let later = first.other();
        let mut rows = Vec::new();
        for &rep in &reps {
            let scratch_l = need(
                art,
                rep,
                RunKind::Scratch(later),
                PhaseKind::Eval,
                later,
                String::new,
            )?;
            let cross_l = need(
                art,
                rep,
                RunKind::Cross(first),
                PhaseKind::Eval,
                later,
                String::new,
            )?;
            let scratch_e = need(
                art,
                rep,
                RunKind::Scratch(first),
                PhaseKind::Eval,
                first,
                String::new,
            )?;
            let probe_e = need(
                art,
                rep,
                RunKind::Cross(first),
                PhaseKind::Probe,
                first,
                String::new,
            )?;
            let (sl, cl, se, pe) = (
                accuracy(&scratch_l)?,
                accuracy(&cross_l)?,
                accuracy(&scratch_e)?,
                accuracy(&probe_e)?,
            );
            rows.push(RepTransfer {
                rep,
                scratch_later: sl,
                cross_later: cl,
                fwt: fwt(cl, sl),
                forward: delta_rr_nl(&partition(&base(rep, later)?), &cross_l, &scratch_l).ok(),
                scratch_earlier: se,
                probe_earlier: pe,
                bwt: bwt(pe, se),
                backward: delta_rr_nl(&partition(&base(rep, first)?), &probe_e, &scratch_e).ok(),
            });
        }
        let m = |f: fn(&RepTransfer) -> f64| mean(rows.iter().map(f));
        let (scratch_later, cross_later) = (m(|r| r.scratch_later), m(|r| r.cross_later));
        let (scratch_earlier, probe_earlier) = (m(|r| r.scratch_earlier), m(|r| r.probe_earlier));
        let mean_row = MeanTransfer {
            scratch_later,
            cross_later,
            fwt: fwt(cross_later, scratch_later),
            delta_rr: mean_opt(rows.iter().map(|r| r.forward.map(|d| d.delta_rr))),
            delta_nl: mean_opt(rows.iter().map(|r| r.forward.map(|d| d.delta_nl))),
            nl_unreliable: rows
                .iter()
                .any(|r| r.forward.is_none_or(|d| d.nl_unreliable)),
            scratch_earlier,
            probe_earlier,
            bwt: bwt(probe_earlier, scratch_earlier),
            bwt_delta_rr: mean_opt(rows.iter().map(|r| r.backward.map(|d| d.delta_rr))),
            bwt_delta_nl: mean_opt(rows.iter().map(|r| r.backward.map(|d| d.delta_nl))),
            bwt_nl_unreliable: rows
                .iter()
                .any(|r| r.backward.is_none_or(|d| d.nl_unreliable)),
        };
        sequences.push(SequenceMetrics {
            sequence: arrow(first),
            earlier: first,
            later,
            reps: rows,
            mean: mean_row,
        });
    }

    let mut cumulative = Vec::new();
    let mut dynamics = Vec::new();
    for (run_type, phases) in &art.runs {
        for p in phases.iter().filter(|p| p.kind == PhaseKind::Train) {
            let order: Vec<bool> = p.episodes.iter().map(|e| e.outcome.is_success()).collect();
            cumulative.push(CumulativeSeries {
                run_type: run_type.clone(),
                phase: p.name.clone(),
                series: cumulative_success(&order),
            });
        }
        let evals: Vec<_> = phases
            .iter()
            .filter(|p| p.kind == PhaseKind::Eval && p.milestone.is_some())
            .collect();
        let Some(task) = evals.first().map(|p| p.task) else {
            continue;
        };
        let rep: u32 = run_type
            .strip_prefix("rep")
            .and_then(|s| s.split('-').next())
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let maps: Vec<OutcomeMap> = evals.iter().map(|p| p.outcomes()).collect();
        if let Ok((rr, nl)) = rr_nl_dynamics(&partition(&base(rep, task)?), &maps) {
            dynamics.push(RrNlSeries {
                run_type: run_type.clone(),
                task,
                milestones: evals.iter().filter_map(|p| p.milestone).collect(),
                rr,
                nl,
            });
        }
    }

    Ok(MetricsReport {
        config_hash: cfg.hash(),
        world: cfg.world.to_string(),
        condition: cfg.condition.to_string(),
        representation: cfg.representation.as_str().to_string(),
        aggregation: AGGREGATION.to_string(),
        eval_write: cfg.eval_write,
        baselines,
        sequences,
        cumulative_success: cumulative,
        rr_nl_dynamics: dynamics,
    })
}

/// Diversity of every evaluation and probe retrieval log.
pub fn compute_diversity(art: &RunArtifacts) -> Result<DiversityFile, ReportError> {
    let mut entries = Vec::new();
    for (run_type, phases) in &art.runs {
        if run_type.ends_with("-baseline") {
            continue;
        }
        for p in phases.iter().filter(|p| p.kind != PhaseKind::Train) {
            let pool = ExperiencePool::restore(&p.pool_snapshot)
                .map_err(|_| ReportError::Snapshot(format!("{run_type}/{}", p.name)))?;
            let (report, error) = match diversity_report(&pool, &p.retrieval) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            entries.push(DiversityEntry {
                run_type: run_type.clone(),
                phase: p.name.clone(),
                task: p.task,
                report,
                error,
            });
        }
    }
    Ok(DiversityFile {
        config_hash: art.config.hash(),
        condition: art.config.condition.to_string(),
        formula: DIVERSITY_FORMULA.to_string(),
        coverage_denominator: COVERAGE_DENOMINATOR.to_string(),
        entries,
    })
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{:.1}", pct1(v))).unwrap_or_default()
}

/// Report files for one or more artifact sets, keyed by file name.
pub fn render_report(arts: &[RunArtifacts]) -> Result<BTreeMap<String, String>, ReportError> {
    let mut metrics = Vec::new();
    let mut diversity = Vec::new();
    let mut fwt_csv =
        String::from("env,cond/repr,sequence,scratch,cross,FWT,dRR,dNL,nl_unreliable\n");
    let mut bwt_csv =
        String::from("env,cond/repr,sequence,scratch,probe,BWT,dRR,dNL,nl_unreliable\n");
    let mut cum_tsv = String::from("config\trun_type\tphase\tepisode\tcumulative_success\n");
    let mut rrnl_tsv = String::from("config\trun_type\ttask\tmilestone\trr\tnl\n");
    for art in arts {
        let m = compute_metrics(art)?;
        let label = format!("{}/{}", m.condition, m.representation);
        for s in &m.sequences {
            let x = &s.mean;
            let _ = writeln!(
                fwt_csv,
                "{},{label},{},{},{},{},{},{},{}",
                m.world,
                s.sequence,
                cell(Some(x.scratch_later)),
                cell(Some(x.cross_later)),
                cell(Some(x.fwt)),
                cell(x.delta_rr),
                cell(x.delta_nl),
                x.nl_unreliable
            );
            let _ = writeln!(
                bwt_csv,
                "{},{label},{},{},{},{},{},{},{}",
                m.world,
                s.sequence,
                cell(Some(x.scratch_earlier)),
                cell(Some(x.probe_earlier)),
                cell(Some(x.bwt)),
                cell(x.bwt_delta_rr),
                cell(x.bwt_delta_nl),
                x.bwt_nl_unreliable
            );
        }
        for c in &m.cumulative_success {
            for (i, v) in c.series.iter().enumerate() {
                let _ = writeln!(
                    cum_tsv,
                    "{}\t{}\t{}\t{}\t{v}",
                    m.config_hash,
                    c.run_type,
                    c.phase,
                    i + 1
                );
            }
        }
        for d in &m.rr_nl_dynamics {
            for (i, ms) in d.milestones.iter().enumerate() {
                let _ = writeln!(
                    rrnl_tsv,
                    "{}\t{}\t{}\t{ms}\t{}\t{}",
                    m.config_hash, d.run_type, d.task, d.rr[i], d.nl[i]
                );
            }
        }
        metrics.push(m);
        diversity.push(compute_diversity(art)?);
    }
    let mut files = BTreeMap::new();
    files.insert("metrics.json".to_string(), pretty_json(&metrics));
    files.insert("diversity.json".to_string(), pretty_json(&diversity));
    files.insert("fwt.csv".to_string(), fwt_csv);
    files.insert("bwt.csv".to_string(), bwt_csv);
    files.insert("cumulative_success.tsv".to_string(), cum_tsv);
    files.insert("rr_nl_dynamics.tsv".to_string(), rrnl_tsv);
    Ok(files)
}

/// Writes [`render_report`] output into `out`.
pub fn emit_report(arts: &[RunArtifacts], out: &Path) -> Result<Vec<String>, ReportError> {
    let files = render_report(arts)?;
    std::fs::create_dir_all(out).map_err(|e| ReportError::Io {
        path: out.display().to_string(),
        message: e.to_string(),
    })?;
    for (name, content) in &files {
        let path = out.join(name);
        std::fs::write(&path, content).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(files.into_keys().collect())
}
