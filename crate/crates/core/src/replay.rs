//! Determinism check: re-execute an artifact directory from its config and
//! compare every file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::parse_config;
use crate::memory::ExperiencePool;
use crate::protocol::{render_artifacts, run_matrix, RunArtifacts};
use crate::report::render_report;
use crate::retrieval::{retrieve, RetrievalLog};

/// Subdirectory of an artifact directory that holds emitted reports.
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("artifact directory is corrupt: {0}")]
    ArtifactCorrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub file: String,
    /// 1-based line of the first differing record; 0 when a file is missing.
    pub line: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub files_checked: usize,
    pub retrieval_events_checked: usize,
    pub divergence: Option<Divergence>,
}

fn corrupt(msg: impl std::fmt::Display) -> ReplayError {
    ReplayError::ArtifactCorrupt(msg.to_string())
}

fn collect_files(
    root: &Path,
    dir: &Path,
    out: &mut BTreeMap<String, String>,
) -> Result<(), ReplayError> {
    let entries = std::fs::read_dir(dir).map_err(|e| corrupt(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(corrupt)?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .map_err(corrupt)?
                .to_string_lossy()
                .replace('\\', "/");
            let text =
                std::fs::read_to_string(&path).map_err(|e| corrupt(format!("{rel}: {e}")))?;
            out.insert(rel, text);
        }
    }
    Ok(())
}

/// First difference between two file sets, in path order.
pub fn first_divergence(
    expected: &BTreeMap<String, String>,
    found: &BTreeMap<String, String>,
) -> Option<Divergence> {
    let mut names: Vec<&String> = expected.keys().chain(found.keys()).collect();
    names.sort();
    names.dedup();
    for name in names {
        match (expected.get(name), found.get(name)) {
            (Some(e), Some(f)) if e == f => {}
            (Some(e), Some(f)) => {
                let (el, fl): (Vec<&str>, Vec<&str>) = (e.lines().collect(), f.lines().collect());
                let n = el.len().max(fl.len());
                let line = (0..n)
                    .find(|&i| el.get(i) != fl.get(i))
                    .unwrap_or(n.saturating_sub(1));
                return Some(Divergence {
                    file: name.clone(),
                    line: line + 1,
                    expected: el.get(line).unwrap_or(&"").to_string(),
                    found: fl.get(line).unwrap_or(&"").to_string(),
                });
            }
            (e, f) => {
                return Some(Divergence {
                    file: name.clone(),
                    line: 0,
                    expected: if e.is_some() { "present" } else { "absent" }.into(),
                    found: if f.is_some() { "present" } else { "absent" }.into(),
                })
            }
        }
    }
    None
}

/// Restores each evaluation pool and re-issues every logged query against it.
fn check_retrievals(art: &RunArtifacts) -> Result<(usize, Option<Divergence>), ReplayError> {
    let k = art.config.top_k();
    let mut checked = 0;
    for (run_type, phases) in &art.runs {
        for p in phases.iter().filter(|p| p.eval.is_some()) {
            let pool = ExperiencePool::restore(&p.pool_snapshot)
                .map_err(|e| corrupt(format!("{run_type}/{}/pool.jsonl: {e}", p.name)))?;
            let mut replayed = RetrievalLog::default();
            for ev in &p.retrieval.events {
                let again = retrieve(&pool, &ev.query, k, &art.config.bm25).map_err(corrupt)?;
                replayed.record(again);
                checked += 1;
            }
            if replayed != p.retrieval {
                let file = format!("{run_type}/{}/retrieval.jsonl", p.name);
                let e: BTreeMap<String, String> = [(file.clone(), replayed.to_jsonl())].into();
                let f: BTreeMap<String, String> = [(file, p.retrieval.to_jsonl())].into();
                return Ok((checked, first_divergence(&e, &f)));
            }
        }
    }
    Ok((checked, None))
}

/// Re-runs the pipeline from `dir/config.json` and compares every logged file
/// (and the `report/` directory, when present) with a fresh rendering.
pub fn replay(dir: &Path, workers: usize) -> Result<Verdict, ReplayError> {
    let text = std::fs::read_to_string(dir.join("config.json"))
        .map_err(|e| corrupt(format!("config.json: {e}")))?;
    let config = parse_config(&text, &[]).map_err(corrupt)?;
    let mut on_disk = BTreeMap::new();
    collect_files(dir, dir, &mut on_disk)?;

    let art = run_matrix(&config, workers).map_err(corrupt)?;
    let mut expected = render_artifacts(&art);
    if on_disk
        .keys()
        .any(|k| k.starts_with(&format!("{REPORT_DIR}/")))
    {
        let report = render_report(std::slice::from_ref(&art)).map_err(corrupt)?;
        for (name, content) in report {
            expected.insert(format!("{REPORT_DIR}/{name}"), content);
        }
    }
    let files_checked = expected.len();
    if let Some(d) = first_divergence(&expected, &on_disk) {
        return Ok(Verdict {
            pass: false,
            files_checked,
            retrieval_events_checked: 0,
            divergence: Some(d),
        });
    }
    let loaded = crate::protocol::load_artifacts(dir).map_err(corrupt)?;
    let (events, divergence) = check_retrievals(&loaded)?;
    Ok(Verdict {
        pass: divergence.is_none(),
        files_checked,
        retrieval_events_checked: events,
        divergence,
    })
}
