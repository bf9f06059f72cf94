use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use memtransfer_core::config::{load_config, parse_config, RunConfig};
use memtransfer_core::memory::ExperiencePool;
use memtransfer_core::protocol::{
    eval_probe, load_artifacts, pretty_json, run_matrix, write_artifacts,
};
use memtransfer_core::replay::{replay, REPORT_DIR};
use memtransfer_core::report::{compute_diversity, emit_report};
use memtransfer_core::world::{generate_tasks, Family, Split};

#[derive(Parser)]
#[command(
    name = "memtransfer",
    version,
    about = "Sequential-task memory transfer experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set seed=7` or `--set bm25.k1=1.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        Ok(match &self.config {
            Some(path) => load_config(path, &self.overrides)?,
            None => parse_config("{}", &self.overrides)?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment matrix and write artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Artifact root; the run lands in `<out>/<config-hash>`.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Also emit the report into `<run>/report`.
        #[arg(long)]
        report: bool,
    },
    /// Evaluate a test set against a pool snapshot, read-only.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// A `pool.jsonl` snapshot; omit for the no-memory baseline.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, value_parser = parse_family)]
        task: Family,
    },
    /// Print retrieval-diversity diagnostics of an artifact directory.
    Diagnose {
        #[arg(long)]
        artifacts: PathBuf,
    },
    /// Write metrics, tables and plot data for one or more artifact directories.
    Report {
        /// A run directory, or a root holding several run directories.
        #[arg(long)]
        artifacts: PathBuf,
        /// Defaults to `<artifacts>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a run from its config and compare all files byte for byte.
    Replay {
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

fn parse_family(s: &str) -> Result<Family, String> {
    match s {
        "A" | "a" => Ok(Family::A),
        "B" | "b" => Ok(Family::B),
        other => Err(format!("task must be A or B, got {other:?}")),
    }
}

fn run_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join("config.json").is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("config.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no artifact directories under {}", path.display());
    }
    Ok(dirs)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            workers,
            report,
        } => {
            let cfg = config.load()?;
            let art = run_matrix(&cfg, workers)?;
            let dir = write_artifacts(&art, &out)?;
            if report {
                emit_report(std::slice::from_ref(&art), &dir.join(REPORT_DIR))?;
            }
            println!("{}", dir.display());
        }
        Command::Eval { config, pool, task } => {
            let cfg = config.load()?;
            let pool = match pool {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    Some(ExperiencePool::restore(&text)?)
                }
                None => None,
            };
            let tests = generate_tasks(cfg.world, task, cfg.test_n, cfg.seed, Split::Test);
            let condition = pool
                .as_ref()
                .map_or(cfg.condition, ExperiencePool::condition);
            let run = eval_probe(pool.as_ref(), &tests, condition, &cfg.episode_params())?;
            let solved = run.outcomes.values().filter(|&&s| s).count();
            eprintln!("solved {solved}/{}", run.outcomes.len());
            print!("{}", pretty_json(&run.outcomes));
        }
        Command::Diagnose { artifacts } => {
            for dir in run_dirs(&artifacts)? {
                let art = load_artifacts(&dir)?;
                print!("{}", pretty_json(&compute_diversity(&art)?));
            }
        }
        Command::Report { artifacts, out } => {
            let arts = run_dirs(&artifacts)?
                .iter()
                .map(|d| load_artifacts(d))
                .collect::<Result<Vec<_>, _>>()?;
            let out = out.unwrap_or_else(|| artifacts.join(REPORT_DIR));
            for name in emit_report(&arts, &out)? {
                println!("{}", out.join(name).display());
            }
        }
        Command::Replay { artifacts, workers } => {
            let verdict = replay(&artifacts, workers)?;
            match &verdict.divergence {
                None => println!(
                    "PASS ({} files, {} retrieval events re-issued)",
                    verdict.files_checked, verdict.retrieval_events_checked
                ),
                Some(d) => println!(
                    "FAIL at {} line {}\n  expected: {}\n  found:    {}",
                    d.file, d.line, d.expected, d.found
                ),
            }
            return Ok(verdict.pass);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
