//! Executing an experiment and writing its results.
//!
//! Layout of an output directory:
//!
//! - `traces/<problem>__<method>__seed<seed>.csv` and `.json` per run
//! - `summary.csv`: one row per (method, problem, seed, evaluation)
//! - `weights.csv`: per-source weights of the runs that record them
//! - `manifest.json`: the spec and the status of every run
//!
//! Everything except the JSON sidecars (which carry wall-clock timings) is
//! a pure function of the spec.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use mcts_transfer::optimizer::{run_method, OptimizerConfig};
use mcts_transfer::trace::{RunStatus, RunTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::spec::{Experiment, ExperimentSpec, PreparedProblem};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_DIR: &str = "traces";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Added to every seed of the spec.
    pub seed_offset: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            seed_offset: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    Aborted,
    Failed,
}

/// One row of `summary.csv`. `incumbent` is in the problem's own sense,
/// `score` is the same value in maximization sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub problem: String,
    pub seed: u64,
    pub status: Status,
    pub t: usize,
    pub incumbent: Option<f64>,
    pub score: Option<f64>,
    pub regret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub method: String,
    pub problem: String,
    pub seed: u64,
    pub t: usize,
    pub source: String,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub problem: String,
    pub method: String,
    pub seed: u64,
    pub result: std::result::Result<RunTrace, String>,
}

impl RunOutcome {
    pub fn status(&self) -> Status {
        match &self.result {
            Ok(trace) if trace.is_completed() => Status::Completed,
            Ok(_) => Status::Aborted,
            Err(_) => Status::Failed,
        }
    }

    pub fn file_stem(&self) -> String {
        format!("{}__{}__seed{}", self.problem, self.method, self.seed)
    }

    pub fn trace(&self) -> Option<&RunTrace> {
        self.result.as_ref().ok()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
    pub weights: Vec<WeightRow>,
}

impl ExperimentReport {
    /// Runs that did not complete their budget.
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status() != Status::Completed).count()
    }

    pub fn run(&self, problem: &str, method: &str, seed: u64) -> Option<&RunOutcome> {
        self.runs
            .iter()
            .find(|r| r.problem == problem && r.method == method && r.seed == seed)
    }
}

#[derive(Debug, Serialize)]
struct RunEntry<'a> {
    problem: &'a str,
    method: &'a str,
    seed: u64,
    status: Status,
    evaluations: usize,
    final_regret: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sidecar: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    spec: &'a ExperimentSpec,
    seed_offset: u64,
    runs: Vec<RunEntry<'a>>,
}

struct Job<'a> {
    problem: &'a PreparedProblem,
    label: &'a str,
    config: OptimizerConfig,
}

/// Runs every (problem, method, seed) combination on a pool of
/// `options.workers` threads and writes the results under `out`. A failing
/// run is logged and recorded; the others still run.
pub fn run_experiment(experiment: &Experiment, out: &Path, options: &RunOptions) -> Result<ExperimentReport> {
    let trace_dir = out.join(TRACE_DIR);
    std::fs::create_dir_all(&trace_dir).map_err(|e| HarnessError::io(&trace_dir, e))?;

    let mut jobs = Vec::new();
    for problem in &experiment.problems {
        for (label, config) in &experiment.methods {
            for &seed in &experiment.spec.seeds {
                jobs.push(Job {
                    problem,
                    label,
                    config: OptimizerConfig {
                        seed: seed.wrapping_add(options.seed_offset),
                        ..config.clone()
                    },
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Invalid(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunOutcome> = pool.install(|| jobs.par_iter().map(execute).collect());

    // single collector: results are written in job order
    let mut summary = Vec::new();
    let mut weights = Vec::new();
    let mut entries = Vec::with_capacity(runs.len());
    for (run, job) in runs.iter().zip(&jobs) {
        let stem = run.file_stem();
        let mut entry = RunEntry {
            problem: &run.problem,
            method: &run.method,
            seed: run.seed,
            status: run.status(),
            evaluations: 0,
            final_regret: None,
            trace: None,
            sidecar: None,
            error: None,
        };
        match &run.result {
            Ok(trace) => {
                let csv_path = trace_dir.join(format!("{stem}.csv"));
                let json_path = trace_dir.join(format!("{stem}.json"));
                trace.save_csv(&csv_path)?;
                trace.save_sidecar(&json_path)?;
                entry.trace = Some(format!("{TRACE_DIR}/{stem}.csv"));
                entry.sidecar = Some(format!("{TRACE_DIR}/{stem}.json"));
                entry.evaluations = trace.records.len();
                entry.final_regret = trace.incumbent().map(|s| job.problem.problem.regret(s));
                summary.extend(summary_rows(run, trace, job.problem));
                weights.extend(weight_rows(run, trace));
            }
            Err(msg) => {
                log::warn!("{stem} failed: {msg}");
                entry.error = Some(msg);
                summary.push(SummaryRow {
                    method: run.method.clone(),
                    problem: run.problem.clone(),
                    seed: run.seed,
                    status: Status::Failed,
                    t: 0,
                    incumbent: None,
                    score: None,
                    regret: None,
                });
            }
        }
        entries.push(entry);
    }

    write_rows(&out.join(SUMMARY_FILE), &summary)?;
    write_rows(&out.join(WEIGHTS_FILE), &weights)?;
    let manifest = RunManifest {
        spec: &experiment.spec,
        seed_offset: options.seed_offset,
        runs: entries,
    };
    let path = out.join(MANIFEST_FILE);
    let mut file = BufWriter::new(File::create(&path).map_err(|e| HarnessError::io(&path, e))?);
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    file.write_all(b"\n").map_err(|e| HarnessError::io(&path, e))?;

    Ok(ExperimentReport {
        out_dir: out.to_path_buf(),
        runs,
        summary,
        weights,
    })
}

fn execute(job: &Job<'_>) -> RunOutcome {
    let problem = &job.problem.problem;
    log::info!("running {} / {} / seed {}", job.problem.id, job.label, job.config.seed);
    let result = catch_unwind(AssertUnwindSafe(|| {
        run_method(problem, &problem.domain, &job.problem.sources, &job.config)
    }));
    let result = match result {
        Ok(Ok(trace)) => {
            if let RunStatus::Aborted { iteration, reason } = &trace.status {
                log::warn!(
                    "{} / {} / seed {} aborted at iteration {iteration}: {reason}",
                    job.problem.id,
                    job.label,
                    job.config.seed
                );
            }
            Ok(trace)
        }
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "run panicked".to_string())),
    };
    RunOutcome {
        problem: job.problem.id.clone(),
        method: job.label.to_string(),
        seed: job.config.seed,
        result,
    }
}

fn summary_rows(run: &RunOutcome, trace: &RunTrace, problem: &PreparedProblem) -> Vec<SummaryRow> {
    let status = run.status();
    trace
        .records
        .iter()
        .map(|r| SummaryRow {
            method: run.method.clone(),
            problem: run.problem.clone(),
            seed: run.seed,
            status,
            t: r.t,
            incumbent: Some(problem.problem.from_score(r.incumbent)),
            score: Some(r.incumbent),
            regret: Some(problem.problem.regret(r.incumbent)),
        })
        .collect()
}

fn weight_rows(run: &RunOutcome, trace: &RunTrace) -> Vec<WeightRow> {
    let mut rows = Vec::new();
    for r in &trace.records {
        if r.weights.len() != trace.source_ids.len() {
            continue;
        }
        for (source, w) in trace.source_ids.iter().zip(&r.weights) {
            rows.push(WeightRow {
                method: run.method.clone(),
                problem: run.problem.clone(),
                seed: run.seed,
                t: r.t,
                source: source.clone(),
                weight: *w,
            });
        }
    }
    rows
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn read_summary(out: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(&out.join(SUMMARY_FILE))
}

/// Weight rows of a result directory; an absent file reads as empty.
pub fn read_weights(out: &Path) -> Result<Vec<WeightRow>> {
    let path = out.join(WEIGHTS_FILE);
    if path.exists() {
        read_rows(&path)
    } else {
        Ok(Vec::new())
    }
}
