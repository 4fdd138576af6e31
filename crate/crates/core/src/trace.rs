//! Per-run traces and their on-disk forms.
//!
//! The CSV holds one deterministic row per evaluation. Wall-clock timings
//! only go to the JSON sidecar, so rerunning a seed reproduces the CSV byte
//! for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{Method, OptimizerConfig};
use crate::region::TransferRegion;
use crate::tree::TreeSnapshot;

/// Seconds spent per component in one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub evaluation: f64,
    /// Surrogate fitting and candidate search.
    pub modeling: f64,
    /// Sample insertion, similarity, potentials and expansion.
    pub backpropagation: f64,
    pub reconstruction: f64,
}

impl std::ops::AddAssign for Timings {
    fn add_assign(&mut self, o: Self) {
        self.evaluation += o.evaluation;
        self.modeling += o.modeling;
        self.backpropagation += o.backpropagation;
        self.reconstruction += o.reconstruction;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based evaluation index.
    pub t: usize,
    /// Evaluated point, original coordinates.
    pub x: Vec<f64>,
    pub x_norm: Vec<f64>,
    /// Objective value, maximization sense.
    pub y: f64,
    /// Best `y` so far.
    pub incumbent: f64,
    pub leaf: Option<usize>,
    /// Per-source weights with every source contributing.
    pub weights: Vec<f64>,
    /// Subtrees rebuilt during this iteration.
    pub reconstructions: usize,
    pub tree_nodes: Option<usize>,
    pub retries: usize,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { iteration: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: Method,
    pub config: OptimizerConfig,
    pub source_ids: Vec<String>,
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
    pub final_tree: Option<TreeSnapshot>,
    pub region: Option<TransferRegion>,
    pub prelearn_seconds: f64,
}

impl RunTrace {
    pub fn new(method: Method, config: &OptimizerConfig, source_ids: Vec<String>) -> Self {
        Self {
            method,
            config: config.clone(),
            source_ids,
            records: Vec::new(),
            status: RunStatus::Completed,
            final_tree: None,
            region: None,
            prelearn_seconds: 0.0,
        }
    }

    /// Appends a record, overwriting its incumbent with the running best.
    pub fn push(&mut self, mut record: IterationRecord) -> &IterationRecord {
        if let Some(prev) = self.records.last() {
            record.incumbent = prev.incumbent.max(record.y);
        } else {
            record.incumbent = record.y;
        }
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    pub fn incumbent(&self) -> Option<f64> {
        self.records.last().map(|r| r.incumbent)
    }

    /// Earliest record attaining the incumbent.
    pub fn best(&self) -> Option<&IterationRecord> {
        let inc = self.incumbent()?;
        self.records.iter().find(|r| r.y == inc)
    }

    pub fn total_timings(&self) -> Timings {
        let mut total = Timings::default();
        for r in &self.records {
            total += r.timings;
        }
        total
    }

    pub fn total_reconstructions(&self) -> usize {
        self.records.iter().map(|r| r.reconstructions).sum()
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.records.first().map_or(0, |r| r.x.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((0..dim).map(|d| format!("x_{d}")));
        header.extend(["y", "incumbent", "leaf", "tree_nodes", "reconstructions", "retries"].map(String::from));
        header.extend(self.source_ids.iter().map(|id| format!("w_{id}")));
        w.write_record(&header)?;
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row: Vec<String> = vec![r.t.to_string()];
            row.extend(r.x.iter().map(f64::to_string));
            row.push(r.y.to_string());
            row.push(r.incumbent.to_string());
            row.push(opt(r.leaf));
            row.push(opt(r.tree_nodes));
            row.push(r.reconstructions.to_string());
            row.push(r.retries.to_string());
            if r.weights.len() == self.source_ids.len() {
                row.extend(r.weights.iter().map(f64::to_string));
            } else {
                row.extend(self.source_ids.iter().map(|_| String::new()));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("trace csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(file))
    }

    pub fn sidecar(&self) -> Sidecar<'_> {
        Sidecar {
            method: self.method,
            config: &self.config,
            source_ids: &self.source_ids,
            status: &self.status,
            evaluations: self.records.len(),
            incumbent: self.incumbent(),
            total_reconstructions: self.total_reconstructions(),
            timings: TimingBreakdown {
                prelearn: self.prelearn_seconds,
                total: self.total_timings(),
                per_iteration: self.records.iter().map(|r| r.timings).collect(),
            },
            final_tree: self.final_tree.as_ref(),
            region: self.region.as_ref(),
        }
    }

    pub fn save_sidecar(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &self.sidecar())?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize)]
pub struct TimingBreakdown {
    pub prelearn: f64,
    pub total: Timings,
    pub per_iteration: Vec<Timings>,
}

/// Run metadata written next to the trace CSV.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a> {
    pub method: Method,
    pub config: &'a OptimizerConfig,
    pub source_ids: &'a [String],
    pub status: &'a RunStatus,
    pub evaluations: usize,
    pub incumbent: Option<f64>,
    pub total_reconstructions: usize,
    pub timings: TimingBreakdown,
    pub final_tree: Option<&'a TreeSnapshot>,
    pub region: Option<&'a TransferRegion>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: usize, y: f64) -> IterationRecord {
        IterationRecord {
            t,
            x: vec![y, -y],
            x_norm: vec![0.5, 0.5],
            y,
            incumbent: f64::NAN,
            leaf: Some(3),
            weights: vec![1.0, 0.1],
            reconstructions: 0,
            tree_nodes: Some(5),
            retries: 0,
            timings: Timings {
                evaluation: 0.25,
                ..Timings::default()
            },
        }
    }

    #[test]
    fn incumbent_is_running_max() {
        let mut trace = RunTrace::new(Method::MctsTransfer, &OptimizerConfig::default(), vec!["a".into(), "b".into()]);
        for (t, y) in [1.0, 3.0, 2.0, 5.0].into_iter().enumerate() {
            trace.push(record(t + 1, y));
        }
        let inc: Vec<f64> = trace.records.iter().map(|r| r.incumbent).collect();
        assert_eq!(inc, vec![1.0, 3.0, 3.0, 5.0]);
        assert_eq!(trace.best().unwrap().t, 4);
        assert_eq!(trace.total_timings().evaluation, 1.0);
    }

    #[test]
    fn csv_layout() {
        let mut trace = RunTrace::new(Method::MctsTransfer, &OptimizerConfig::default(), vec!["a".into(), "b".into()]);
        trace.push(record(1, 0.5));
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t,x_0,x_1,y,incumbent,leaf,tree_nodes,reconstructions,retries,w_a,w_b\n1,0.5,-0.5,0.5,0.5,3,5,0,0,1,0.1\n"
        );
        let json = serde_json::to_value(trace.sidecar()).unwrap();
        assert_eq!(json["status"]["status"], "completed");
        assert_eq!(json["timings"]["total"]["evaluation"], 0.25);
    }
}
