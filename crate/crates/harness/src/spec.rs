//! Experiment specification files.
//!
//! A spec names the problems, the method configurations, the seeds and the
//! evaluation budget. It is read from TOML (`.toml`) or JSON (anything
//! else). Relative paths inside it resolve against the spec file's
//! directory.
//!
//! ```toml
//! source_manifest = "data/manifest.toml"
//! seeds = [0, 1, 2]
//! budget = 100
//! out = "results"
//!
//! [[problems]]
//! id = "sphere_mixed"
//! sources = ["d_5_5", "d_5_-5"]
//! problem = { function = "sphere", dim = 2, lower = [-10, -10], upper = [10, 10], optimum = [4, 4] }
//!
//! [[methods]]
//! method = "mcts_transfer"
//! gamma = 0.99
//!
//! [[methods]]
//! label = "gp_ei"
//! method = "gp_ei"
//! ```
//!
//! A method entry accepts every optimizer setting; `eval_budget` and `seed`
//! are overridden per run by `budget` and `seeds`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use mcts_transfer::bench::{BenchmarkProblem, DataManifest, ProblemSpec};
use mcts_transfer::domain::{TaskDataset, TaskRole};
use mcts_transfer::io::read_dataset;
use mcts_transfer::optimizer::{Method, OptimizerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_manifest: Option<PathBuf>,
    pub problems: Vec<ProblemEntry>,
    pub methods: Vec<MethodEntry>,
    pub seeds: Vec<u64>,
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemEntry {
    pub id: String,
    pub problem: ProblemSpec,
    /// Manifest ids of the source datasets, in order.
    #[serde(default)]
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    /// Name used in outputs; defaults to the method name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub config: OptimizerConfig,
}

impl MethodEntry {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { label: None, config }
    }

    pub fn labelled(label: &str, config: OptimizerConfig) -> Self {
        Self {
            label: Some(label.to_string()),
            config,
        }
    }

    pub fn name(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.config.method.as_str().to_string())
    }
}

/// A problem with its source datasets loaded and normalized.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub id: String,
    pub problem: BenchmarkProblem,
    pub sources: Vec<TaskDataset>,
}

/// A validated spec, ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub problems: Vec<PreparedProblem>,
    /// `(label, config)` per method entry.
    pub methods: Vec<(String, OptimizerConfig)>,
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Invalid(msg.into())
}

fn safe_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl ExperimentSpec {
    pub fn new(problems: Vec<ProblemEntry>, methods: Vec<MethodEntry>, seeds: Vec<u64>, budget: usize) -> Self {
        Self {
            source_manifest: None,
            problems,
            methods,
            seeds,
            budget,
            out: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let mut spec = Self::parse(&text, is_toml).map_err(|e| match e {
            HarnessError::Invalid(msg) => invalid(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn parse(text: &str, is_toml: bool) -> Result<Self> {
        if is_toml {
            toml::from_str(text).map_err(|e| invalid(e.to_string()))
        } else {
            serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Directory that relative paths in the spec are taken from.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// The output directory named by the spec, if any.
    pub fn out_dir(&self) -> Option<PathBuf> {
        self.out.as_deref().map(|p| self.resolve(p))
    }

    /// Checks the spec and loads every dataset it references. Nothing is
    /// run, and the first problem found is reported.
    pub fn validate(&self) -> Result<Experiment> {
        if self.problems.is_empty() {
            return Err(invalid("no problems listed"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods listed"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("no seeds listed"));
        }
        if self.budget == 0 {
            return Err(invalid("budget must be at least 1"));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(invalid(format!("seed {s} is listed twice")));
        }

        let mut labels = HashSet::new();
        let mut methods = Vec::with_capacity(self.methods.len());
        for entry in &self.methods {
            let label = entry.name();
            if !safe_name(&label) {
                return Err(invalid(format!("method label `{label}` must be ASCII letters, digits, '-', '_' or '.'")));
            }
            if !labels.insert(label.clone()) {
                return Err(invalid(format!("method label `{label}` is used twice")));
            }
            let config = OptimizerConfig {
                eval_budget: self.budget,
                ..entry.config.clone()
            };
            config.validate().map_err(|e| invalid(format!("method `{label}`: {e}")))?;
            methods.push((label, config));
        }

        let manifest = match &self.source_manifest {
            Some(p) => {
                let path = self.resolve(p);
                let m = DataManifest::load(&path).map_err(|e| invalid(format!("source manifest: {e}")))?;
                Some((path, m))
            }
            None => None,
        };

        let mut ids = HashSet::new();
        let mut problems = Vec::with_capacity(self.problems.len());
        for entry in &self.problems {
            if !safe_name(&entry.id) {
                return Err(invalid(format!("problem id `{}` must be ASCII letters, digits, '-', '_' or '.'", entry.id)));
            }
            if !ids.insert(entry.id.clone()) {
                return Err(invalid(format!("problem id `{}` is used twice", entry.id)));
            }
            let mut problem = entry
                .problem
                .build()
                .map_err(|e| invalid(format!("problem `{}`: {e}", entry.id)))?;
            problem.name = entry.id.clone();

            let mut sources = Vec::with_capacity(entry.sources.len());
            for source_id in &entry.sources {
                let Some((manifest_path, manifest)) = &manifest else {
                    return Err(invalid(format!(
                        "problem `{}` lists sources but the spec has no source_manifest",
                        entry.id
                    )));
                };
                let item = manifest.entry(source_id).ok_or_else(|| {
                    invalid(format!("problem `{}`: dataset `{source_id}` is not in the manifest", entry.id))
                })?;
                let path = DataManifest::resolve(manifest_path, item);
                if !path.exists() {
                    return Err(invalid(format!(
                        "dataset `{source_id}` is missing at {} (run gen-data first)",
                        path.display()
                    )));
                }
                let file = read_dataset(&path, Some(&problem.domain))
                    .map_err(|e| invalid(format!("dataset `{source_id}`: {e}")))?;
                let report = file
                    .validate()
                    .map_err(|e| invalid(format!("dataset `{source_id}`: {e}")))?;
                if !report.is_ok() {
                    return Err(invalid(format!("dataset `{source_id}` failed validation: {report:?}")));
                }
                let same_box = file.header.lower == problem.domain.lower() && file.header.upper == problem.domain.upper();
                if !same_box {
                    return Err(invalid(format!(
                        "dataset `{source_id}` was recorded on a different box than problem `{}`",
                        entry.id
                    )));
                }
                sources.push(
                    file.to_task(TaskRole::Source)
                        .map_err(|e| invalid(format!("dataset `{source_id}`: {e}")))?,
                );
            }

            for (label, config) in &methods {
                if matches!(config.method, Method::BoxGp | Method::EllipsoidGp) && sources.is_empty() {
                    return Err(invalid(format!(
                        "method `{label}` derives its region from source data but problem `{}` has none",
                        entry.id
                    )));
                }
            }
            problems.push(PreparedProblem {
                id: entry.id.clone(),
                problem,
                sources,
            });
        }

        Ok(Experiment {
            spec: self.clone(),
            problems,
            methods,
        })
    }
}
