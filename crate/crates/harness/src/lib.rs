//! Experiment harness for `mcts-transfer`: spec files, seeded multi-method
//! runs, rank aggregation and SVG plots.

pub mod aggregate;
pub mod error;
pub mod plot;
pub mod run;
pub mod spec;

pub use aggregate::{aggregate_ranks, RankRow, RANKS_FILE};
pub use error::{HarnessError, Result};
pub use plot::{emit_plots, PlotReport};
pub use run::{run_experiment, ExperimentReport, RunOptions, Status, SummaryRow, WeightRow};
pub use spec::{Experiment, ExperimentSpec, MethodEntry, ProblemEntry};

use std::path::{Path, PathBuf};

use mcts_transfer::bench::{generate_entry, DataManifest};

/// Generates every dataset of a manifest, or only those in `only` when it
/// is non-empty. Returns the written paths.
pub fn generate_data(manifest_path: &Path, only: &[String]) -> Result<Vec<PathBuf>> {
    let manifest = DataManifest::load(manifest_path)?;
    if let Some(id) = only.iter().find(|id| manifest.entry(id).is_none()) {
        return Err(HarnessError::Invalid(format!("dataset `{id}` is not in the manifest")));
    }
    let mut written = Vec::new();
    for entry in &manifest.datasets {
        if only.is_empty() || only.contains(&entry.id) {
            log::info!("generating {}", entry.id);
            written.push(generate_entry(manifest_path, entry)?);
        }
    }
    Ok(written)
}
