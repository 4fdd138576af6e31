use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcts_transfer_harness::aggregate::RANKS_FILE;
use mcts_transfer_harness::run::{read_rows, read_summary, read_weights, write_rows};
use mcts_transfer_harness::{
    aggregate_ranks, emit_plots, generate_data, run_experiment, ExperimentSpec, HarnessError, RunOptions,
};

const EXIT_INVALID: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "mcts-transfer", version, about = "Transfer Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every problem × method × seed of an experiment spec.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; overrides `out` in the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Compute mean ranks from a result directory's summary.
    Aggregate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render charts for a result directory.
    Plot {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the source datasets listed in a manifest.
    GenData {
        #[arg(long)]
        manifest: PathBuf,
        /// Only these dataset ids.
        #[arg(long = "only")]
        only: Vec<String>,
    },
    /// Check a spec and every dataset it references without running.
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, HarnessError> {
    match command {
        Command::Run {
            spec,
            out,
            workers,
            seed_offset,
        } => {
            let spec = ExperimentSpec::load(&spec)?;
            let out = out
                .or_else(|| spec.out_dir())
                .ok_or_else(|| HarnessError::Invalid("no output directory: pass --out or set `out`".into()))?;
            let experiment = spec.validate()?;
            let mut options = RunOptions {
                seed_offset,
                ..RunOptions::default()
            };
            if let Some(w) = workers {
                options.workers = w;
            }
            let report = run_experiment(&experiment, &out, &options)?;
            let failed = report.failures();
            println!(
                "{} runs written to {} ({} completed, {failed} not completed)",
                report.runs.len(),
                out.display(),
                report.runs.len() - failed
            );
            Ok(if failed > 0 {
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Aggregate { out } => {
            let ranks = aggregate_ranks(&read_summary(&out)?);
            if ranks.is_empty() {
                println!("fewer than two methods: no ranks written");
            } else {
                write_rows(&out.join(RANKS_FILE), &ranks)?;
                println!("{} rank rows written to {}", ranks.len(), out.join(RANKS_FILE).display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { out } => {
            let summary = read_summary(&out)?;
            let ranks = load_or_compute_ranks(&out, &summary)?;
            let report = emit_plots(&out, &summary, &ranks, &read_weights(&out)?)?;
            for notice in &report.skipped {
                println!("{notice}");
            }
            println!("{} files written", report.written.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::GenData { manifest, only } => {
            for path in generate_data(&manifest, &only)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { spec } => {
            let experiment = ExperimentSpec::load(&spec)?.validate()?;
            println!(
                "ok: {} problems × {} methods × {} seeds",
                experiment.problems.len(),
                experiment.methods.len(),
                experiment.spec.seeds.len()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_or_compute_ranks(
    out: &Path,
    summary: &[mcts_transfer_harness::SummaryRow],
) -> Result<Vec<mcts_transfer_harness::RankRow>, HarnessError> {
    let path = out.join(RANKS_FILE);
    if path.exists() {
        read_rows(&path)
    } else {
        Ok(aggregate_ranks(summary))
    }
}
