//! The transfer optimization loop and the baselines it is compared with.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ObjectiveScale, SearchDomain, TaskDataset, TaskRole};
use crate::error::{Error, Result};
use crate::partition::{ClassifierKind, FullSpace, Region, SamplingConfig};
use crate::region::{derive_transfer_region, RegionKind, TransferRegion};
use crate::similarity::{SimilarityConfig, SimilarityEngine};
use crate::surrogate::{fit_gp, propose_candidate, GpConfig};
use crate::trace::{IterationRecord, RunStatus, RunTrace, Timings};
use crate::tree::{ClusterFeatures, PartitionTree, Stage, TreeConfig, UcbMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    MctsTransfer,
    GpEi,
    LaMcts,
    BoxGp,
    EllipsoidGp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::MctsTransfer,
        Method::GpEi,
        Method::LaMcts,
        Method::BoxGp,
        Method::EllipsoidGp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MctsTransfer => "mcts_transfer",
            Method::GpEi => "gp_ei",
            Method::LaMcts => "la_mcts",
            Method::BoxGp => "box_gp",
            Method::EllipsoidGp => "ellipsoid_gp",
        }
    }

    pub fn uses_sources(self) -> bool {
        matches!(self, Method::MctsTransfer | Method::BoxGp | Method::EllipsoidGp)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which target samples the surrogate is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modeling {
    /// Every target sample; proposals are still restricted to the leaf.
    #[default]
    Global,
    /// Only the samples inside the selected leaf.
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub method: Method,
    pub gamma: f64,
    pub cp: f64,
    pub theta: usize,
    pub similarity: SimilarityConfig,
    pub eval_budget: usize,
    pub seed: u64,
    pub normalize_objectives: bool,
    /// Uniform points before the first model fit (GP baselines only).
    pub init_samples: usize,
    pub modeling: Modeling,
    pub sampling: SamplingConfig,
    pub gp: GpConfig,
    pub ucb_mode: UcbMode,
    pub cluster_features: ClusterFeatures,
    pub classifier: ClassifierKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::MctsTransfer,
            gamma: 0.99,
            cp: 0.1,
            theta: 10,
            similarity: SimilarityConfig::default(),
            eval_budget: 100,
            seed: 0,
            normalize_objectives: true,
            init_samples: 5,
            modeling: Modeling::Global,
            sampling: SamplingConfig::default(),
            gp: GpConfig::default(),
            ucb_mode: UcbMode::Potential,
            cluster_features: ClusterFeatures::PointAndValue,
            classifier: ClassifierKind::LogisticRegression,
        }
    }
}

impl OptimizerConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.eval_budget == 0 {
            return bad("eval_budget must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.cp >= 0.0 && self.cp.is_finite()) {
            return bad("cp must be a non-negative number");
        }
        let s = &self.similarity;
        if !(s.alpha > 0.0 && s.alpha <= 1.0) || !(s.beta > 0.0 && s.beta <= 1.0) {
            return bad("alpha and beta must lie in (0, 1]");
        }
        if !(s.percent > 0.0 && s.percent <= 1.0) {
            return bad("percent must lie in (0, 1]");
        }
        if s.best_n == 0 || s.kl_mc_samples == 0 {
            return bad("best_n and kl_mc_samples must be positive");
        }
        if self.sampling.draws_per_round == 0 || self.sampling.rounds == 0 {
            return bad("sampling needs at least one draw per round and one round");
        }
        Ok(())
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            theta: self.theta,
            gamma: self.gamma,
            cp: self.cp,
            ucb_mode: self.ucb_mode,
            cluster_features: self.cluster_features,
            classifier: self.classifier,
            seed: self.seed,
        }
    }

    fn scale(&self) -> ObjectiveScale {
        if self.normalize_objectives {
            ObjectiveScale::MinMax
        } else {
            ObjectiveScale::Raw
        }
    }

    fn gp_for_iteration(&self, t: usize) -> GpConfig {
        GpConfig {
            seed: self.gp.seed ^ self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t as u64),
            ..self.gp
        }
    }
}

/// A black-box function to maximize, taking points in original
/// coordinates.
pub trait Objective {
    fn evaluate(&self, x: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> f64> Objective for F {
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// Called after every completed mcts iteration with the updated tree.
pub type TreeObserver<'a> = dyn FnMut(&PartitionTree, &IterationRecord) + 'a;

/// Runs the configured method. Source data is ignored by methods that do
/// not transfer.
pub fn run_method(
    objective: &dyn Objective,
    domain: &SearchDomain,
    sources: &[TaskDataset],
    config: &OptimizerConfig,
) -> Result<RunTrace> {
    match config.method {
        Method::MctsTransfer => run_mcts_transfer(objective, domain, sources, config),
        Method::LaMcts => run_la_mcts(objective, domain, config),
        Method::GpEi => run_gp_ei(objective, domain, config),
        Method::BoxGp | Method::EllipsoidGp => {
            let kind = if config.method == Method::BoxGp {
                RegionKind::Box
            } else {
                RegionKind::Ellipsoid
            };
            let region = derive_transfer_region(sources, kind)?;
            let mut trace = run_region_gp_ei(objective, domain, &region, config)?;
            trace.source_ids = sources.iter().map(|s| s.task_id().to_string()).collect();
            Ok(trace)
        }
    }
}

pub fn run_mcts_transfer(
    objective: &dyn Objective,
    domain: &SearchDomain,
    sources: &[TaskDataset],
    config: &OptimizerConfig,
) -> Result<RunTrace> {
    run_mcts_transfer_observed(objective, domain, sources, config, &mut |_, _| {})
}

/// Tree search without source data: the transfer loop with no sources.
pub fn run_la_mcts(objective: &dyn Objective, domain: &SearchDomain, config: &OptimizerConfig) -> Result<RunTrace> {
    let mut trace = run_mcts_transfer(objective, domain, &[], config)?;
    trace.method = Method::LaMcts;
    Ok(trace)
}

pub fn run_gp_ei(objective: &dyn Objective, domain: &SearchDomain, config: &OptimizerConfig) -> Result<RunTrace> {
    let mut trace = region_loop(objective, domain, &FullSpace, config)?;
    trace.method = Method::GpEi;
    Ok(trace)
}

/// GP-EI with every candidate drawn from `region`.
pub fn run_region_gp_ei(
    objective: &dyn Objective,
    domain: &SearchDomain,
    region: &TransferRegion,
    config: &OptimizerConfig,
) -> Result<RunTrace> {
    let mut trace = region_loop(objective, domain, region, config)?;
    trace.method = match region {
        TransferRegion::Box { .. } => Method::BoxGp,
        TransferRegion::Ellipsoid { .. } => Method::EllipsoidGp,
    };
    trace.region = Some(region.clone());
    Ok(trace)
}

/// One uniform point of `region`: the first hit within the sampling budget,
/// else the draw closest to it.
pub fn uniform_in_region<R: Region + ?Sized, G: Rng + ?Sized>(
    dim: usize,
    region: &R,
    sampling: &SamplingConfig,
    rng: &mut G,
) -> Vec<f64> {
    let mut nearest: Option<(f64, Vec<f64>)> = None;
    for _ in 0..sampling.rounds.max(1) * sampling.draws_per_round.max(1) {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        if region.contains(&x) {
            return x;
        }
        let v = region.violation(&x);
        if nearest.as_ref().is_none_or(|(best, _)| v < *best) {
            nearest = Some((v, x));
        }
    }
    nearest.expect("at least one draw").1
}

struct Evaluated {
    x_norm: Vec<f64>,
    x: Vec<f64>,
    y: f64,
    retries: usize,
    seconds: f64,
}

/// Evaluates `x_norm`; on failure retries once at `fallback()`. Returns the
/// failure message if both attempts fail.
fn evaluate_with_retry(
    objective: &dyn Objective,
    domain: &SearchDomain,
    x_norm: Vec<f64>,
    mut fallback: impl FnMut() -> Vec<f64>,
) -> std::result::Result<Evaluated, String> {
    let start = Instant::now();
    let attempt = |u: &[f64]| -> std::result::Result<(Vec<f64>, f64), String> {
        let x = domain.denormalize_point(u).map_err(|e| e.to_string())?;
        match objective.evaluate(&x) {
            Ok(y) if y.is_finite() => Ok((x, y)),
            Ok(y) => Err(format!("objective returned {y}")),
            Err(e) => Err(e.to_string()),
        }
    };
    let first = match attempt(&x_norm) {
        Ok((x, y)) => {
            return Ok(Evaluated {
                x_norm,
                x,
                y,
                retries: 0,
                seconds: start.elapsed().as_secs_f64(),
            })
        }
        Err(e) => e,
    };
    let retry = fallback();
    match attempt(&retry) {
        Ok((x, y)) => Ok(Evaluated {
            x_norm: retry,
            x,
            y,
            retries: 1,
            seconds: start.elapsed().as_secs_f64(),
        }),
        Err(second) => Err(format!("{first}; retry failed: {second}")),
    }
}

fn prepare_sources(domain: &SearchDomain, sources: &[TaskDataset], scale: ObjectiveScale) -> Result<Vec<TaskDataset>> {
    sources
        .iter()
        .map(|s| {
            if s.dim() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: domain.dim(),
                    got: s.dim(),
                });
            }
            Ok(s.clone().with_scale(scale))
        })
        .collect()
}

/// The transfer loop, calling `observer` after every iteration.
pub fn run_mcts_transfer_observed(
    objective: &dyn Objective,
    domain: &SearchDomain,
    sources: &[TaskDataset],
    config: &OptimizerConfig,
    observer: &mut TreeObserver<'_>,
) -> Result<RunTrace> {
    config.validate()?;
    let dim = domain.dim();
    let scale = config.scale();
    let sources = prepare_sources(domain, sources, scale)?;
    let source_ids: Vec<String> = sources.iter().map(|s| s.task_id().to_string()).collect();
    let target = TaskDataset::new("target", TaskRole::Target, dim).with_scale(scale);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let build = Instant::now();
    let mut tree = PartitionTree::prelearn(config.tree_config(), config.similarity.clone(), sources, target)?;
    let prelearn_seconds = build.elapsed().as_secs_f64();
    let mut engine = SimilarityEngine::new(config.similarity.clone(), tree.sources().len());
    let mut trace = RunTrace::new(Method::MctsTransfer, config, source_ids);
    trace.prelearn_seconds = prelearn_seconds;

    for t in 1..=config.eval_budget {
        let leaf = tree.select_leaf();
        let region = tree.node(leaf).path.clone();

        let model_start = Instant::now();
        let candidate = if tree.target().is_empty() {
            uniform_in_region(dim, &region, &config.sampling, &mut rng)
        } else {
            let target = tree.target();
            let pool: Vec<usize> = match config.modeling {
                Modeling::Local if !tree.node(leaf).target_pool.is_empty() => tree.node(leaf).target_pool.clone(),
                _ => (0..target.len()).collect(),
            };
            let xs: Vec<Vec<f64>> = pool.iter().map(|&i| target.sample(i).x.clone()).collect();
            let ys: Vec<f64> = pool.iter().map(|&i| target.sample(i).y_raw).collect();
            let y_best = target.best().expect("target is non-empty").y_raw;
            let model = fit_gp(&xs, &ys, &config.gp_for_iteration(t))?;
            propose_candidate(&model, dim, &region, y_best, &config.sampling, &mut rng).x
        };
        let modeling = model_start.elapsed().as_secs_f64();

        let evaluated = match evaluate_with_retry(objective, domain, candidate, || {
            uniform_in_region(dim, &region, &config.sampling, &mut rng)
        }) {
            Ok(e) => e,
            Err(reason) => {
                trace.status = RunStatus::Aborted {
                    iteration: t,
                    reason,
                };
                break;
            }
        };

        let update_start = Instant::now();
        let idx = tree.add_target_sample(evaluated.x_norm.clone(), evaluated.y);
        tree.backpropagate(leaf, idx);
        let state = engine.update(tree.sources(), tree.target(), t, &mut rng).clone();
        let weights = state.global_weights(&config.similarity);
        tree.update_all_potentials(Some(state));
        tree.expand(leaf, Stage::Optimize);
        let backpropagation = update_start.elapsed().as_secs_f64();

        let rebuild_start = Instant::now();
        let reconstructions = tree.treeify(Stage::Optimize);
        let reconstruction = rebuild_start.elapsed().as_secs_f64();

        let record = trace.push(IterationRecord {
            t,
            x: evaluated.x,
            x_norm: evaluated.x_norm,
            y: evaluated.y,
            incumbent: evaluated.y,
            leaf: Some(leaf),
            weights,
            reconstructions,
            tree_nodes: Some(tree.len()),
            retries: evaluated.retries,
            timings: Timings {
                evaluation: evaluated.seconds,
                modeling,
                backpropagation,
                reconstruction,
            },
        });
        observer(&tree, record);
    }
    trace.final_tree = Some(tree.snapshot());
    Ok(trace)
}

fn region_loop<R: Region + ?Sized>(
    objective: &dyn Objective,
    domain: &SearchDomain,
    region: &R,
    config: &OptimizerConfig,
) -> Result<RunTrace> {
    config.validate()?;
    let dim = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut target = TaskDataset::new("target", TaskRole::Target, dim).with_scale(config.scale());
    let mut trace = RunTrace::new(config.method, config, Vec::new());

    for t in 1..=config.eval_budget {
        let model_start = Instant::now();
        let candidate = if target.len() < config.init_samples.max(1) {
            uniform_in_region(dim, region, &config.sampling, &mut rng)
        } else {
            let xs: Vec<Vec<f64>> = target.samples().iter().map(|s| s.x.clone()).collect();
            let ys: Vec<f64> = target.samples().iter().map(|s| s.y_raw).collect();
            let y_best = target.best().expect("target is non-empty").y_raw;
            let model = fit_gp(&xs, &ys, &config.gp_for_iteration(t))?;
            propose_candidate(&model, dim, region, y_best, &config.sampling, &mut rng).x
        };
        let modeling = model_start.elapsed().as_secs_f64();

        let evaluated = match evaluate_with_retry(objective, domain, candidate, || {
            uniform_in_region(dim, region, &config.sampling, &mut rng)
        }) {
            Ok(e) => e,
            Err(reason) => {
                trace.status = RunStatus::Aborted {
                    iteration: t,
                    reason,
                };
                break;
            }
        };
        target.push(evaluated.x_norm.clone(), evaluated.y);
        trace.push(IterationRecord {
            t,
            x: evaluated.x,
            x_norm: evaluated.x_norm,
            y: evaluated.y,
            incumbent: evaluated.y,
            leaf: None,
            weights: Vec::new(),
            reconstructions: 0,
            tree_nodes: None,
            retries: evaluated.retries,
            timings: Timings {
                evaluation: evaluated.seconds,
                modeling,
                ..Timings::default()
            },
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> f64 {
        -(x[0] - 0.3).powi(2)
    }

    fn small(method: Method, budget: usize, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            method,
            eval_budget: budget,
            seed,
            sampling: SamplingConfig {
                draws_per_round: 500,
                ..SamplingConfig::default()
            },
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = OptimizerConfig::default();
        assert_eq!((c.gamma, c.cp, c.theta, c.init_samples), (0.99, 0.1, 10, 5));
        assert!(c.normalize_objectives);
        assert_eq!(c.modeling, Modeling::Global);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let domain = SearchDomain::uniform(1, -1.0, 1.0).unwrap();
        let mut c = small(Method::GpEi, 0, 0);
        assert!(run_gp_ei(&quadratic, &domain, &c).is_err());
        c.eval_budget = 3;
        c.gamma = 1.5;
        assert!(run_gp_ei(&quadratic, &domain, &c).is_err());
    }

    #[test]
    fn single_evaluation_without_sources() {
        let domain = SearchDomain::uniform(1, -1.0, 1.0).unwrap();
        let trace = run_mcts_transfer(&quadratic, &domain, &[], &small(Method::MctsTransfer, 1, 4)).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].leaf, Some(0));
        assert!(trace.records[0].weights.is_empty());
    }

    #[test]
    fn gp_ei_beats_its_initial_design() {
        let domain = SearchDomain::uniform(1, -1.0, 1.0).unwrap();
        let trace = run_gp_ei(&quadratic, &domain, &small(Method::GpEi, 30, 1)).unwrap();
        let initial = trace.records[4].incumbent;
        let last = trace.records.last().unwrap().incumbent;
        assert!(last > initial || initial > -1e-6);
        assert!(-last < 1e-4, "regret {}", -last);
        for w in trace.records.windows(2) {
            assert!(w[1].incumbent >= w[0].incumbent);
        }
    }

    #[test]
    fn failing_objective_retries_then_aborts() {
        let domain = SearchDomain::uniform(1, 0.0, 1.0).unwrap();
        let calls = std::cell::Cell::new(0);
        let flaky = |x: &[f64]| {
            calls.set(calls.get() + 1);
            if calls.get() == 2 {
                f64::NAN
            } else {
                x[0]
            }
        };
        let trace = run_gp_ei(&flaky, &domain, &small(Method::GpEi, 4, 0)).unwrap();
        assert_eq!(trace.records.len(), 4);
        assert_eq!(trace.records[1].retries, 1);
        assert_eq!(trace.status, RunStatus::Completed);

        let broken = |_: &[f64]| f64::NAN;
        let trace = run_gp_ei(&broken, &domain, &small(Method::GpEi, 4, 0)).unwrap();
        assert!(trace.records.is_empty());
        assert!(matches!(trace.status, RunStatus::Aborted { iteration: 1, .. }));
    }

    #[test]
    fn full_space_region_matches_gp_ei() {
        let domain = SearchDomain::uniform(2, -1.0, 1.0).unwrap();
        let f = |x: &[f64]| -(x[0] * x[0] + x[1] * x[1]);
        let cfg = small(Method::GpEi, 12, 3);
        let a = run_gp_ei(&f, &domain, &cfg).unwrap();
        let whole = TransferRegion::Box {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        let b = run_region_gp_ei(&f, &domain, &whole, &cfg).unwrap();
        let xs = |t: &RunTrace| t.records.iter().map(|r| r.x.clone()).collect::<Vec<_>>();
        assert_eq!(xs(&a), xs(&b));
    }
}
