//! Source/target task distances, rankings and weight strategies.
//!
//! Distances are "smaller is more similar" throughout. The rank of a source
//! task is its 0-indexed position when tasks are sorted by ascending
//! distance, so the most similar task always has rank 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{euclidean, TaskDataset};
use crate::surrogate::{fit_gp, GpConfig, GpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMeasure {
    #[default]
    BestNMean,
    OptimalPoint,
    BestNPercent,
    Kendall,
    KlDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStrategy {
    #[default]
    Linear,
    Exponential,
    AllOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub measure: DistanceMeasure,
    pub best_n: usize,
    pub percent: f64,
    pub strategy: WeightStrategy,
    pub alpha: f64,
    pub beta: f64,
    pub kl_mc_samples: usize,
    /// Distances are refreshed every this many target evaluations.
    pub recompute_every: usize,
    /// Surrogate settings for the Kendall measure.
    pub gp: GpConfig,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            measure: DistanceMeasure::BestNMean,
            best_n: 5,
            percent: 0.30,
            strategy: WeightStrategy::Linear,
            alpha: 0.5,
            beta: 0.5,
            kl_mc_samples: 1024,
            recompute_every: 1,
            gp: GpConfig::default(),
        }
    }
}

/// Mean location of the `n` best samples (by raw objective; earlier samples
/// win ties). `n` is clamped to the dataset size.
pub fn best_n_mean(dataset: &TaskDataset, n: usize) -> Option<Vec<f64>> {
    if dataset.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&a, &b| {
        dataset
            .sample(b)
            .y_raw
            .total_cmp(&dataset.sample(a).y_raw)
    });
    let take = n.clamp(1, dataset.len());
    let mut mean = vec![0.0; dataset.dim()];
    for &i in &order[..take] {
        for (m, v) in mean.iter_mut().zip(&dataset.sample(i).x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= take as f64);
    Some(mean)
}

fn point_count(dataset: &TaskDataset, config: &SimilarityConfig) -> usize {
    match config.measure {
        DistanceMeasure::OptimalPoint => 1,
        DistanceMeasure::BestNPercent => (config.percent * dataset.len() as f64).ceil() as usize,
        _ => config.best_n,
    }
}

/// Euclidean distance (normalized coordinates) between the best-point
/// summaries of two datasets. Empty inputs give 0.
pub fn distance_points(source: &TaskDataset, target: &TaskDataset, config: &SimilarityConfig) -> f64 {
    match (
        best_n_mean(source, point_count(source, config)),
        best_n_mean(target, point_count(target, config)),
    ) {
        (Some(a), Some(b)) => euclidean(&a, &b),
        _ => 0.0,
    }
}

/// One minus the fraction of target pairs whose predicted order agrees with
/// their observed order.
pub fn kendall_distance(predictions: &[f64], observed: &[f64]) -> f64 {
    let n = observed.len();
    if n < 2 {
        return 0.0;
    }
    let mut agree = 0usize;
    for j in 0..n {
        for k in j + 1..n {
            if (predictions[j] < predictions[k]) == (observed[j] < observed[k]) {
                agree += 1;
            }
        }
    }
    1.0 - 2.0 * agree as f64 / (n * (n - 1)) as f64
}

/// Kendall distance of the target data under a surrogate fitted on a source
/// task. A missing surrogate counts as maximally dissimilar.
pub fn distance_kendall(source_model: Option<&GpModel>, target: &TaskDataset) -> f64 {
    let Some(model) = source_model else {
        return 1.0;
    };
    if target.len() < 2 {
        return 0.0;
    }
    let xs: Vec<Vec<f64>> = target.samples().iter().map(|s| s.x.clone()).collect();
    let preds: Vec<f64> = model.predict_batch(&xs).into_iter().map(|(m, _)| m).collect();
    let ys: Vec<f64> = target.samples().iter().map(|s| s.y_raw).collect();
    kendall_distance(&preds, &ys)
}

pub fn fit_source_model(source: &TaskDataset, config: &GpConfig) -> Option<GpModel> {
    let xs: Vec<Vec<f64>> = source.samples().iter().map(|s| s.x.clone()).collect();
    let ys: Vec<f64> = source.samples().iter().map(|s| s.y_raw).collect();
    fit_gp(&xs, &ys, config).ok()
}

/// Product-Gaussian KDE with Scott's rule bandwidth per axis.
#[derive(Debug, Clone)]
pub struct GaussianKde {
    points: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    log_norm: f64,
}

impl GaussianKde {
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        let n = points.len();
        let dim = points[0].len();
        let factor = (n as f64).powf(-1.0 / (dim as f64 + 4.0));
        let bandwidth: Vec<f64> = (0..dim)
            .map(|d| {
                let mean = points.iter().map(|p| p[d]).sum::<f64>() / n as f64;
                let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>()
                    / (n.saturating_sub(1).max(1)) as f64;
                // a flat axis still needs a usable kernel width
                (var.sqrt() * factor).max(1e-3)
            })
            .collect();
        let log_norm = -(n as f64).ln()
            - bandwidth
                .iter()
                .map(|h| h.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
                .sum::<f64>();
        Self {
            points,
            bandwidth,
            log_norm,
        }
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let sum: f64 = self
            .points
            .iter()
            .map(|p| {
                let q: f64 = p
                    .iter()
                    .zip(x)
                    .zip(&self.bandwidth)
                    .map(|((a, b), h)| ((a - b) / h).powi(2))
                    .sum();
                (-0.5 * q).exp()
            })
            .sum();
        sum * self.log_norm.exp()
    }
}

const DENSITY_FLOOR: f64 = 1e-12;

/// KL(p‖q) with p the target density and q the source density, both KDEs
/// over `x`, estimated on uniform Monte Carlo points of the unit cube as a
/// divergence between the normalized discrete masses.
pub fn distance_kl<G: Rng + ?Sized>(
    source: &TaskDataset,
    target: &TaskDataset,
    mc_samples: usize,
    rng: &mut G,
) -> f64 {
    if source.len() < 2 || target.len() < 2 {
        return 0.0;
    }
    let xs = |d: &TaskDataset| d.samples().iter().map(|s| s.x.clone()).collect::<Vec<_>>();
    let p_kde = GaussianKde::new(xs(target));
    let q_kde = GaussianKde::new(xs(source));
    let dim = target.dim();
    let mut p = Vec::with_capacity(mc_samples);
    let mut q = Vec::with_capacity(mc_samples);
    for _ in 0..mc_samples.max(1) {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        p.push(p_kde.density(&x).max(DENSITY_FLOOR));
        q.push(q_kde.density(&x).max(DENSITY_FLOOR));
    }
    kl_divergence(&p, &q)
}

/// KL divergence between two non-negative weight vectors after normalizing
/// each to unit mass.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| {
            let (a, b) = (a / sp, b / sq);
            a * (a / b).ln()
        })
        .sum();
    kl
}

/// Weight per task from dense 0-indexed ranks among the `n_m` contributing
/// tasks.
pub fn assign_weights(local_ranks: &[usize], n_m: usize, config: &SimilarityConfig) -> Vec<f64> {
    if n_m == 0 {
        return Vec::new();
    }
    local_ranks
        .iter()
        .map(|&r| weight_for_rank(r, n_m, config))
        .collect()
}

const LINEAR_FLOOR: f64 = 0.1;

pub fn weight_for_rank(rank: usize, n_m: usize, config: &SimilarityConfig) -> f64 {
    let r = rank as f64;
    match config.strategy {
        WeightStrategy::Linear => {
            let cut = config.alpha * n_m as f64;
            if r < cut {
                // non-integer cut-offs can dip below the floor just before it
                (1.0 - r / cut).max(LINEAR_FLOOR)
            } else {
                LINEAR_FLOOR
            }
        }
        WeightStrategy::Exponential => config.beta.powf(r),
        WeightStrategy::AllOne => 1.0,
    }
}

/// Distances and the ascending global order at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityState {
    pub distances: Vec<f64>,
    /// Task indices sorted by ascending distance (ties by task id).
    pub global_order: Vec<usize>,
    /// Inverse of `global_order`: rank of each task index.
    pub global_rank: Vec<usize>,
    pub computed_at: usize,
}

impl SimilarityState {
    pub fn from_distances(distances: Vec<f64>, task_ids: &[&str], computed_at: usize) -> Self {
        let mut order: Vec<usize> = (0..distances.len()).collect();
        order.sort_by(|&a, &b| {
            distances[a]
                .total_cmp(&distances[b])
                .then_with(|| task_ids[a].cmp(task_ids[b]))
                .then(a.cmp(&b))
        });
        let mut rank = vec![0; order.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        Self {
            distances,
            global_order: order,
            global_rank: rank,
            computed_at,
        }
    }

    /// Dense re-ranking of a subset of tasks by their global order.
    pub fn local_ranks(&self, contributing: &[usize]) -> Vec<usize> {
        let mut sorted: Vec<usize> = contributing.to_vec();
        sorted.sort_by_key(|&i| self.global_rank[i]);
        contributing
            .iter()
            .map(|i| sorted.iter().position(|j| j == i).expect("task is in the subset"))
            .collect()
    }

    /// Weights with every task contributing (`N_m = K`).
    pub fn global_weights(&self, config: &SimilarityConfig) -> Vec<f64> {
        let k = self.global_rank.len();
        self.global_rank
            .iter()
            .map(|&r| weight_for_rank(r, k, config))
            .collect()
    }
}

/// Computes distances for every source task, caching per-source surrogates
/// for the Kendall measure.
#[derive(Debug, Clone)]
pub struct SimilarityEngine {
    config: SimilarityConfig,
    source_models: Vec<Option<Option<GpModel>>>,
    state: Option<SimilarityState>,
}

impl SimilarityEngine {
    pub fn new(config: SimilarityConfig, n_sources: usize) -> Self {
        Self {
            config,
            source_models: vec![None; n_sources],
            state: None,
        }
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&SimilarityState> {
        self.state.as_ref()
    }

    /// Refreshes the state if it is due at evaluation count `t`, and returns
    /// it.
    pub fn update<G: Rng + ?Sized>(
        &mut self,
        sources: &[TaskDataset],
        target: &TaskDataset,
        t: usize,
        rng: &mut G,
    ) -> &SimilarityState {
        let every = self.config.recompute_every.max(1);
        let due = match &self.state {
            None => true,
            Some(s) => t >= s.computed_at + every,
        };
        if due {
            let distances = self.distances(sources, target, rng);
            let ids: Vec<&str> = sources.iter().map(TaskDataset::task_id).collect();
            self.state = Some(SimilarityState::from_distances(distances, &ids, t));
        }
        self.state.as_ref().expect("state was just computed")
    }

    pub fn distances<G: Rng + ?Sized>(
        &mut self,
        sources: &[TaskDataset],
        target: &TaskDataset,
        rng: &mut G,
    ) -> Vec<f64> {
        if target.is_empty() {
            return vec![0.0; sources.len()];
        }
        match self.config.measure {
            DistanceMeasure::Kendall => {
                let gp = self.config.gp;
                sources
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let model = self.source_models[i].get_or_insert_with(|| fit_source_model(s, &gp));
                        distance_kendall(model.as_ref(), target)
                    })
                    .collect()
            }
            DistanceMeasure::KlDivergence => sources
                .iter()
                .map(|s| distance_kl(s, target, self.config.kl_mc_samples, rng))
                .collect(),
            _ => sources
                .iter()
                .map(|s| distance_points(s, target, &self.config))
                .collect(),
        }
    }
}
