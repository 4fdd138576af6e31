//! Space division: two-cluster k-means, good/bad labeling, linear
//! classifiers, region membership and in-region rejection sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::squared_distance;
use crate::error::{Error, Result};

const KMEANS_MAX_ITER: usize = 100;

/// Result of a successful two-way clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoClusters {
    /// Cluster index (0 or 1) per input row.
    pub labels: Vec<usize>,
    pub centroids: [Vec<f64>; 2],
    pub iterations: usize,
}

impl TwoClusters {
    pub fn sizes(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }
}

/// Lloyd's algorithm with k-means++ seeding for k = 2.
///
/// Returns `None` when the rows cannot be clustered, i.e. fewer than two
/// distinct feature vectors. Both returned clusters are non-empty.
pub fn kmeans_two(features: &[Vec<f64>], seed: u64) -> Option<TwoClusters> {
    let n = features.len();
    if n < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let first = rng.random_range(0..n);
    let d2: Vec<f64> = features
        .iter()
        .map(|f| squared_distance(f, &features[first]))
        .collect();
    let total: f64 = d2.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut second = n - 1;
    for (i, &w) in d2.iter().enumerate() {
        if w > 0.0 && target < w {
            second = i;
            break;
        }
        target -= w;
    }
    if d2[second] <= 0.0 {
        // rounding pushed us onto a duplicate of the first centroid
        second = d2
            .iter()
            .enumerate()
            .fold(0, |best, (i, &w)| if w > d2[best] { i } else { best });
    }

    let mut centroids = [features[first].clone(), features[second].clone()];
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let l = usize::from(squared_distance(f, &centroids[1]) < squared_distance(f, &centroids[0]));
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
        }
        for c in 0..2 {
            if !labels.contains(&c) {
                // reseed with the point farthest from the surviving centroid
                let other = &centroids[1 - c];
                let far = (0..n)
                    .fold(0, |best, i| {
                        if squared_distance(&features[i], other) > squared_distance(&features[best], other) {
                            i
                        } else {
                            best
                        }
                    });
                labels[far] = c;
                changed = true;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            *centroid = mean_of(features, labels.iter().map(|&l| l == c));
        }
        if !changed {
            break;
        }
    }
    Some(TwoClusters {
        labels,
        centroids,
        iterations,
    })
}

fn mean_of(rows: &[Vec<f64>], mask: impl Iterator<Item = bool>) -> Vec<f64> {
    let dim = rows[0].len();
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for (row, keep) in rows.iter().zip(mask) {
        if keep {
            count += 1;
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    acc.iter_mut().for_each(|a| *a /= count.max(1) as f64);
    acc
}

/// Picks the "good" cluster: the one with the larger mean objective. On a
/// tie the cluster holding the single best sample wins.
pub fn label_good_bad(ys: &[f64], labels: &[usize]) -> usize {
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (&y, &l) in ys.iter().zip(labels) {
        sum[l] += y;
        count[l] += 1;
        if y > best.0 {
            best = (y, l);
        }
    }
    let mean = |c: usize| sum[c] / count[c].max(1) as f64;
    let (m0, m1) = (mean(0), mean(1));
    if m0 > m1 {
        0
    } else if m1 > m0 {
        1
    } else {
        best.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    LogisticRegression,
    LinearSvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

/// Linear decision boundary `w·x + b` in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub kind: ClassifierKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub good_side: Sign,
}

impl Classifier {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn is_good(&self, x: &[f64]) -> bool {
        let s = self.score(x);
        match self.good_side {
            Sign::Positive => s > 0.0,
            Sign::Negative => s <= 0.0,
        }
    }
}

const L2_STRENGTH: f64 = 1e-4;
const CLASSIFIER_MAX_ITER: usize = 500;

/// Fits a linear classifier separating `good` rows from the rest.
/// Returns the classifier and its training accuracy; imperfect fits are
/// still returned.
pub fn fit_classifier(
    features: &[Vec<f64>],
    good: &[bool],
    kind: ClassifierKind,
) -> Result<(Classifier, f64)> {
    if features.len() != good.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: good.len(),
        });
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier features".into()));
    }
    if !good.contains(&true) || !good.contains(&false) {
        return Err(Error::Degenerate("both classes must be present".into()));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::MalformedDataset("ragged feature rows".into()));
    }

    // Standardize so one step size suits every problem; folded back below.
    let n = features.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..dim)
        .map(|j| {
            let var = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|f| (0..dim).map(|j| (f[j] - mean[j]) / scale[j]).collect())
        .collect();

    let (w, b) = match kind {
        ClassifierKind::LogisticRegression => logistic_ascent(&z, good),
        ClassifierKind::LinearSvm => hinge_descent(&z, good),
    };

    let weights: Vec<f64> = (0..dim).map(|j| w[j] / scale[j]).collect();
    let bias = b - (0..dim).map(|j| w[j] * mean[j] / scale[j]).sum::<f64>();
    let clf = Classifier {
        kind,
        weights,
        bias,
        good_side: Sign::Positive,
    };
    let acc = accuracy(&clf, features, good);
    Ok((clf, acc))
}

pub fn accuracy(clf: &Classifier, features: &[Vec<f64>], good: &[bool]) -> f64 {
    let hits = features
        .iter()
        .zip(good)
        .filter(|(f, &g)| clf.is_good(f) == g)
        .count();
    hits as f64 / features.len() as f64
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Gradient ascent on the L2-regularized log-likelihood, from zero.
fn logistic_ascent(z: &[Vec<f64>], good: &[bool]) -> (Vec<f64>, f64) {
    let dim = z[0].len();
    let n = z.len() as f64;
    // Lipschitz bound of the gradient for standardized features plus bias.
    let step = 1.0 / ((dim as f64 + 1.0) / 4.0 + L2_STRENGTH);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut gw = vec![0.0; dim];
    for _ in 0..CLASSIFIER_MAX_ITER {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (row, &g) in z.iter().zip(good) {
            let t = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let resid = f64::from(u8::from(g)) - sigmoid(t);
            for (acc, v) in gw.iter_mut().zip(row) {
                *acc += resid * v;
            }
            gb += resid;
        }
        let mut norm2 = 0.0;
        for (g, wj) in gw.iter_mut().zip(&w) {
            *g = *g / n - L2_STRENGTH * wj;
            norm2 += *g * *g;
        }
        gb /= n;
        norm2 += gb * gb;
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj += step * g;
        }
        b += step * gb;
        if norm2 < 1e-18 {
            break;
        }
    }
    (w, b)
}

/// Full-batch subgradient descent on the regularized hinge loss. Keeps the
/// iterate with the best training accuracy.
fn hinge_descent(z: &[Vec<f64>], good: &[bool]) -> (Vec<f64>, f64) {
    let dim = z[0].len();
    let n = z.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut best = (w.clone(), b, -1.0);
    for it in 0..CLASSIFIER_MAX_ITER {
        let step = 1.0 / ((it + 1) as f64).sqrt();
        let mut gw: Vec<f64> = w.iter().map(|wj| L2_STRENGTH * wj).collect();
        let mut gb = 0.0;
        let mut hits = 0usize;
        for (row, &g) in z.iter().zip(good) {
            let y = if g { 1.0 } else { -1.0 };
            let t = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            if (t > 0.0) == g {
                hits += 1;
            }
            if y * t < 1.0 {
                for (acc, v) in gw.iter_mut().zip(row) {
                    *acc -= y * v / n;
                }
                gb -= y / n;
            }
        }
        let acc = hits as f64 / n;
        if acc > best.2 {
            best = (w.clone(), b, acc);
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= step * g;
        }
        b -= step * gb;
    }
    (best.0, best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub classifier: Classifier,
    pub side: Side,
}

impl PathStep {
    pub fn admits(&self, x: &[f64]) -> bool {
        self.classifier.is_good(x) == (self.side == Side::Good)
    }
}

/// Conjunction of classifier tests from the root to a node. Empty = whole
/// domain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionPath {
    pub steps: Vec<PathStep>,
}

impl RegionPath {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn child(&self, classifier: &Classifier, side: Side) -> Self {
        let mut steps = self.steps.clone();
        steps.push(PathStep {
            classifier: classifier.clone(),
            side,
        });
        Self { steps }
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }
}

/// A subset of the normalized unit cube that candidates can be filtered by.
pub trait Region {
    fn contains(&self, x: &[f64]) -> bool;

    /// How badly `x` misses the region; zero inside. Only the ordering
    /// matters.
    fn violation(&self, x: &[f64]) -> f64;
}

impl Region for RegionPath {
    fn contains(&self, x: &[f64]) -> bool {
        self.steps.iter().all(|s| s.admits(x))
    }

    fn violation(&self, x: &[f64]) -> f64 {
        self.steps.iter().filter(|s| !s.admits(x)).count() as f64
    }
}

pub fn region_contains(path: &RegionPath, x: &[f64]) -> bool {
    path.contains(x)
}

/// The whole unit cube.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullSpace;

impl Region for FullSpace {
    fn contains(&self, _: &[f64]) -> bool {
        true
    }

    fn violation(&self, _: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub draws_per_round: usize,
    pub rounds: usize,
    pub fallback_points: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            draws_per_round: 10_000,
            rounds: 3,
            fallback_points: 10,
        }
    }
}

/// Rejection-samples uniform points of the unit cube that fall in `region`.
///
/// Draws rounds of `draws_per_round` points until that many have been
/// retained or the rounds run out. If nothing was retained, returns the
/// drawn points with the smallest violation, so the result is never empty.
pub fn sample_in_region<R: Region + ?Sized, G: Rng + ?Sized>(
    dim: usize,
    region: &R,
    config: &SamplingConfig,
    rng: &mut G,
) -> Vec<Vec<f64>> {
    let keep = config.fallback_points.max(1);
    // (violation, draw order, point), sorted ascending
    let mut nearest: Vec<(f64, usize, Vec<f64>)> = Vec::with_capacity(keep + 1);
    let mut order = 0usize;
    let target = config.draws_per_round.max(1);
    let mut retained = Vec::new();
    for _ in 0..config.rounds.max(1) {
        for _ in 0..target {
            let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            if region.contains(&x) {
                retained.push(x);
            } else if retained.is_empty() {
                let v = region.violation(&x);
                if nearest.len() < keep || v < nearest[keep - 1].0 {
                    let pos = nearest.partition_point(|e| e.0 <= v);
                    nearest.insert(pos, (v, order, x));
                    nearest.truncate(keep);
                }
            }
            order += 1;
        }
        if retained.len() >= target {
            break;
        }
    }
    if !retained.is_empty() {
        return retained;
    }
    nearest.into_iter().map(|(_, _, x)| x).collect()
}
