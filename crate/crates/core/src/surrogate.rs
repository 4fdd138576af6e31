//! Gaussian-process regression with a Matérn-5/2 kernel, Expected
//! Improvement, and in-region candidate proposal.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::domain::squared_distance;
use crate::error::{Error, Result};
use crate::partition::{sample_in_region, Region, SamplingConfig};

const SQRT_5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            length_scale: 1.0,
            noise_variance: 1e-6,
        }
    }
}

impl Hyperparams {
    fn to_log(self) -> [f64; 3] {
        [
            self.signal_variance.ln(),
            self.length_scale.ln(),
            self.noise_variance.ln(),
        ]
    }

    fn from_log(t: [f64; 3]) -> Self {
        Self {
            signal_variance: t[0].exp(),
            length_scale: t[1].exp(),
            noise_variance: t[2].exp(),
        }
    }
}

/// `σ_f² (1 + √5 r/ℓ + 5r²/3ℓ²) exp(−√5 r/ℓ)`
pub fn matern52(a: &[f64], b: &[f64], h: &Hyperparams) -> f64 {
    let r = squared_distance(a, b).sqrt() / h.length_scale;
    let s = SQRT_5 * r;
    h.signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

pub fn gram_matrix(xs: &[Vec<f64>], h: &Hyperparams) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = h.signal_variance;
        for j in 0..i {
            let v = matern52(&xs[i], &xs[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub restarts: usize,
    pub max_evals_per_restart: usize,
    pub seed: u64,
    pub signal_bounds: (f64, f64),
    pub length_bounds: (f64, f64),
    pub noise_bounds: (f64, f64),
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_evals_per_restart: 80,
            seed: 0,
            signal_bounds: (1e-3, 1e3),
            length_bounds: (1e-3, 1e3),
            noise_bounds: (1e-8, 1e-1),
        }
    }
}

impl GpConfig {
    fn log_box(&self) -> [(f64, f64); 3] {
        [
            (self.signal_bounds.0.ln(), self.signal_bounds.1.ln()),
            (self.length_bounds.0.ln(), self.length_bounds.1.ln()),
            (self.noise_bounds.0.ln(), self.noise_bounds.1.ln()),
        ]
    }
}

/// A fitted GP. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpModel {
    train_x: Vec<Vec<f64>>,
    train_y: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    hyper: Hyperparams,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

struct Factorized {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    log_likelihood: f64,
}

fn factorize(xs: &[Vec<f64>], y: &DVector<f64>, h: &Hyperparams) -> Option<Factorized> {
    let n = xs.len();
    let mut k = gram_matrix(xs, h);
    for i in 0..n {
        k[(i, i)] += h.noise_variance;
    }
    let mut jitter = 0.0;
    let chol = loop {
        let mut m = k.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(m) {
            break c;
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 2.0 };
        if jitter > 1.0 {
            return None;
        }
    };
    let alpha = chol.solve(y);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let log_likelihood =
        -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * PI).ln();
    log_likelihood.is_finite().then_some(Factorized {
        chol,
        alpha,
        jitter,
        log_likelihood,
    })
}

/// Drops duplicate inputs, keeping the best objective of each.
fn dedup_best(xs: &[Vec<f64>], ys: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    let mut out_x: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
    let mut out_y: Vec<f64> = Vec::with_capacity(xs.len());
    for (x, &y) in xs.iter().zip(ys) {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&i) => out_y[i] = out_y[i].max(y),
            None => {
                index.insert(key, out_x.len());
                out_x.push(x.clone());
                out_y.push(y);
            }
        }
    }
    (out_x, out_y)
}

fn check_inputs(xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Degenerate("a GP needs at least one sample".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::MalformedDataset("ragged GP inputs".into()));
    }
    if xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP training data".into()));
    }
    Ok(())
}

fn standardize(ys: &[f64]) -> (DVector<f64>, f64, f64) {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (
        DVector::from_iterator(ys.len(), ys.iter().map(|y| (y - mean) / std)),
        mean,
        std,
    )
}

impl GpModel {
    /// Conditions on data with fixed hyper-parameters.
    pub fn with_hyperparams(xs: &[Vec<f64>], ys: &[f64], hyper: Hyperparams) -> Result<Self> {
        check_inputs(xs, ys)?;
        let (xs, ys) = dedup_best(xs, ys);
        let (y, y_mean, y_std) = standardize(&ys);
        let f = factorize(&xs, &y, &hyper)
            .ok_or_else(|| Error::Degenerate("kernel matrix could not be factorized".into()))?;
        Ok(Self {
            train_x: xs,
            train_y: y,
            y_mean,
            y_std,
            hyper,
            jitter: f.jitter,
            chol: f.chol,
            alpha: f.alpha,
            log_likelihood: f.log_likelihood,
        })
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyper
    }

    /// Diagonal jitter that was needed on top of the noise term.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.train_x
    }

    /// Training targets in standardized units.
    pub fn standardized_targets(&self) -> &DVector<f64> {
        &self.train_y
    }

    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_std)
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        self.predict_batch(std::slice::from_ref(&x.to_vec()))[0]
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let n = self.train_x.len();
        let m = xs.len();
        if m == 0 {
            return Vec::new();
        }
        let mut k_star = DMatrix::zeros(n, m);
        for (j, x) in xs.iter().enumerate() {
            for (i, t) in self.train_x.iter().enumerate() {
                k_star[(i, j)] = matern52(t, x, &self.hyper);
            }
        }
        let mean = k_star.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("Cholesky factor has a positive diagonal");
        (0..m)
            .map(|j| {
                let var = (self.hyper.signal_variance - v.column(j).norm_squared()).max(0.0);
                (
                    self.y_mean + self.y_std * mean[j],
                    self.y_std * var.sqrt(),
                )
            })
            .collect()
    }
}

/// Fits hyper-parameters by maximizing the log marginal likelihood with a
/// multi-start coordinate search in log space, then conditions on the data.
/// With fewer than two distinct samples the defaults are used unchanged.
pub fn fit_gp(xs: &[Vec<f64>], ys: &[f64], config: &GpConfig) -> Result<GpModel> {
    check_inputs(xs, ys)?;
    let (dx, dy) = dedup_best(xs, ys);
    if dx.len() < 2 {
        return GpModel::with_hyperparams(&dx, &dy, Hyperparams::default());
    }
    let (y, _, _) = standardize(&dy);
    let bounds = config.log_box();
    let objective = |t: &[f64; 3]| -> f64 {
        factorize(&dx, &y, &Hyperparams::from_log(*t)).map_or(f64::NEG_INFINITY, |f| f.log_likelihood)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clamp = |t: [f64; 3]| -> [f64; 3] {
        let mut t = t;
        for (v, (lo, hi)) in t.iter_mut().zip(bounds) {
            *v = v.clamp(lo, hi);
        }
        t
    };
    let mut best = (clamp(Hyperparams::default().to_log()), f64::NEG_INFINITY);
    for restart in 0..config.restarts.max(1) {
        let start = if restart == 0 {
            best.0
        } else {
            let mut t = [0.0; 3];
            for (v, (lo, hi)) in t.iter_mut().zip(bounds) {
                *v = rng.random_range(lo..hi);
            }
            t
        };
        let (t, f) = coordinate_search(start, &bounds, config.max_evals_per_restart, &objective);
        if f > best.1 {
            best = (t, f);
        }
    }
    GpModel::with_hyperparams(&dx, &dy, Hyperparams::from_log(best.0))
}

/// Compass search: try ± step on each coordinate, accept improvements,
/// halve the step after a sweep without progress.
fn coordinate_search(
    start: [f64; 3],
    bounds: &[(f64, f64); 3],
    max_evals: usize,
    f: &impl Fn(&[f64; 3]) -> f64,
) -> ([f64; 3], f64) {
    let mut x = start;
    let mut fx = f(&x);
    let mut evals = 1;
    let mut step = 1.0;
    while step > 1e-3 && evals < max_evals {
        let mut improved = false;
        for d in 0..3 {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[d] = (y[d] + dir * step).clamp(bounds[d].0, bounds[d].1);
                if y[d] == x[d] {
                    continue;
                }
                let fy = f(&y);
                evals += 1;
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Expected improvement over `y_best` for maximization, with no
/// exploration offset.
pub fn expected_improvement(mean: f64, std: f64, y_best: f64) -> f64 {
    let diff = mean - y_best;
    if std <= 0.0 {
        return diff.max(0.0);
    }
    let z = diff / std;
    (diff * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub expected_improvement: f64,
    pub candidates: usize,
}

/// Draws candidates inside `region` and returns the one with the largest
/// EI; the earliest candidate wins ties.
pub fn propose_candidate<R: Region + ?Sized, G: Rng + ?Sized>(
    model: &GpModel,
    dim: usize,
    region: &R,
    y_best: f64,
    sampling: &SamplingConfig,
    rng: &mut G,
) -> Proposal {
    let candidates = sample_in_region(dim, region, sampling, rng);
    let preds = model.predict_batch(&candidates);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, (m, s)) in preds.iter().enumerate() {
        let ei = expected_improvement(*m, *s, y_best);
        if ei > best.1 {
            best = (i, ei);
        }
    }
    let n = candidates.len();
    Proposal {
        x: candidates.into_iter().nth(best.0).expect("candidate set is never empty"),
        expected_improvement: best.1,
        candidates: n,
    }
}
