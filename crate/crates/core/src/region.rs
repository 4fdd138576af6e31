//! Search regions derived from source-task optima, for the box and
//! ellipsoid baselines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::TaskDataset;
use crate::error::{Error, Result};
use crate::partition::Region;

/// Half-width added around degenerate axes.
pub const AXIS_PADDING: f64 = 1e-3;
pub const KHACHIYAN_TOLERANCE: f64 = 1e-6;
const KHACHIYAN_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Box,
    Ellipsoid,
}

/// A region in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransferRegion {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{x : (x - center)ᵀ shape (x - center) ≤ 1}`, `shape` row-major.
    Ellipsoid { center: Vec<f64>, shape: Vec<f64> },
}

impl TransferRegion {
    /// `(x - c)ᵀ A (x - c)` for an ellipsoid; for a box, the largest
    /// per-axis ratio of distance from the centre to half-width, squared.
    /// Both are ≤ 1 exactly on the region.
    pub fn membership(&self, x: &[f64]) -> f64 {
        match self {
            TransferRegion::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .zip(x)
                .map(|((lo, hi), v)| {
                    let half = 0.5 * (hi - lo);
                    let mid = 0.5 * (hi + lo);
                    ((v - mid) / half).powi(2)
                })
                .fold(0.0, f64::max),
            TransferRegion::Ellipsoid { center, shape } => {
                let d = center.len();
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let mut q = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        q += diff[i] * shape[i * d + j] * diff[j];
                    }
                }
                q
            }
        }
    }
}

impl Region for TransferRegion {
    fn contains(&self, x: &[f64]) -> bool {
        match self {
            TransferRegion::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .zip(x)
                .all(|((lo, hi), v)| lo <= v && v <= hi),
            TransferRegion::Ellipsoid { .. } => self.membership(x) <= 1.0,
        }
    }

    fn violation(&self, x: &[f64]) -> f64 {
        match self {
            TransferRegion::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .zip(x)
                .map(|((lo, hi), v)| (lo - v).max(0.0) + (v - hi).max(0.0))
                .sum(),
            TransferRegion::Ellipsoid { .. } => (self.membership(x) - 1.0).max(0.0),
        }
    }
}

/// Best point (largest raw objective) of every source task.
pub fn source_optima(sources: &[TaskDataset]) -> Result<Vec<Vec<f64>>> {
    sources
        .iter()
        .map(|s| {
            s.best()
                .map(|b| b.x.clone())
                .ok_or_else(|| Error::MalformedDataset(format!("source task `{}` is empty", s.task_id())))
        })
        .collect()
}

pub fn derive_transfer_region(sources: &[TaskDataset], kind: RegionKind) -> Result<TransferRegion> {
    let optima = source_optima(sources)?;
    match kind {
        RegionKind::Box => bounding_box(&optima),
        RegionKind::Ellipsoid => {
            let (center, shape) = min_volume_ellipsoid(&optima, KHACHIYAN_TOLERANCE)?;
            Ok(TransferRegion::Ellipsoid { center, shape })
        }
    }
}

/// Componentwise extent of the points; axes with zero extent are padded.
pub fn bounding_box(points: &[Vec<f64>]) -> Result<TransferRegion> {
    let dim = check_points(points)?;
    let mut lower = vec![f64::INFINITY; dim];
    let mut upper = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for d in 0..dim {
            lower[d] = lower[d].min(p[d]);
            upper[d] = upper[d].max(p[d]);
        }
    }
    for d in 0..dim {
        if upper[d] <= lower[d] {
            lower[d] -= AXIS_PADDING;
            upper[d] += AXIS_PADDING;
        }
    }
    Ok(TransferRegion::Box { lower, upper })
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = points.first() else {
        return Err(Error::Degenerate("no points to enclose".into()));
    };
    let dim = first.len();
    if dim == 0 {
        return Err(Error::Degenerate("zero-dimensional points".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("points to enclose".into()));
    }
    Ok(dim)
}

fn affine_rank(points: &[Vec<f64>]) -> usize {
    let dim = points[0].len();
    if points.len() < 2 {
        return 0;
    }
    let m = DMatrix::from_fn(points.len() - 1, dim, |i, j| points[i + 1][j] - points[0][j]);
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    m.svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-9 * scale)
        .count()
}

/// Minimum-volume enclosing ellipsoid by Khachiyan's algorithm with
/// Todd-Yildirim away steps. Returns the
/// centre and the row-major shape matrix. Point sets that do not span the
/// space get `±AXIS_PADDING` points around their centroid on every axis
/// first. The result is rescaled so that every input point satisfies the
/// membership inequality.
pub fn min_volume_ellipsoid(points: &[Vec<f64>], tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = check_points(points)?;
    let mut pts: Vec<Vec<f64>> = points.to_vec();
    if affine_rank(points) < dim {
        let n = points.len() as f64;
        let centroid: Vec<f64> = (0..dim)
            .map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n)
            .collect();
        for d in 0..dim {
            for sign in [-1.0, 1.0] {
                let mut p = centroid.clone();
                p[d] += sign * AXIS_PADDING;
                pts.push(p);
            }
        }
    }

    // iterate in centred, unit-scale coordinates; mapped back below
    let n = pts.len();
    let mean: Vec<f64> = (0..dim)
        .map(|d| pts.iter().map(|p| p[d]).sum::<f64>() / n as f64)
        .collect();
    let spread = pts
        .iter()
        .flat_map(|p| p.iter().zip(&mean).map(|(v, m)| (v - m).abs()))
        .fold(0.0f64, f64::max);
    let spread = if spread > 0.0 { spread } else { 1.0 };
    for p in &mut pts {
        for (v, m) in p.iter_mut().zip(&mean) {
            *v = (*v - m) / spread;
        }
    }
    let p = DMatrix::from_fn(dim, n, |i, j| pts[j][i]);
    let q = DMatrix::from_fn(dim + 1, n, |i, j| if i < dim { pts[j][i] } else { 1.0 });
    let mut u = DVector::from_element(n, 1.0 / n as f64);
    let d1 = (dim + 1) as f64;
    for _ in 0..KHACHIYAN_MAX_ITER {
        let mut x = DMatrix::zeros(dim + 1, dim + 1);
        for (j, col) in q.column_iter().enumerate() {
            x.ger(u[j], &col, &col, 1.0);
        }
        let Some(x_inv) = x.try_inverse() else {
            return Err(Error::Degenerate("singular Khachiyan moment matrix".into()));
        };
        let m: Vec<f64> = q
            .column_iter()
            .map(|col| (col.transpose() * &x_inv * col)[(0, 0)])
            .collect();
        let (up, m_up) = m
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one point");
        let (down, m_down) = m
            .iter()
            .copied()
            .enumerate()
            .filter(|&(j, _)| u[j] > 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("weights sum to one");
        let gap_up = m_up / d1 - 1.0;
        let gap_down = 1.0 - m_down / d1;
        if gap_up.max(gap_down) <= tol {
            break;
        }
        if gap_up >= gap_down {
            let step = (m_up - d1) / (d1 * (m_up - 1.0));
            u *= 1.0 - step;
            u[up] += step;
        } else {
            // away step: shift weight off the point deepest inside
            let drop = u[down] / (1.0 - u[down]);
            let step = if m_down > 1.0 {
                ((d1 - m_down) / (d1 * (m_down - 1.0))).min(drop)
            } else {
                drop
            };
            u *= 1.0 + step;
            u[down] -= step;
            u[down] = u[down].max(0.0);
        }
    }

    let c = &p * &u;
    let cov = &p * DMatrix::from_diagonal(&u) * p.transpose() - &c * c.transpose();
    let Some(inv) = cov.try_inverse() else {
        return Err(Error::Degenerate("singular ellipsoid covariance".into()));
    };
    let a = inv / (dim as f64 * spread * spread);
    let center: Vec<f64> = c.iter().zip(&mean).map(|(v, m)| m + spread * v).collect();
    let mut shape: Vec<f64> = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| a[(i, j)]).collect();

    // the iteration stops short of the optimum; shrink-wrap the originals
    let region = TransferRegion::Ellipsoid {
        center: center.clone(),
        shape: shape.clone(),
    };
    let worst = points.iter().map(|pt| region.membership(pt)).fold(0.0f64, f64::max);
    if worst > 1.0 {
        shape.iter_mut().for_each(|v| *v /= worst);
    }
    Ok((center, shape))
}
