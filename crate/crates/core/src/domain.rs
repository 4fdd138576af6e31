//! Domain types shared by every other module.
//!
//! Everything inside the optimizer works in the normalized unit cube and on
//! per-task min-max normalized objective values. Objectives are always in the
//! maximization sense: minimization problems are negated by their adapters
//! before they reach this crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned continuous box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidDomain("dimension must be positive".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidDomain(format!("non-finite bound on axis {d}")));
            }
            if lo >= hi {
                return Err(Error::InvalidDomain(format!(
                    "axis {d}: lower bound {lo} is not below upper bound {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same `[lo, hi]` interval on every axis.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Maps an original-coordinate point into `[0, 1]^dim`, clamping points
    /// outside the box onto its boundary.
    pub fn normalize_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point has non-finite coordinates".into()));
        }
        Ok(x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect())
    }

    pub fn denormalize_point(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        Ok(u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| lo + v.clamp(0.0, 1.0) * (hi - lo))
            .collect())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }
}

/// One evaluated point of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Normalized coordinates in the unit cube.
    pub x: Vec<f64>,
    /// Objective in the original scale, maximization sense.
    pub y_raw: f64,
    /// Per-task normalized objective.
    pub y_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskRole {
    Source,
    Target,
}

/// How `Sample::y_norm` is derived from `Sample::y_raw`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveScale {
    /// Per-task min-max scaling into `[0, 1]`.
    #[default]
    MinMax,
    /// `y_norm = y_raw`.
    Raw,
}

/// The evaluated samples of one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDataset {
    task_id: String,
    role: TaskRole,
    dim: usize,
    scale: ObjectiveScale,
    samples: Vec<Sample>,
    y_min_raw: f64,
    y_max_raw: f64,
}

impl TaskDataset {
    pub fn new(task_id: impl Into<String>, role: TaskRole, dim: usize) -> Self {
        Self {
            task_id: task_id.into(),
            role,
            dim,
            scale: ObjectiveScale::MinMax,
            samples: Vec::new(),
            y_min_raw: f64::INFINITY,
            y_max_raw: f64::NEG_INFINITY,
        }
    }

    pub fn with_scale(mut self, scale: ObjectiveScale) -> Self {
        self.scale = scale;
        self.normalize_objectives();
        self
    }

    /// Builds a dataset from original-coordinate records. Points outside the
    /// domain are clamped onto it; ragged or non-finite records are rejected.
    pub fn from_records(
        task_id: impl Into<String>,
        role: TaskRole,
        domain: &SearchDomain,
        records: &[RawRecord],
    ) -> Result<Self> {
        let mut dataset = Self::new(task_id, role, domain.dim());
        for (i, rec) in records.iter().enumerate() {
            if rec.x.len() != domain.dim() {
                return Err(Error::MalformedDataset(format!(
                    "record {i} has {} coordinates, expected {}",
                    rec.x.len(),
                    domain.dim()
                )));
            }
            if !rec.y.is_finite() {
                return Err(Error::NonFinite(format!("record {i} objective is {}", rec.y)));
            }
            let x = domain.normalize_point(&rec.x)?;
            dataset.push_unnormalized(x, rec.y);
        }
        dataset.normalize_objectives();
        Ok(dataset)
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn role(&self) -> TaskRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> ObjectiveScale {
        self.scale
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn y_range(&self) -> Option<(f64, f64)> {
        (!self.is_empty()).then_some((self.y_min_raw, self.y_max_raw))
    }

    /// Index of the best sample by raw objective; the earliest wins ties.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, s) in self.samples.iter().enumerate() {
            match best {
                Some(b) if self.samples[b].y_raw >= s.y_raw => {}
                _ => best = Some(i),
            }
        }
        best
    }

    pub fn best(&self) -> Option<&Sample> {
        self.best_index().map(|i| &self.samples[i])
    }

    /// Appends a sample in normalized coordinates and refreshes the
    /// normalization against the running extrema. Returns its index.
    pub fn push(&mut self, x: Vec<f64>, y_raw: f64) -> usize {
        let (lo, hi) = (self.y_min_raw, self.y_max_raw);
        let idx = self.push_unnormalized(x, y_raw);
        if lo != self.y_min_raw || hi != self.y_max_raw {
            self.normalize_objectives();
        } else {
            let y = self.scaled(y_raw);
            self.samples[idx].y_norm = y;
        }
        idx
    }

    fn push_unnormalized(&mut self, x: Vec<f64>, y_raw: f64) -> usize {
        assert_eq!(x.len(), self.dim, "sample dimension must match the dataset");
        self.y_min_raw = self.y_min_raw.min(y_raw);
        self.y_max_raw = self.y_max_raw.max(y_raw);
        self.samples.push(Sample {
            x,
            y_raw,
            y_norm: 0.0,
        });
        self.samples.len() - 1
    }

    fn scaled(&self, y_raw: f64) -> f64 {
        match self.scale {
            ObjectiveScale::Raw => y_raw,
            ObjectiveScale::MinMax => {
                let span = self.y_max_raw - self.y_min_raw;
                if span > 0.0 {
                    (y_raw - self.y_min_raw) / span
                } else {
                    0.5
                }
            }
        }
    }

    /// Recomputes every `y_norm` from the current extrema. A constant task
    /// maps to 0.5 under min-max scaling.
    pub fn normalize_objectives(&mut self) {
        for i in 0..self.samples.len() {
            self.samples[i].y_norm = self.scaled(self.samples[i].y_raw);
        }
    }
}

/// One record of a dataset file, in original coordinates and maximization
/// sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    NonFiniteObjective { index: usize },
    NonFiniteCoordinate { index: usize, axis: usize },
    OutOfBounds { index: usize, clamped: Vec<f64> },
    Duplicate { index: usize, first: usize },
}

/// Findings of [`validate_records`]. Flagged records are not removed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks raw records against a domain. Ragged rows are a structural error;
/// everything else is reported.
pub fn validate_records(records: &[RawRecord], domain: &SearchDomain) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let mut seen: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    for (index, rec) in records.iter().enumerate() {
        if rec.x.len() != domain.dim() {
            return Err(Error::MalformedDataset(format!(
                "record {index} has {} coordinates, expected {}",
                rec.x.len(),
                domain.dim()
            )));
        }
        if !rec.y.is_finite() {
            report.issues.push(ValidationIssue::NonFiniteObjective { index });
        }
        let mut finite = true;
        for (axis, v) in rec.x.iter().enumerate() {
            if !v.is_finite() {
                finite = false;
                report.issues.push(ValidationIssue::NonFiniteCoordinate { index, axis });
            }
        }
        if !finite {
            continue;
        }
        if !domain.contains(&rec.x) {
            let clamped = rec
                .x
                .iter()
                .zip(domain.lower().iter().zip(domain.upper()))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect();
            report.issues.push(ValidationIssue::OutOfBounds { index, clamped });
        }
        let key: Vec<u64> = rec.x.iter().map(|v| v.to_bits()).collect();
        if let Some(&first) = seen.get(&key) {
            report.issues.push(ValidationIssue::Duplicate { index, first });
        } else {
            seen.insert(key, index);
        }
    }
    Ok(report)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_point_examples() {
        let d = SearchDomain::uniform(2, -5.0, 5.0).unwrap();
        assert_eq!(d.normalize_point(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(d.normalize_point(&[-5.0, 5.0]).unwrap(), vec![0.0, 1.0]);
        let d = SearchDomain::uniform(2, -10.0, 10.0).unwrap();
        let u = d.normalize_point(&[4.0, 4.0]).unwrap();
        assert!((u[0] - 0.7).abs() < 1e-15 && (u[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn normalize_point_rejects_wrong_dimension() {
        let d = SearchDomain::unit(2);
        assert!(matches!(
            d.normalize_point(&[0.1]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn normalize_clamps_outside_points() {
        let d = SearchDomain::uniform(1, 0.0, 2.0).unwrap();
        assert_eq!(d.normalize_point(&[3.0]).unwrap(), vec![1.0]);
        assert_eq!(d.normalize_point(&[-1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn domain_rejects_inverted_bounds() {
        assert!(SearchDomain::new(vec![1.0], vec![1.0]).is_err());
        assert!(SearchDomain::new(vec![0.0, 2.0], vec![1.0, 1.0]).is_err());
        assert!(SearchDomain::new(vec![], vec![]).is_err());
    }

    fn dataset_from(ys: &[f64]) -> TaskDataset {
        let domain = SearchDomain::unit(1);
        let recs: Vec<_> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| RawRecord {
                x: vec![i as f64 / ys.len() as f64],
                y,
            })
            .collect();
        TaskDataset::from_records("t", TaskRole::Source, &domain, &recs).unwrap()
    }

    fn norms(d: &TaskDataset) -> Vec<f64> {
        d.samples().iter().map(|s| s.y_norm).collect()
    }

    #[test]
    fn objective_normalization_examples() {
        assert_eq!(norms(&dataset_from(&[1.0, 3.0])), vec![0.0, 1.0]);
        assert_eq!(norms(&dataset_from(&[2.0, 2.0, 2.0])), vec![0.5; 3]);
        assert_eq!(norms(&dataset_from(&[0.0, 5.0, 10.0])), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn raw_scale_keeps_values() {
        let d = dataset_from(&[0.0, 5.0, 10.0]).with_scale(ObjectiveScale::Raw);
        assert_eq!(norms(&d), vec![0.0, 5.0, 10.0]);
    }

    #[test]
    fn push_tracks_running_extrema() {
        let mut d = TaskDataset::new("target", TaskRole::Target, 1);
        d.push(vec![0.1], 4.0);
        assert_eq!(norms(&d), vec![0.5]);
        d.push(vec![0.2], 2.0);
        assert_eq!(norms(&d), vec![1.0, 0.0]);
        d.push(vec![0.3], 3.0);
        assert_eq!(norms(&d), vec![1.0, 0.0, 0.5]);
        d.push(vec![0.4], 6.0);
        assert_eq!(norms(&d), vec![0.5, 0.0, 0.25, 1.0]);
        assert_eq!(d.best_index(), Some(3));
    }

    #[test]
    fn validation_examples() {
        let domain = SearchDomain::uniform(2, -1.0, 1.0).unwrap();
        let good: Vec<_> = (0..100)
            .map(|i| RawRecord {
                x: vec![-1.0 + i as f64 / 50.0, 0.0],
                y: i as f64,
            })
            .collect();
        assert!(validate_records(&good, &domain).unwrap().is_ok());

        let mut bad = good.clone();
        bad[17].y = f64::NAN;
        bad[3].x = vec![2.0, 0.5];
        bad[40].x = bad[39].x.clone();
        let report = validate_records(&bad, &domain).unwrap();
        assert!(report
            .issues
            .contains(&ValidationIssue::NonFiniteObjective { index: 17 }));
        assert!(report.issues.contains(&ValidationIssue::OutOfBounds {
            index: 3,
            clamped: vec![1.0, 0.5]
        }));
        assert!(report
            .issues
            .contains(&ValidationIssue::Duplicate { index: 40, first: 39 }));

        bad[5].x = vec![0.0];
        assert!(matches!(
            validate_records(&bad, &domain),
            Err(Error::MalformedDataset(_))
        ));
    }

    proptest! {
        #[test]
        fn normalize_denormalize_roundtrip(
            lo in -100.0f64..100.0,
            width in 0.01f64..50.0,
            t in proptest::collection::vec(0.001f64..0.999, 3),
        ) {
            let domain = SearchDomain::uniform(3, lo, lo + width).unwrap();
            let x: Vec<f64> = t.iter().map(|v| lo + v * width).collect();
            let back = domain.denormalize_point(&domain.normalize_point(&x).unwrap()).unwrap();
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn normalization_preserves_ranking(ys in proptest::collection::vec(-1e6f64..1e6, 2..40)) {
            let d = dataset_from(&ys);
            for i in 0..ys.len() {
                for j in 0..ys.len() {
                    let (a, b) = (d.sample(i), d.sample(j));
                    prop_assert_eq!(a.y_raw < b.y_raw, a.y_norm < b.y_norm);
                }
            }
        }
    }
}
