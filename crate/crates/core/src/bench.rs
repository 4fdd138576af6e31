//! Synthetic benchmark problems, task families and offline source data.
//!
//! Every problem is stored as a base function (minimized, value 0 at its
//! optimum `z*`) composed with an optional rotation about the optimum
//! location: `f(x) = base(R (x - x*) + z*)`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{SearchDomain, TaskDataset, TaskRole};
use crate::error::{Error, Result};
use crate::io::{write_dataset, DatasetFile};
use crate::optimizer::{run_gp_ei, Objective, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    Sphere,
    Rastrigin,
    Rosenbrock,
    GriewankRosenbrock,
    Lunacek,
    SharpRidge,
}

impl FunctionKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "sphere" => FunctionKind::Sphere,
            "rastrigin" => FunctionKind::Rastrigin,
            "rosenbrock" => FunctionKind::Rosenbrock,
            "griewank_rosenbrock" | "griewankrosenbrock" => FunctionKind::GriewankRosenbrock,
            "lunacek" => FunctionKind::Lunacek,
            "sharp_ridge" | "sharpridge" => FunctionKind::SharpRidge,
            _ => return Err(Error::UnknownFunction(name.to_string())),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FunctionKind::Sphere => "sphere",
            FunctionKind::Rastrigin => "rastrigin",
            FunctionKind::Rosenbrock => "rosenbrock",
            FunctionKind::GriewankRosenbrock => "griewank_rosenbrock",
            FunctionKind::Lunacek => "lunacek",
            FunctionKind::SharpRidge => "sharp_ridge",
        }
    }

    /// Location of the unshifted optimum.
    pub fn base_optimum(self, dim: usize) -> Vec<f64> {
        match self {
            FunctionKind::Rosenbrock | FunctionKind::GriewankRosenbrock => vec![1.0; dim],
            FunctionKind::Lunacek => vec![LUNACEK_MU0; dim],
            _ => vec![0.0; dim],
        }
    }

    pub fn default_domain(self, dim: usize) -> SearchDomain {
        let half = if self == FunctionKind::Sphere { 10.0 } else { 5.0 };
        SearchDomain::uniform(dim, -half, half).expect("symmetric bounds are valid")
    }

    pub fn base(self, z: &[f64]) -> f64 {
        let d = z.len() as f64;
        let tau = 2.0 * std::f64::consts::PI;
        match self {
            FunctionKind::Sphere => z.iter().map(|v| v * v).sum(),
            FunctionKind::Rastrigin => 10.0 * d + z.iter().map(|v| v * v - 10.0 * (tau * v).cos()).sum::<f64>(),
            FunctionKind::Rosenbrock => z
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum(),
            FunctionKind::GriewankRosenbrock => {
                if z.len() < 2 {
                    return 0.0;
                }
                let sum: f64 = z
                    .windows(2)
                    .map(|w| {
                        let s = 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2);
                        s / 4000.0 - s.cos()
                    })
                    .sum();
                10.0 * sum / (d - 1.0) + 10.0
            }
            FunctionKind::Lunacek => {
                let s = 1.0 - 1.0 / (2.0 * (d + 20.0).sqrt() - 8.2);
                let mu1 = -((LUNACEK_MU0 * LUNACEK_MU0 - 1.0) / s).sqrt();
                let a: f64 = z.iter().map(|v| (v - LUNACEK_MU0).powi(2)).sum();
                let b: f64 = d + s * z.iter().map(|v| (v - mu1).powi(2)).sum::<f64>();
                let c: f64 = z.iter().map(|v| 1.0 - (tau * (v - LUNACEK_MU0)).cos()).sum();
                a.min(b) + 10.0 * c
            }
            FunctionKind::SharpRidge => z[0] * z[0] + 100.0 * z[1..].iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

const LUNACEK_MU0: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkProblem {
    pub name: String,
    pub kind: FunctionKind,
    pub domain: SearchDomain,
    /// Optimum location in original coordinates.
    pub optimum: Vec<f64>,
    /// Row-major orthogonal matrix; `None` is the identity.
    pub rotation: Option<Vec<f64>>,
    pub sense: Sense,
}

impl BenchmarkProblem {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Value in the problem's own sense.
    pub fn value(&self, x: &[f64]) -> f64 {
        let dim = self.dim();
        let diff: Vec<f64> = x.iter().zip(&self.optimum).map(|(a, b)| a - b).collect();
        let rotated = match &self.rotation {
            Some(r) => (0..dim)
                .map(|i| (0..dim).map(|j| r[i * dim + j] * diff[j]).sum())
                .collect(),
            None => diff,
        };
        let z: Vec<f64> = rotated
            .iter()
            .zip(self.kind.base_optimum(dim))
            .map(|(v, o)| v + o)
            .collect();
        let f = self.kind.base(&z);
        match self.sense {
            Sense::Minimize => f,
            Sense::Maximize => -f,
        }
    }

    pub fn optimum_value(&self) -> f64 {
        0.0
    }

    /// Converts a value in the problem's sense to maximization sense.
    pub fn to_score(&self, value: f64) -> f64 {
        match self.sense {
            Sense::Minimize => -value,
            Sense::Maximize => value,
        }
    }

    pub fn from_score(&self, score: f64) -> f64 {
        self.to_score(score)
    }

    /// Simple regret of a maximization-sense score; never negative.
    pub fn regret(&self, score: f64) -> f64 {
        (self.to_score(self.optimum_value()) - score).max(0.0)
    }

    /// The same function with its optimum reflected through the box centre
    /// (`1 - x*` in normalized coordinates).
    pub fn reflected(&self) -> Result<Self> {
        let u = self.domain.normalize_point(&self.optimum)?;
        let flipped: Vec<f64> = u.iter().map(|v| 1.0 - v).collect();
        let optimum = self.domain.denormalize_point(&flipped)?;
        Ok(Self {
            name: format!("{}_reflected", self.name),
            optimum,
            ..self.clone()
        })
    }
}

impl Objective for BenchmarkProblem {
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.to_score(self.value(x)))
    }
}

fn format_point(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("_")
}

/// `f(x) = Σ (x_d - x*_d)²`, minimized.
pub fn make_sphere(x_star: &[f64], domain: &SearchDomain) -> Result<BenchmarkProblem> {
    if x_star.len() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: x_star.len(),
        });
    }
    if !domain.contains(x_star) {
        return Err(Error::InvalidDomain(format!("optimum {x_star:?} lies outside the domain")));
    }
    Ok(BenchmarkProblem {
        name: format!("sphere_{}", format_point(x_star)),
        kind: FunctionKind::Sphere,
        domain: domain.clone(),
        optimum: x_star.to_vec(),
        rotation: None,
        sense: Sense::Minimize,
    })
}

/// A textbook benchmark on its default box, evaluated at `x - shift`.
pub fn make_standard(name: &str, dim: usize, shift: Option<&[f64]>) -> Result<BenchmarkProblem> {
    let kind = FunctionKind::parse(name)?;
    if dim < 2 {
        return Err(Error::InvalidConfig(format!("{name} needs at least 2 dimensions")));
    }
    let zero = vec![0.0; dim];
    let shift = shift.unwrap_or(&zero);
    if shift.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: shift.len(),
        });
    }
    let optimum: Vec<f64> = kind.base_optimum(dim).iter().zip(shift).map(|(o, s)| o + s).collect();
    Ok(BenchmarkProblem {
        name: kind.as_str().to_string(),
        kind,
        domain: kind.default_domain(dim),
        optimum,
        rotation: None,
        sense: Sense::Minimize,
    })
}

/// Haar-distributed orthogonal matrix, row-major.
pub fn random_rotation<G: Rng + ?Sized>(dim: usize, rng: &mut G) -> Vec<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect()
}

/// A seeded relative of `base`: optimum moved uniformly within the central
/// 80% of the box and the landscape rotated about it.
pub fn make_family(base: &BenchmarkProblem, seed: u64) -> BenchmarkProblem {
    make_family_with(base, seed, 0.8)
}

/// As [`make_family`] with the optimum drawn from the central `fraction`
/// of each axis.
pub fn make_family_with(base: &BenchmarkProblem, seed: u64, fraction: f64) -> BenchmarkProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = base.dim();
    let margin = 0.5 * (1.0 - fraction.clamp(0.0, 1.0));
    let u: Vec<f64> = (0..dim).map(|_| margin + fraction * rng.random::<f64>()).collect();
    let optimum = base.domain.denormalize_point(&u).expect("dimension matches");
    let rotation = random_rotation(dim, &mut rng);
    BenchmarkProblem {
        name: format!("{}_family_{seed}", base.name),
        optimum,
        rotation: Some(rotation),
        ..base.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Random,
    HillClimb,
    GpEi,
}

const HILL_CLIMB_SIGMA: f64 = 0.1;

/// Evaluates `n` points chosen by `sampler` and returns them as a source
/// dataset named after the problem, in maximization sense.
pub fn generate_source_data(problem: &BenchmarkProblem, sampler: Sampler, n: usize, seed: u64) -> Result<TaskDataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("source datasets need at least one sample".into()));
    }
    let dim = problem.dim();
    let mut data = TaskDataset::new(problem.name.clone(), TaskRole::Source, dim);
    let score = |u: &[f64]| -> Result<f64> { problem.evaluate(&problem.domain.denormalize_point(u)?) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match sampler {
        Sampler::Random => {
            for _ in 0..n {
                let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let y = score(&u)?;
                data.push(u, y);
            }
        }
        Sampler::HillClimb => {
            let mut current: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let mut current_y = score(&current)?;
            data.push(current.clone(), current_y);
            for _ in 1..n {
                let proposal: Vec<f64> = current
                    .iter()
                    .map(|v| {
                        let step: f64 = StandardNormal.sample(&mut rng);
                        (v + HILL_CLIMB_SIGMA * step).clamp(0.0, 1.0)
                    })
                    .collect();
                let y = score(&proposal)?;
                data.push(proposal.clone(), y);
                if y > current_y {
                    current = proposal;
                    current_y = y;
                }
            }
        }
        Sampler::GpEi => {
            let config = OptimizerConfig {
                eval_budget: n,
                seed,
                ..OptimizerConfig::for_method(crate::optimizer::Method::GpEi)
            };
            let trace = run_gp_ei(problem, &problem.domain, &config)?;
            for r in trace.records {
                data.push(r.x_norm, r.y);
            }
        }
    }
    Ok(data)
}

/// Serializable description of a benchmark problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    /// Identifier used in outputs; defaults to the built problem's name.
    #[serde(default)]
    pub id: Option<String>,
    pub function: String,
    pub dim: usize,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    /// Sphere: optimum location. Others: shift of the textbook optimum.
    #[serde(default)]
    pub optimum: Option<Vec<f64>>,
    #[serde(default)]
    pub family_seed: Option<u64>,
    /// Reflect the optimum through the box centre.
    #[serde(default)]
    pub reflect: bool,
}

impl ProblemSpec {
    pub fn sphere(id: &str, x_star: &[f64], lower: f64, upper: f64) -> Self {
        Self {
            id: Some(id.to_string()),
            function: "sphere".into(),
            dim: x_star.len(),
            lower: Some(vec![lower; x_star.len()]),
            upper: Some(vec![upper; x_star.len()]),
            optimum: Some(x_star.to_vec()),
            family_seed: None,
            reflect: false,
        }
    }

    pub fn build(&self) -> Result<BenchmarkProblem> {
        let kind = FunctionKind::parse(&self.function)?;
        let domain = match (&self.lower, &self.upper) {
            (Some(lo), Some(hi)) => SearchDomain::new(lo.clone(), hi.clone())?,
            (None, None) => kind.default_domain(self.dim),
            _ => return Err(Error::InvalidDomain("give both lower and upper or neither".into())),
        };
        if domain.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: domain.dim(),
            });
        }
        let mut problem = if kind == FunctionKind::Sphere {
            let center: Vec<f64> = domain.lower().iter().zip(domain.upper()).map(|(a, b)| 0.5 * (a + b)).collect();
            make_sphere(self.optimum.as_deref().unwrap_or(&center), &domain)?
        } else {
            let mut p = make_standard(&self.function, self.dim, self.optimum.as_deref())?;
            p.domain = domain;
            p
        };
        if let Some(seed) = self.family_seed {
            problem = make_family(&problem, seed);
        }
        if self.reflect {
            problem = problem.reflected()?;
        }
        if let Some(id) = &self.id {
            problem.name = id.clone();
        }
        Ok(problem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Task id of the generated dataset.
    pub id: String,
    pub problem: ProblemSpec,
    pub sampler: Sampler,
    pub seed: u64,
    pub n: usize,
    /// Dataset file, relative to the manifest's directory.
    pub path: PathBuf,
}

/// List of source datasets and how each was produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    pub datasets: Vec<ManifestEntry>,
}

impl DataManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.datasets.iter().find(|e| e.id == id)
    }

    /// Resolves an entry's dataset path against the manifest location.
    pub fn resolve(manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.path)
        }
    }
}

/// Generates one manifest entry's dataset and writes it to disk.
pub fn generate_entry(manifest_path: &Path, entry: &ManifestEntry) -> Result<PathBuf> {
    let mut problem = entry.problem.build()?;
    problem.name = entry.id.clone();
    let data = generate_source_data(&problem, entry.sampler, entry.n, entry.seed)?;
    let path = DataManifest::resolve(manifest_path, entry);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_dataset(&path, &DatasetFile::from_task(&data, &problem.domain)?)?;
    Ok(path)
}
