//! Acceptance gate: runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero when any fails.
//!
//!     cargo test -p mcts-transfer-harness --test acceptance

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use mcts_transfer::bench::{
    generate_source_data, make_family, make_standard, DataManifest, ManifestEntry, ProblemSpec, Sampler,
};
use mcts_transfer::domain::{ObjectiveScale, TaskDataset, TaskRole};
use mcts_transfer::optimizer::{run_la_mcts, run_mcts_transfer, run_mcts_transfer_observed, Method, OptimizerConfig};
use mcts_transfer::region::{min_volume_ellipsoid, TransferRegion, KHACHIYAN_TOLERANCE};
use mcts_transfer::similarity::{
    distance_kl, distance_points, kendall_distance, weight_for_rank, DistanceMeasure, SimilarityConfig,
    WeightStrategy,
};
use mcts_transfer::surrogate::{expected_improvement, GpModel, Hyperparams};
use mcts_transfer::tree::{potential_value, ucb_score, PartitionTree, Stage, TreeConfig, UcbMode};
use mcts_transfer_harness::{
    generate_data, run_experiment, ExperimentReport, ExperimentSpec, MethodEntry, ProblemEntry, RunOptions,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const BUDGET: usize = 100;
const RUNTIME_LIMIT_SECS: f64 = 15.0 * 60.0;

// ---------------------------------------------------------------- sphere 2-d

const SOURCES: [(&str, [f64; 2], u64); 3] =
    [("d_5_5", [5.0, 5.0], 100), ("d_5_-5", [5.0, -5.0], 101), ("d_-5_-5", [-5.0, -5.0], 102)];

/// Writes the three source datasets (100 GP-EI samples each) under `dir`.
fn sphere_sources(dir: &Path) -> Result<(), String> {
    let manifest = DataManifest {
        datasets: SOURCES
            .iter()
            .map(|(id, x, seed)| ManifestEntry {
                id: id.to_string(),
                problem: ProblemSpec::sphere(id, x, -10.0, 10.0),
                sampler: Sampler::GpEi,
                seed: *seed,
                n: 100,
                path: format!("data/{id}.jsonl").into(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path).map_err(|e| e.to_string())?;
    generate_data(&path, &[]).map_err(|e| e.to_string())?;
    Ok(())
}

fn sphere_spec(dir: &Path, sources: &[&str], methods: &[Method]) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(
        vec![ProblemEntry {
            id: "sphere2d".into(),
            problem: ProblemSpec::sphere("sphere2d", &[4.0, 4.0], -10.0, 10.0),
            sources: sources.iter().map(|s| s.to_string()).collect(),
        }],
        methods
            .iter()
            .map(|&m| MethodEntry::new(OptimizerConfig::for_method(m)))
            .collect(),
        SEEDS.to_vec(),
        BUDGET,
    )
    .with_base_dir(dir);
    spec.source_manifest = Some("manifest.json".into());
    spec
}

fn run_spec(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentReport, String> {
    let experiment = spec.validate().map_err(|e| e.to_string())?;
    let report = run_experiment(&experiment, out, &RunOptions::default()).map_err(|e| e.to_string())?;
    if report.failures() > 0 {
        return Err(format!("{} runs did not complete", report.failures()));
    }
    Ok(report)
}

fn final_regrets(report: &ExperimentReport, method: &str) -> Vec<f64> {
    SEEDS
        .iter()
        .map(|&seed| {
            report
                .summary
                .iter()
                .filter(|r| r.method == method && r.seed == seed)
                .max_by_key(|r| r.t)
                .and_then(|r| r.regret)
                .unwrap_or(f64::INFINITY)
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn mixed_transfer(report: &ExperimentReport, elapsed: f64) -> Outcome {
    let mcts = final_regrets(report, "mcts_transfer");
    let gp = final_regrets(report, "gp_ei");
    let la = final_regrets(report, "la_mcts");
    let (m, g, l) = (median(&mcts), median(&gp), median(&la));
    let detail = format!(
        "median regret mcts_transfer {m:.3e} {}, gp_ei {g:.3e} {}, la_mcts {l:.3e} {}; {elapsed:.0}s",
        fmt(&mcts),
        fmt(&gp),
        fmt(&la)
    );
    if m <= g && m <= l && elapsed < RUNTIME_LIMIT_SECS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn weight_identification(report: &ExperimentReport) -> Outcome {
    let mean_weight = |seed: u64, source: &str| {
        let ws: Vec<f64> = report
            .weights
            .iter()
            .filter(|w| w.method == "mcts_transfer" && w.seed == seed && w.source == source)
            .filter(|w| w.t > BUDGET - 20 && w.t <= BUDGET)
            .map(|w| w.weight)
            .collect();
        if ws.len() == 20 {
            Some(ws.iter().sum::<f64>() / 20.0)
        } else {
            None
        }
    };
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let (Some(near), Some(far)) = (mean_weight(seed, "d_5_5"), mean_weight(seed, "d_-5_-5")) else {
            return Err(format!("seed {seed}: weights for the last 20 iterations are missing"));
        };
        if near > far {
            wins += 1;
        }
        parts.push(format!("{near:.2}/{far:.2}"));
    }
    let detail = format!("D(5,5) above D(-5,-5) in {wins}/5 seeds ({})", parts.join(" "));
    if wins >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dissimilar_setting(report: &ExperimentReport) -> Outcome {
    let optimum = [0.7, 0.7];
    for outcome in report.runs.iter().filter(|r| r.method == "box_gp") {
        let trace = outcome.trace().ok_or("box_gp run has no trace")?;
        let Some(TransferRegion::Box { lower, upper }) = &trace.region else {
            return Err(format!("seed {}: box_gp recorded no box", outcome.seed));
        };
        let inside = optimum
            .iter()
            .zip(lower.iter().zip(upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi);
        if inside {
            return Err(format!("seed {}: box {lower:?}..{upper:?} contains the optimum", outcome.seed));
        }
    }
    let boxed = final_regrets(report, "box_gp");
    let mcts = final_regrets(report, "mcts_transfer");
    let (b, m) = (median(&boxed), median(&mcts));
    let detail = format!(
        "optimum outside every box; median regret box_gp {b:.3e} {}, mcts_transfer {m:.3e} {}",
        fmt(&boxed),
        fmt(&mcts)
    );
    if b >= m {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------- arithmetic

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {got} vs {want}"))
    }
}

fn raw_task(id: &str, ys: &[f64]) -> TaskDataset {
    let mut d = TaskDataset::new(id, TaskRole::Source, 1).with_scale(ObjectiveScale::Raw);
    for (i, &y) in ys.iter().enumerate() {
        d.push(vec![i as f64 / 10.0], y);
    }
    d
}

fn prelearn_root(tasks: Vec<TaskDataset>) -> Result<f64, String> {
    let target = TaskDataset::new("target", TaskRole::Target, 1);
    let tree = PartitionTree::new(TreeConfig::default(), SimilarityConfig::default(), tasks, target)
        .map_err(|e| e.to_string())?;
    Ok(tree.potential_prelearn(tree.root_id()))
}

fn equation_cases() -> Outcome {
    const EXACT: f64 = 1e-12;
    let mut n = 0;
    let mut check = |r: Result<(), String>| -> Result<(), String> {
        n += 1;
        r
    };
    let oracle = 0.5 + 2.0 * 0.1 * (2.0 * 20f64.ln() / 10.0).sqrt();
    check(close(ucb_score(0.5, 20, 10, 0.1, UcbMode::Potential), oracle, 1e-6, "ucb"))?;
    check(close(ucb_score(0.5, 20, 10, 0.1, UcbMode::Potential), 0.6548, 1e-4, "ucb worked value"))?;
    check(close(ucb_score(1.7, 3, 3, 0.0, UcbMode::Potential), 1.7, EXACT, "ucb cp=0"))?;
    check(close(prelearn_root(vec![raw_task("a", &[0.2, 0.8])])?, 0.5, EXACT, "prelearn mean"))?;
    check(close(
        prelearn_root(vec![raw_task("a", &[0.0, 1.0]), raw_task("b", &[0.5])])?,
        0.5,
        EXACT,
        "prelearn pooled",
    ))?;
    check(close(potential_value(&[(1.0, 0.6)], Some(0.3), 0.99, 1), 0.9, EXACT, "potential t=1"))?;
    check(close(potential_value(&[], Some(0.4), 0.5, 1), 0.4, EXACT, "potential no sources"))?;
    check(close(
        potential_value(&[(1.0, 0.8), (3.0, 0.4)], Some(0.1), 0.5, 3),
        0.225,
        EXACT,
        "potential decayed",
    ))?;
    let linear = SimilarityConfig {
        strategy: WeightStrategy::Linear,
        alpha: 0.5,
        ..SimilarityConfig::default()
    };
    for (r, w) in [(0, 1.0), (2, 0.6), (5, 0.1)] {
        check(close(weight_for_rank(r, 10, &linear), w, EXACT, &format!("linear rank {r}")))?;
    }
    let exp = SimilarityConfig {
        strategy: WeightStrategy::Exponential,
        beta: 0.5,
        ..SimilarityConfig::default()
    };
    check(close(weight_for_rank(0, 4, &exp), 1.0, EXACT, "exponential rank 0"))?;
    check(close(weight_for_rank(2, 4, &exp), 0.25, EXACT, "exponential rank 2"))?;
    let one = SimilarityConfig {
        strategy: WeightStrategy::AllOne,
        ..SimilarityConfig::default()
    };
    check(close(weight_for_rank(3, 6, &one), 1.0, EXACT, "all-one"))?;
    Ok(format!("{n} hand-arithmetic cases"))
}

// ------------------------------------------------------------------ tree

fn tree_invariants() -> Outcome {
    let problem = make_standard("rastrigin", 2, None).map_err(|e| e.to_string())?;
    let sources: Vec<TaskDataset> = (0..3)
        .map(|k| generate_source_data(&make_family(&problem, 40 + k), Sampler::Random, 60, 7 + k))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let config = OptimizerConfig {
        eval_budget: BUDGET,
        seed: 3,
        ..OptimizerConfig::default()
    };
    let mut checked = 0;
    let mut violations: Vec<String> = Vec::new();
    run_mcts_transfer_observed(&problem, &problem.domain, &sources, &config, &mut |tree, record| {
        checked += 1;
        let at = |v: String| format!("t={} {v}", record.t);
        violations.extend(tree.invariant_violations().into_iter().map(at));

        let leaves = tree.leaves();
        let mut source_seen: Vec<Vec<usize>> = tree.sources().iter().map(|s| vec![0; s.len()]).collect();
        let mut target_seen = vec![0usize; tree.target().len()];
        for &leaf in &leaves {
            let node = tree.node(leaf);
            for (k, pool) in node.source_pools.iter().enumerate() {
                for &i in pool {
                    source_seen[k][i] += 1;
                }
            }
            for &i in &node.target_pool {
                target_seen[i] += 1;
            }
        }
        if source_seen.iter().flatten().chain(&target_seen).any(|&c| c != 1) {
            violations.push(format!("t={} samples not conserved across leaves", record.t));
        }
        for node in tree.nodes() {
            let (Some(l), Some(r)) = (node.left, node.right) else {
                continue;
            };
            let (left, right) = (tree.node(l), tree.node(r));
            if left.potential < right.potential {
                violations.push(format!("t={} node {}: left < right", record.t, node.id));
            }
            if left.n_target() + right.n_target() != node.n_target()
                || left.n_source() + right.n_source() != node.n_source()
            {
                violations.push(format!("t={} node {}: children do not partition it", record.t, node.id));
            }
        }
        let mut again = tree.clone();
        if again.treeify(Stage::Optimize) != 0 || again.snapshot() != tree.snapshot() {
            violations.push(format!("t={} treeify not idempotent", record.t));
        }
    })
    .map_err(|e| e.to_string())?;
    if checked != BUDGET {
        return Err(format!("observer saw {checked} iterations"));
    }
    match violations.first() {
        None => Ok(format!("{checked} iterations, zero violations")),
        Some(first) => Err(format!("{} violations, first: {first}", violations.len())),
    }
}

fn reduction() -> Outcome {
    let problem = make_standard("rastrigin", 2, None).map_err(|e| e.to_string())?;
    for seed in [0, 17] {
        let config = |method| OptimizerConfig {
            eval_budget: 50,
            seed,
            ..OptimizerConfig::for_method(method)
        };
        let a = run_mcts_transfer(&problem, &problem.domain, &[], &config(Method::MctsTransfer))
            .map_err(|e| e.to_string())?;
        let b = run_la_mcts(&problem, &problem.domain, &config(Method::LaMcts)).map_err(|e| e.to_string())?;
        if a.records.len() != 50 || b.records.len() != 50 {
            return Err(format!("seed {seed}: trace lengths {} and {}", a.records.len(), b.records.len()));
        }
        for (p, q) in a.records.iter().zip(&b.records) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            if bits(&p.x) != bits(&q.x) || p.y.to_bits() != q.y.to_bits() {
                return Err(format!("seed {seed}: traces differ at t={}", p.t));
            }
        }
    }
    Ok("zero-source traces bitwise equal to la_mcts (seeds 0, 17; 50 evals)".into())
}

// ------------------------------------------------------------- surrogate

fn matern52(a: &[f64], b: &[f64], h: &Hyperparams) -> f64 {
    let r = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let u = 5f64.sqrt() * r / h.length_scale;
    h.signal_variance * (1.0 + u + u * u / 3.0) * (-u).exp()
}

fn dense_posterior(xs: &[Vec<f64>], ys: &[f64], h: &Hyperparams, jitter: f64, x: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let sd = if sd > 1e-12 { sd } else { 1.0 };
    let y = DVector::from_iterator(n, ys.iter().map(|y| (y - mean) / sd));
    let k = DMatrix::from_fn(n, n, |i, j| {
        matern52(&xs[i], &xs[j], h) + if i == j { h.noise_variance + jitter } else { 0.0 }
    });
    let ks = DVector::from_iterator(n, xs.iter().map(|t| matern52(t, x, h)));
    let lu = k.lu();
    let alpha = lu.solve(&y)?;
    let v = lu.solve(&ks)?;
    Some((mean + sd * ks.dot(&alpha), sd * sd * (h.signal_variance - ks.dot(&v)).max(0.0)))
}

fn gp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for problem in 0..20 {
        let n = rng.random_range(1..=10);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h = Hyperparams {
            signal_variance: rng.random_range(0.3..3.0),
            length_scale: rng.random_range(0.1..1.0),
            noise_variance: rng.random_range(1e-6..1e-2),
        };
        let model = GpModel::with_hyperparams(&xs, &ys, h).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let x = vec![rng.random::<f64>(), rng.random::<f64>()];
            let (m, s) = model.predict(&x);
            let (om, ov) = dense_posterior(&xs, &ys, &h, model.jitter(), &x)
                .ok_or(format!("problem {problem}: oracle solve failed"))?;
            worst = worst.max((m - om).abs()).max((s * s - ov).abs());
            close(m, om, 1e-8, &format!("problem {problem} mean"))?;
            close(s * s, ov, 1e-8, &format!("problem {problem} variance"))?;
        }
    }
    let ei_cases = [
        (0.0, 1.0, 0.398_942_280_401_432_7),
        (1.0, 1.0, 1.083_315_470_587_686_4),
        (-1.0, 2.0, 0.395_593_114_802_612_06),
        (0.3, 0.05, 0.300_000_000_007_817_85),
        (-2.0, 0.5, 3.572_629_216_202_957e-6),
    ];
    for (diff, std, want) in ei_cases {
        close(expected_improvement(0.7 + diff, std, 0.7), want, 1e-9, &format!("ei({diff}, {std})"))?;
    }
    Ok(format!("20 problems, worst deviation {worst:.1e}; {} EI spot values", ei_cases.len()))
}

// ------------------------------------------------------------ similarity

fn quadratic_task(id: &str, seed: u64, n: usize) -> TaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = TaskDataset::new(id, TaskRole::Source, 2);
    for _ in 0..n {
        let x = vec![rng.random::<f64>(), rng.random::<f64>()];
        let y = -((x[0] - 0.3).powi(2) + (x[1] - 0.6).powi(2));
        d.push(x, y);
    }
    d
}

fn similarity_suite() -> Outcome {
    for seed in 0..5 {
        let d = quadratic_task("d", seed, 30);
        for measure in [DistanceMeasure::OptimalPoint, DistanceMeasure::BestNMean, DistanceMeasure::BestNPercent] {
            let cfg = SimilarityConfig {
                measure,
                ..SimilarityConfig::default()
            };
            let got = distance_points(&d, &d, &cfg);
            if got != 0.0 {
                return Err(format!("{measure:?} distance(D, D) = {got}"));
            }
        }
    }
    let ys: Vec<f64> = (0..25).map(|i| ((i * 7) % 25) as f64).collect();
    let inverted: Vec<f64> = ys.iter().map(|y| -y).collect();
    let (perfect, worst) = (kendall_distance(&ys, &ys), kendall_distance(&inverted, &ys));
    if perfect != 0.0 || worst != 1.0 {
        return Err(format!("kendall perfect {perfect}, inverted {worst}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = quadratic_task("d", 9, 50);
    let same = distance_kl(&d, &d, 1024, &mut rng);
    if same.abs() >= 1e-3 {
        return Err(format!("KL(D, D) = {same}"));
    }
    for seed in 0..20 {
        let kl = distance_kl(&quadratic_task("a", seed, 20), &quadratic_task("b", seed + 100, 35), 1024, &mut rng);
        if kl < 0.0 {
            return Err(format!("negative KL {kl}"));
        }
    }
    Ok(format!("point measures 0, kendall 0/1, KL(D, D) = {same:.1e}, 20 KL pairs ≥ 0"))
}

// --------------------------------------------------------- determinism

fn determinism(dir: &Path) -> Outcome {
    let spec = sphere_spec(dir, &["d_5_-5", "d_-5_-5"], &[Method::MctsTransfer, Method::BoxGp]);
    let experiment = spec.validate().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for (name, workers) in [("rerun_a", 1), ("rerun_b", 4)] {
        let out = dir.join(name);
        run_experiment(&experiment, &out, &RunOptions { workers, seed_offset: 0 }).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(out.join("summary.csv")).map_err(|e| e.to_string())?);
    }
    if bytes[0] == bytes[1] {
        Ok(format!("summary.csv identical across reruns ({} bytes)", bytes[0].len()))
    } else {
        Err("summary.csv differs between reruns".into())
    }
}

// ------------------------------------------------------------- ellipsoid

fn ellipsoid_enclosure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for set in 0..50 {
        let dim = rng.random_range(1..=5);
        let n = rng.random_range(1..=10);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let (center, shape) =
            min_volume_ellipsoid(&points, KHACHIYAN_TOLERANCE).map_err(|e| format!("set {set}: {e}"))?;
        for p in &points {
            let mut q = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    q += (p[i] - center[i]) * shape[i * dim + j] * (p[j] - center[j]);
                }
            }
            worst = worst.max(q);
            if q > 1.0 + 1e-6 {
                return Err(format!("set {set} (dim {dim}, n {n}): membership {q}"));
            }
        }
    }
    Ok(format!("50 sets enclosed, largest membership {worst:.9}"))
}

// ------------------------------------------------------------------ main

fn report(n: usize, title: &str, outcome: &Outcome) {
    match outcome {
        Ok(detail) => println!("PASS criterion {n:>2} {title}: {detail}"),
        Err(detail) => println!("FAIL criterion {n:>2} {title}: {detail}"),
    }
}

fn main() -> ExitCode {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("cannot create a scratch directory: {e}");
            return ExitCode::FAILURE;
        }
    };
    let dir = dir.path();
    let data = sphere_sources(dir);

    let started = Instant::now();
    let mixed = data.clone().and_then(|_| {
        run_spec(
            &sphere_spec(dir, &["d_5_5", "d_5_-5", "d_-5_-5"], &[Method::MctsTransfer, Method::GpEi, Method::LaMcts]),
            &dir.join("mixed"),
        )
    });
    let elapsed = started.elapsed().as_secs_f64();
    let dissimilar = data.clone().and_then(|_| {
        run_spec(
            &sphere_spec(dir, &["d_5_-5", "d_-5_-5"], &[Method::MctsTransfer, Method::BoxGp]),
            &dir.join("dissimilar"),
        )
    });

    let outcomes: Vec<(&str, Outcome)> = vec![
        ("sphere2d mixed transfer", mixed.as_ref().map_err(|e| e.clone()).and_then(|r| mixed_transfer(r, elapsed))),
        ("sphere2d weight identification", mixed.as_ref().map_err(|e| e.clone()).and_then(weight_identification)),
        ("sphere2d dissimilar setting", dissimilar.as_ref().map_err(|e| e.clone()).and_then(dissimilar_setting)),
        ("equation cases", equation_cases()),
        ("tree invariants", tree_invariants()),
        ("zero-source reduction", reduction()),
        ("gp oracle", gp_oracle()),
        ("similarity suite", similarity_suite()),
        ("determinism", data.and_then(|_| determinism(dir))),
        ("ellipsoid enclosure", ellipsoid_enclosure()),
    ];

    let mut failed = 0;
    for (i, (title, outcome)) in outcomes.iter().enumerate() {
        report(i + 1, title, outcome);
        failed += outcome.is_err() as usize;
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
