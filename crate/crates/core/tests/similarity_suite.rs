//! Distance measures and their limiting cases.

use mcts_transfer::domain::{TaskDataset, TaskRole};
use mcts_transfer::similarity::{distance_kl, distance_points, kendall_distance, DistanceMeasure, SimilarityConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_task(id: &str, seed: u64, n: usize) -> TaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = TaskDataset::new(id, TaskRole::Source, 2);
    for _ in 0..n {
        let x = vec![rng.random::<f64>(), rng.random::<f64>()];
        let y = -((x[0] - 0.3).powi(2) + (x[1] - 0.6).powi(2));
        d.push(x, y);
    }
    d
}

fn clustered(id: &str, seed: u64, centre: [f64; 2]) -> TaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = TaskDataset::new(id, TaskRole::Source, 2);
    for _ in 0..40 {
        let x: Vec<f64> = centre.iter().map(|c| c + 0.03 * (rng.random::<f64>() - 0.5)).collect();
        d.push(x, rng.random());
    }
    d
}

#[test]
fn point_measures_vanish_on_identical_data() {
    for seed in 0..5 {
        let d = random_task("d", seed, 30);
        for measure in [DistanceMeasure::OptimalPoint, DistanceMeasure::BestNMean, DistanceMeasure::BestNPercent] {
            let cfg = SimilarityConfig {
                measure,
                ..SimilarityConfig::default()
            };
            assert_eq!(distance_points(&d, &d, &cfg), 0.0, "{measure:?}");
        }
    }
}

#[test]
fn best_point_distance_is_euclidean() {
    let mut a = TaskDataset::new("a", TaskRole::Source, 2);
    a.push(vec![0.0, 0.0], 1.0);
    let mut b = TaskDataset::new("b", TaskRole::Target, 2);
    b.push(vec![3.0, 4.0], 1.0);
    let cfg = SimilarityConfig {
        measure: DistanceMeasure::OptimalPoint,
        ..SimilarityConfig::default()
    };
    assert!((distance_points(&a, &b, &cfg) - 5.0).abs() < 1e-12);
}

#[test]
fn kendall_extremes() {
    let ys: Vec<f64> = (0..25).map(|i| ((i * 7) % 25) as f64).collect();
    assert_eq!(kendall_distance(&ys, &ys), 0.0);
    let inverted: Vec<f64> = ys.iter().map(|y| -y).collect();
    assert_eq!(kendall_distance(&inverted, &ys), 1.0);
}

#[test]
fn kendall_of_random_predictions_is_near_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total = 0.0;
    for _ in 0..20 {
        let ys: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let preds: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let d = kendall_distance(&preds, &ys);
        assert!((d - 0.5).abs() < 0.15, "{d}");
        total += d;
    }
    assert!((total / 20.0 - 0.5).abs() < 0.05);
}

#[test]
fn kl_is_zero_on_identical_data_and_large_on_disjoint() {
    let d = random_task("d", 9, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let same = distance_kl(&d, &d, 1024, &mut rng);
    assert!(same.abs() < 1e-3, "{same}");
    let far = distance_kl(&clustered("a", 1, [0.1, 0.1]), &clustered("b", 2, [0.9, 0.9]), 1024, &mut rng);
    assert!(far > 1.0, "{far}");
}

#[test]
fn kl_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..20 {
        let a = random_task("a", seed, 20);
        let b = random_task("b", seed + 100, 35);
        assert!(distance_kl(&a, &b, 1024, &mut rng) >= 0.0);
    }
}
