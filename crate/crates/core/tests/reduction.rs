//! Without source data the transfer loop is the plain tree search.

use mcts_transfer::bench::{make_sphere, make_standard};
use mcts_transfer::domain::SearchDomain;
use mcts_transfer::optimizer::{run_la_mcts, run_mcts_transfer, Method, OptimizerConfig};

#[test]
fn zero_sources_reproduce_la_mcts() {
    let problem = make_standard("rastrigin", 2, None).unwrap();
    for seed in [0, 17] {
        let transfer = run_mcts_transfer(
            &problem,
            &problem.domain,
            &[],
            &OptimizerConfig {
                eval_budget: 50,
                seed,
                ..OptimizerConfig::for_method(Method::MctsTransfer)
            },
        )
        .unwrap();
        let plain = run_la_mcts(
            &problem,
            &problem.domain,
            &OptimizerConfig {
                eval_budget: 50,
                seed,
                ..OptimizerConfig::for_method(Method::LaMcts)
            },
        )
        .unwrap();
        assert_eq!(transfer.records.len(), 50);
        assert_eq!(plain.records.len(), 50);
        for (a, b) in transfer.records.iter().zip(&plain.records) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.x), bits(&b.x), "t={}", a.t);
            assert_eq!(a.y.to_bits(), b.y.to_bits(), "t={}", a.t);
        }
    }
}

#[test]
fn gamma_is_irrelevant_without_sources() {
    let domain = SearchDomain::uniform(2, -10.0, 10.0).unwrap();
    let problem = make_sphere(&[4.0, 4.0], &domain).unwrap();
    let run = |gamma| {
        run_mcts_transfer(
            &problem,
            &domain,
            &[],
            &OptimizerConfig {
                eval_budget: 30,
                gamma,
                ..OptimizerConfig::default()
            },
        )
        .unwrap()
    };
    let a = run(0.99);
    let b = run(0.2);
    let ys = |t: &mcts_transfer::trace::RunTrace| t.records.iter().map(|r| r.y.to_bits()).collect::<Vec<_>>();
    assert_eq!(ys(&a), ys(&b));
}
