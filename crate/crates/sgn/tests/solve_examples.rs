//! End-to-end solver checks on the benchmark problems.

use sgn::moments::{MomentProblem, ParamVector, WeightMatrix};
use sgn::problems::QuantileProblem;
use sgn::solver::{solve, JacobianMode, SolverConfig, StopOutcome, StoppingRule};

fn quantile_config(eps: f64) -> SolverConfig {
    SolverConfig {
        gamma: 0.1,
        eps: Some(eps),
        jacobian: JacobianMode::ClosedForm,
        covering: None,
        theta0: Some(vec![0.0]),
        b_max: 200,
        ..SolverConfig::default()
    }
}

#[test]
fn quantile_solve_matches_order_statistic_oracle() {
    // frozen dataset; the oracle scans sorted data for the sign change of
    // F_n(theta) - t and returns the root-interval midpoint
    let problem = QuantileProblem::standard_normal(250, 0.7, 1).unwrap();
    let oracle = problem.gmm_root_midpoint();
    let w = WeightMatrix::identity(1);
    let result = solve(&problem, &w, &quantile_config(0.1)).unwrap();
    let estimate = result.theta_best.values()[0];
    assert!(
        (estimate - oracle).abs() <= 1e-3,
        "estimate {estimate} vs oracle midpoint {oracle}"
    );
}

#[test]
fn quantile_solve_lands_within_one_order_statistic_for_any_seed() {
    // across datasets the best iterate fits the moment condition as well
    // as the step function allows: |F_n(theta) - t| <= 1/n
    let w = WeightMatrix::identity(1);
    for seed in 0..20 {
        let problem = QuantileProblem::standard_normal(250, 0.7, seed).unwrap();
        let result = solve(&problem, &w, &quantile_config(0.1)).unwrap();
        let n = problem.sample_size() as f64;
        assert!(
            result.best_obj_norm <= 1.0 / n + 1e-12,
            "seed {seed}: best |F_n - t| = {}",
            result.best_obj_norm
        );
    }
}

#[test]
fn chi_square_rule_stops_quantile_solve_early() {
    let problem = QuantileProblem::standard_normal(250, 0.7, 3).unwrap();
    let w = WeightMatrix::identity(1);
    let cfg = SolverConfig {
        stop: StoppingRule::ChiSquarePlusJ { level: 0.95, extra_j: 10 },
        ..quantile_config(0.1)
    };
    let result = solve(&problem, &w, &cfg).unwrap();
    assert!(matches!(result.stopped_by, StopOutcome::ChiSquareSatisfied { .. }));
    assert!(result.iterations_run < 200, "stopped at {}", result.iterations_run);
    // the rule ran at least extra_j iterations past the first pass
    if let StopOutcome::ChiSquareSatisfied { first_pass } = result.stopped_by {
        assert!(result.iterations_run >= first_pass + 10);
    }
}

#[test]
fn momentum_quantile_solve_stays_deterministic() {
    let problem = QuantileProblem::standard_normal(250, 0.7, 4).unwrap();
    let w = WeightMatrix::identity(1);
    let cfg = SolverConfig { alpha: 0.47, ..quantile_config(0.1) };
    let a = solve(&problem, &w, &cfg).unwrap();
    let b = solve(&problem, &w, &cfg).unwrap();
    assert_eq!(a.theta_best.values(), b.theta_best.values());
    let theta = ParamVector::new(vec![a.theta_best.values()[0]]).unwrap();
    assert_eq!(
        problem.moments(&theta).unwrap().values()[0].abs(),
        a.best_obj_norm,
        "best norm must be the weighted moment norm at the best iterate"
    );
}
