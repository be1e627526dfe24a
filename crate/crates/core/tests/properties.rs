mod common;

use common::{dist, quadratic_data, quadratic_equilibrium, saddle_solve, z_sums};
use gne_seek::analysis::{
    check_double_integrator_conditions, estimate_monotonicity, exact_monotonicity, oracle_gne, sampled_monotonicity, storage_search,
    MonotonicityMethod,
};
use gne_seek::cli::run_simulation;
use gne_seek::dynamics::companion;
use gne_seek::scenarios::{random_quadratic_scenario, scenario_der, scenario_formation, RandomGameOptions};
use gne_seek::sim::FnField;
use gne_seek::{integrate, BoxSet, Digraph, IntegratorConfig, RuleParams, ScenarioConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_cfg(seed: u64) -> ScenarioConfig {
    random_quadratic_scenario(seed, &RandomGameOptions::default())
}

fn boxes(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((-5.0..5.0f64, 0.0..5.0f64), n).prop_map(|v| {
        let lo: Vec<f64> = v.iter().map(|(a, _)| *a).collect();
        let hi: Vec<f64> = v.iter().map(|(a, w)| a + w).collect();
        (lo, hi)
    })
}

fn balanced_graph(seed: u64, nodes: usize, cycles: usize) -> Digraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Digraph::random_balanced(nodes, cycles, 0.1, 3.0, &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_firmly_nonexpansive(
        (lo, hi) in boxes(4),
        x in prop::collection::vec(-20.0..20.0f64, 4),
        y in prop::collection::vec(-20.0..20.0f64, 4),
    ) {
        let b = BoxSet::new(DVector::from_vec(lo), DVector::from_vec(hi)).unwrap();
        let (px, py) = (b.project(&x), b.project(&y));
        let dx = DVector::from_vec(x.clone()) - DVector::from_vec(y.clone());
        let dp = &px - &py;
        prop_assert!(dp.norm() <= dx.norm() + 1e-12);
        prop_assert!(dp.norm_squared() <= dp.dot(&dx) + 1e-12);
        prop_assert!(b.contains(px.as_slice(), 0.0));
        prop_assert_eq!(b.project(px.as_slice()), px);
    }

    #[test]
    fn balanced_laplacian_properties(seed in any::<u64>(), nodes in 2usize..8, cycles in 1usize..4) {
        let g = balanced_graph(seed, nodes, cycles);
        let l = g.laplacian();
        let ones = DVector::from_element(nodes, 1.0);
        prop_assert!((&l * &ones).amax() < 1e-12);
        prop_assert!((l.transpose() * &ones).amax() < 1e-12);
        prop_assert!(g.is_weight_balanced(1e-12) && g.is_strongly_connected());
        let sym = (&l + l.transpose()) * 0.5;
        let ev = sym.symmetric_eigenvalues();
        prop_assert!(ev.iter().all(|&e| e > -1e-10));
        prop_assert!(g.spectral_summary().lambda2 > 0.0);
    }

    #[test]
    fn aggregate_is_additive(seed in 0u64..500, y in prop::collection::vec(-10.0..10.0f64, 10)) {
        let cfg = random_cfg(seed);
        let game = cfg.build_game(&cfg.build_graph().unwrap()).unwrap();
        let y = &y[..game.profile_dim()];
        let sigma = game.aggregate(y).unwrap();
        let n = game.strategy_dim();
        let mut parts = DVector::zeros(game.aggregate_dim());
        for i in 0..game.n_players() {
            let mut single = vec![0.0; y.len()];
            single[i * n..(i + 1) * n].copy_from_slice(&y[i * n..(i + 1) * n]);
            parts += game.aggregate(&single).unwrap();
        }
        prop_assert!((sigma - parts).amax() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences(seed in 0u64..500, y in prop::collection::vec(-10.0..10.0f64, 10)) {
        let cfg = random_cfg(seed);
        let game = cfg.build_game(&cfg.build_graph().unwrap()).unwrap();
        let y = &y[..game.profile_dim()];
        let f = game.pseudo_gradient(y).unwrap();
        let fd = game.cost_gradient_fd(y, 1e-5);
        prop_assert!((&f - fd).amax() < 1e-6 * (1.0 + f.amax()));
        let (m, q, _, _) = quadratic_data(&cfg);
        prop_assert!((&f - (&m * DVector::from_column_slice(y) + q)).amax() < 1e-10);
    }

    #[test]
    fn generator_and_formation_gradients_match(y in prop::collection::vec(-9.0..9.0f64, 10), p in prop::collection::vec(20.0..45.0f64, 6)) {
        for (cfg, y) in [(scenario_formation(), &y[..]), (scenario_der(), &p[..])] {
            let game = cfg.build_game(&cfg.build_graph().unwrap()).unwrap();
            let f = game.pseudo_gradient(y).unwrap();
            let fd = game.cost_gradient_fd(y, 1e-5);
            prop_assert!((&f - fd).amax() < 1e-5 * (1.0 + f.amax()));
        }
    }

    #[test]
    fn monotonicity_estimates_bracket_the_exact_constants(seed in 0u64..500, samples in 10usize..200) {
        let cfg = random_cfg(seed);
        let game = cfg.build_game(&cfg.build_graph().unwrap()).unwrap();
        let (m, _, _, _) = quadratic_data(&cfg);
        let exact = exact_monotonicity(&m);
        let est = estimate_monotonicity(&game, 100, seed);
        prop_assert_eq!(est.method, MonotonicityMethod::JacobianExact);
        prop_assert!((est.omega - exact.omega).abs() < 1e-9 && (est.theta - exact.theta).abs() < 1e-9);
        let sampled = sampled_monotonicity(&game, samples, seed);
        prop_assert!(sampled.omega >= exact.omega - 1e-9);
        prop_assert!(sampled.theta <= exact.theta + 1e-9);
        prop_assert!(exact.omega >= 1.0 - 1e-9 && exact.theta <= 2.0 + 1e-9);
    }

    #[test]
    fn multiplier_gain_condition_is_monotone_in_alpha(seed in 0u64..500, a in 0.01..100.0f64, b in 0.01..100.0f64) {
        let cfg = random_cfg(seed);
        let built = cfg.build().unwrap();
        let cl = &built.closed_loop;
        let spectral = cl.graph().spectral_summary();
        let mono = estimate_monotonicity(cl.game(), 100, 0);
        let gains = vec![4.0; cl.game().n_players()];
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let r_lo = check_double_integrator_conditions(&spectral, cl.game(), &gains, &RuleParams::new(lo, 0.1).unwrap(), &mono);
        let r_hi = check_double_integrator_conditions(&spectral, cl.game(), &gains, &RuleParams::new(hi, 0.1).unwrap(), &mono);
        let (m_lo, m_hi) = (r_lo.margin("alpha_gt").unwrap(), r_hi.margin("alpha_gt").unwrap());
        prop_assert!(m_hi.slack >= m_lo.slack);
        prop_assert!(!m_lo.holds() || m_hi.holds());
        prop_assert!(!r_lo.satisfied || r_hi.satisfied);
    }

    #[test]
    fn coupling_norm_inequality_never_holds(seed in 0u64..500, gains in prop::collection::vec(0.1..50.0f64, 5)) {
        // theta >= omega gives 2 omega - theta^2 <= 1, so the slack is at
        // most k_min - 2 k_max - ||A||^2 <= -k_min
        let cfg = random_cfg(seed);
        let built = cfg.build().unwrap();
        let cl = &built.closed_loop;
        let mono = estimate_monotonicity(cl.game(), 100, 0);
        let gains = &gains[..cl.game().n_players()];
        let k_min = gains.iter().copied().fold(f64::INFINITY, f64::min);
        let rep = check_double_integrator_conditions(&cl.graph().spectral_summary(), cl.game(), gains, &cl.params(), &mono);
        let m = rep.margin("coupling_norm_sq_lt").unwrap();
        prop_assert!(m.slack <= -k_min + 1e-12);
        prop_assert!(!rep.satisfied);
    }

    #[test]
    fn no_storage_matrix_matches_the_output(k in prop::collection::vec(1.05..8.0f64, 1..4)) {
        let mut feedback = vec![1.0];
        feedback.extend(k);
        let h = companion(&feedback);
        if gne_seek::dynamics::spectral_abscissa(&h) < 0.0 {
            let (best, closest) = storage_search(&h, 10);
            prop_assert!(best.is_none());
            if let Some(c) = closest {
                prop_assert!(c.output_error > 1e-8);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn oracle_agrees_with_the_saddle_solve(seed in 0u64..10_000) {
        let cfg = random_cfg(seed);
        let game = cfg.build_game(&cfg.build_graph().unwrap()).unwrap();
        let (y, mu) = quadratic_equilibrium(&cfg);
        let sol = oracle_gne(&game).unwrap();
        let scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(dist(&sol.y, &y) < 1e-8 * scale);
        prop_assert!(dist(&sol.mu, &mu) < 1e-6 * scale);
    }

    #[test]
    fn oracle_respects_active_boxes(seed in 0u64..10_000, width in 0.05..0.5f64) {
        // shrink the boxes until some bound is active; the result must
        // still satisfy the projected stationarity and the constraint
        let mut cfg = random_cfg(seed);
        let (y_free, _) = quadratic_equilibrium(&cfg);
        if let gne_seek::config::GameConfig::Quadratic { strategy_dim, lower, upper, .. } = &mut cfg.game {
            let n = *strategy_dim;
            *lower = y_free.chunks(n).map(|c| c.iter().map(|v| v - width * v.abs().max(1.0)).collect()).collect();
            *upper = y_free.chunks(n).map(|c| c.iter().map(|v| v + 10.0).collect()).collect();
            lower[0][0] = y_free[0] + width;
        }
        let game = cfg.build_game(&cfg.build_graph().unwrap()).unwrap();
        match oracle_gne(&game) {
            Ok(sol) => {
                let rep = gne_seek::analysis::kkt_report_pair(&game, &sol.y, &sol.mu);
                prop_assert!(rep.stationarity < 1e-8 && rep.feasibility < 1e-8, "{rep:?}");
                prop_assert!(game.profile_in_bounds(&sol.y, 1e-12));
            }
            // shifting a bound may leave the shared constraint infeasible
            Err(e) => prop_assert!(matches!(e, gne_seek::OracleError::NotConverged { .. }), "{e}"),
        }
    }

    #[test]
    fn z_sum_is_conserved(seed in 0u64..10_000) {
        let mut cfg = random_cfg(seed);
        cfg.integrator.t_end = 20.0;
        cfg.integrator.stop_tol = 0.0;
        let run = run_simulation(&cfg).unwrap();
        let worst = z_sums(&run.built.closed_loop, &run.trajectory.states).into_iter().fold(0.0, f64::max);
        prop_assert!(worst < 1e-10);
    }

    #[test]
    fn config_round_trips(seed in any::<u64>()) {
        let cfg = random_cfg(seed);
        let text = cfg.to_toml_string();
        prop_assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn integration_is_deterministic(seed in 0u64..10_000) {
        let mut cfg = random_cfg(seed);
        cfg.integrator.t_end = 5.0;
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        prop_assert_eq!(a.trajectory, b.trajectory);
    }
}

#[test]
fn rk4_error_shrinks_with_fourth_power_of_step() {
    // x'' = -x from (1, 0); exact solution (cos t, -sin t)
    let field = FnField::new(2, |_t, x: &[f64], out: &mut [f64]| {
        out[0] = x[1];
        out[1] = -x[0];
    });
    let err = |h: f64| {
        let traj = integrate(&field, &[1.0, 0.0], &IntegratorConfig::new(h, 2.0)).unwrap();
        let x = traj.final_state();
        ((x[0] - 2f64.cos()).powi(2) + (x[1] + 2f64.sin()).powi(2)).sqrt()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
}

#[test]
fn estimator_sum_tracks_the_aggregate_with_frozen_strategies() {
    // summing the estimator rows removes the Laplacian terms, so the mean
    // estimate relaxes to sigma(y) at unit rate regardless of the graph
    let cfg = scenario_formation();
    let graph = Digraph::directed_cycle(5).unwrap();
    let game = cfg.build_game(&cfg.build_graph().unwrap()).unwrap();
    let y = cfg.initial_outputs().unwrap();
    let layer = gne_seek::dynamics::BoundaryLayer::new(&graph, &game, &y);
    let x0 = vec![0.0; layer.initial_state().len()];
    let traj = integrate(&layer, &x0, &IntegratorConfig::new(0.01, 5.0)).unwrap();
    let sigma = game.aggregate(&y).unwrap();
    let m = game.aggregate_dim();
    let eta = &traj.final_state()[..5 * m];
    for k in 0..m {
        let mean: f64 = (0..5).map(|i| eta[i * m + k]).sum::<f64>() / 5.0;
        let expected = sigma[k] * (1.0 - (-5.0f64).exp());
        assert!((mean - expected).abs() < 1e-8, "component {k}: {mean} vs {expected}");
    }
}

#[test]
fn saddle_solve_hand_case() {
    // J_i = y_i^2 / 2, y_1 + y_2 = 2: y = (1, 1), mu = -1
    let m = DMatrix::identity(2, 2);
    let q = DVector::zeros(2);
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let d = DVector::from_element(1, 2.0);
    let (y, mu) = saddle_solve(&m, &q, &a, &d);
    assert!(dist(&y, &[1.0, 1.0]) < 1e-14 && (mu[0] + 1.0).abs() < 1e-14);
}
