//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{der_equilibrium, dist, formation_equilibrium, quadratic_equilibrium, sup, z_sums};
use gne_seek::analysis::{check_double_integrator_conditions, damping_gain_bound, estimate_monotonicity, oracle_gne};
use gne_seek::cli::{check_summary, run_simulation, SimulationRun};
use gne_seek::dynamics::BoundaryLayer;
use gne_seek::report::trajectory_csv_string;
use gne_seek::scenarios::{
    builtin_scenarios, formation_offset, random_quadratic_scenario, scenario_der, scenario_formation, RandomGameOptions,
    DER_LOWER, DER_UPPER,
};
use gne_seek::sim::fit_exponential_rate;
use gne_seek::{integrate, IntegratorConfig, RuleParams, ScenarioConfig};
use nalgebra::DMatrix;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timed(cfg: &ScenarioConfig) -> (SimulationRun, Duration) {
    let t0 = Instant::now();
    let run = run_simulation(cfg).expect("scenario builds");
    (run, t0.elapsed())
}

fn random_cfg(seed: u64) -> ScenarioConfig {
    random_quadratic_scenario(seed, &RandomGameOptions::default())
}

fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let (mut worst_dist, mut worst_mu) = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..50 {
        let cfg = random_cfg(seed);
        let (y_star, _) = quadratic_equilibrium(&cfg);
        let run = run_simulation(&cfg).expect("random scenario builds");
        let cl = &run.built.closed_loop;
        assert!(cl.game().profile_in_bounds(&y_star, -1e-6), "seed {seed}: equilibrium not interior");
        let d = dist(cl.outputs(run.trajectory.final_state()).as_slice(), &y_star);
        let mu = run.trajectory.final_residual().unwrap().mu_consensus;
        worst_dist = worst_dist.max(d);
        worst_mu = worst_mu.max(mu);
        if run.diverged || d > 1e-4 || mu > 1e-5 {
            failures.push(seed);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        failures.is_empty() && secs < 60.0,
        format!("50 games, max dist {worst_dist:.2e}, max mu_consensus {worst_mu:.2e}, {secs:.1} s, failing seeds {failures:?}"),
    )
}

fn equilibrium_field() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for cfg in builtin_scenarios() {
        let built = cfg.build().unwrap();
        let cl = &built.closed_loop;
        let (y, mu) = match cfg.name.as_str() {
            "formation" => formation_equilibrium(cl.game()),
            _ => {
                let (y, mu) = der_equilibrium(&cfg);
                (y, vec![mu])
            }
        };
        let lib = oracle_gne(cl.game()).unwrap();
        let mut worst: f64 = 0.0;
        for (y, mu) in [(y, mu), (lib.y, lib.mu)] {
            let eq = cl.equilibrium_state(&y, &mu).unwrap();
            let mut out = vec![0.0; eq.as_slice().len()];
            cl.eval_into(eq.as_slice(), &mut out);
            worst = worst.max(sup(&out));
        }
        ok &= worst <= 1e-8;
        parts.push(format!("{} {worst:.1e}", cfg.name));
    }
    check(ok, format!("sup-norm of the field at equilibrium: {}", parts.join(", ")))
}

fn formation() -> Outcome {
    let (run, elapsed) = timed(&scenario_formation());
    let cl = &run.built.closed_loop;
    let y = cl.outputs(run.trajectory.final_state());
    let l = cl.graph().laplacian().kronecker(&DMatrix::identity(2, 2));
    let dev: Vec<f64> = (0..10).map(|k| y[k] - formation_offset(k / 2)[k % 2]).collect();
    let err = (&l * nalgebra::DVector::from_column_slice(&dev)).norm();
    let spread = (0..2)
        .map(|c| {
            let v: Vec<f64> = (0..5).map(|i| dev[2 * i + c]).collect();
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let inside = run.trajectory.states.iter().all(|s| cl.outputs(s).iter().all(|v| v.abs() <= 10.0));
    check(
        !run.diverged && err <= 1e-3 && spread <= 1e-3 && inside && elapsed.as_secs_f64() < 10.0,
        format!(
            "||(L x I)(y - h)|| = {err:.2e}, offset spread {spread:.2e}, in boxes {inside}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn demand_response() -> Outcome {
    let cfg = scenario_der();
    let (run, elapsed) = timed(&cfg);
    let cl = &run.built.closed_loop;
    let (y_star, _) = der_equilibrium(&cfg);
    let y = cl.outputs(run.trajectory.final_state());
    let total: f64 = y.iter().sum();
    let inside = run
        .trajectory
        .states
        .iter()
        .all(|s| cl.outputs(s).iter().enumerate().all(|(i, v)| *v >= DER_LOWER[i] && *v <= DER_UPPER[i]));
    let mu = run.trajectory.final_residual().unwrap().mu_consensus;
    let d = dist(y.as_slice(), &y_star);
    check(
        !run.diverged && (total - 191.0).abs() <= 0.1 && inside && mu <= 1e-3 && d <= 1e-2 && elapsed.as_secs_f64() < 10.0,
        format!(
            "sum y = {total:.6}, in boxes {inside}, mu_consensus {mu:.2e}, dist {d:.2e}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn exponential_rate() -> Outcome {
    let mut worst_r2: f64 = 1.0;
    let mut slowest = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for seed in 0..20 {
        let cfg = random_cfg(seed);
        let summary = check_summary(&cfg, seed).unwrap();
        let t1 = summary.double_integrator.as_ref().unwrap();
        let usable = ["k_max_lt_3k_min", "k_min_gt_a1_bound", "alpha_gt"].iter().all(|id| t1.margin(id).unwrap().holds());
        assert!(usable, "seed {seed}: gain conditions not met");
        let (y_star, _) = quadratic_equilibrium(&cfg);
        let run = run_simulation(&cfg).unwrap();
        let cl = &run.built.closed_loop;
        let dists: Vec<f64> = run.trajectory.states.iter().map(|s| dist(cl.outputs(s).as_slice(), &y_star)).collect();
        let fit = fit_exponential_rate(&run.trajectory.times, &dists).unwrap();
        worst_r2 = worst_r2.min(fit.r_squared);
        slowest = slowest.max(fit.rate);
        if !(fit.rate < 0.0 && fit.r_squared > 0.9) {
            failures.push(seed);
        }
    }
    check(
        failures.is_empty(),
        format!("20 games, slowest rate {slowest:.4}, min r^2 {worst_r2:.4}, failing seeds {failures:?}"),
    )
}

fn estimator_tracking() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for cfg in builtin_scenarios() {
        let graph = cfg.build_graph().unwrap();
        let game = cfg.build_game(&graph).unwrap();
        let layer = BoundaryLayer::new(&graph, &game, &cfg.initial_outputs().unwrap());
        let traj = integrate(&layer, &layer.initial_state(), &IntegratorConfig::new(0.01, 50.0).record_every(100)).unwrap();
        let err = *traj.final_residual().unwrap();
        ok &= err <= 1e-6;
        parts.push(format!("{} boundary layer {err:.1e}", cfg.name));
    }
    let mut worst: f64 = 0.0;
    let mut closed = vec![scenario_formation()];
    closed.extend((0..10).map(random_cfg));
    for cfg in closed {
        assert_eq!(cfg.rule.epsilon, 0.1);
        let run = run_simulation(&cfg).unwrap();
        let t_cut = 0.2 * run.trajectory.final_time();
        for (t, r) in run.trajectory.times.iter().zip(&run.trajectory.residuals) {
            if *t >= t_cut {
                worst = worst.max(r.eta_tracking);
            }
        }
    }
    ok &= worst <= 1e-2;
    parts.push(format!("closed-loop post-transient eta_tracking {worst:.1e}"));
    check(ok, parts.join(", "))
}

fn conservation() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cfgs = builtin_scenarios();
    cfgs.extend((0..50).map(random_cfg));
    let n = cfgs.len();
    for cfg in cfgs {
        let run = run_simulation(&cfg).unwrap();
        worst = worst.max(z_sums(&run.built.closed_loop, &run.trajectory.states).into_iter().fold(0.0, f64::max));
    }
    check(worst <= 1e-8, format!("max |sum z| over {n} runs {worst:.1e}"))
}

fn condition_checkers() -> Outcome {
    let bound = damping_gain_bound(5.0);
    let mut ok = (bound - 6f64.sqrt()).abs() <= 1e-12;
    let mut detail = format!("a1 = 5 bound {bound:.15} (|diff| {:.1e})", (bound - 6f64.sqrt()).abs());

    let cfg = scenario_formation();
    let graph = cfg.build_graph().unwrap();
    let game = cfg.build_game(&graph).unwrap();
    let spectral = graph.spectral_summary();
    let mono = estimate_monotonicity(&game, 200, 0);
    // alpha threshold by hand: (k ||A_i||^2 + 2) / lambda2 with ||A_i|| the
    // largest column-block norm of L (x) I
    let l = graph.laplacian();
    let col_norm = (0..5).map(|i| l.column(i).norm()).fold(0.0, f64::max);
    let sym = (&l + l.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    let by_hand = (5.0 * col_norm * col_norm + 2.0) / ev[1];

    let grid: Vec<f64> = (0..20).map(|k| 10f64.powf(-1.0 + 3.0 * k as f64 / 19.0)).collect();
    let mut prev_slack = f64::NEG_INFINITY;
    let mut prev_sat = false;
    for &alpha in &grid {
        let rep = check_double_integrator_conditions(&spectral, &game, &[5.0; 5], &RuleParams::new(alpha, 0.1).unwrap(), &mono);
        let m = rep.margin("alpha_gt").unwrap();
        ok &= (m.rhs - by_hand).abs() <= 1e-12 * by_hand;
        ok &= m.slack > prev_slack && (!prev_sat || m.holds());
        prev_slack = m.slack;
        prev_sat = m.holds();
    }
    detail.push_str(&format!(", alpha threshold {by_hand:.6} matches, alpha margin monotone over 20 points"));
    check(ok, detail)
}

fn step_halving() -> Outcome {
    let cfg = scenario_formation();
    let mut half = cfg.clone();
    half.integrator.step /= 2.0;
    half.integrator.record_every *= 2;
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&half).unwrap();
    let (xa, xb) = (a.trajectory.final_state(), b.trajectory.final_state());
    let rel = dist(xa, xb) / xb.iter().map(|v| v * v).sum::<f64>().sqrt();
    check(
        (a.trajectory.final_time() - b.trajectory.final_time()).abs() < 1e-9 && rel < 1e-6,
        format!("relative change of the final state {rel:.2e}"),
    )
}

fn determinism() -> Outcome {
    let mut ok = true;
    for cfg in [scenario_der(), random_cfg(7)] {
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        ok &= trajectory_csv_string(&a.built.closed_loop, &a.trajectory) == trajectory_csv_string(&b.built.closed_loop, &b.trajectory);
    }
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("der.toml");
    std::fs::write(&config, scenario_der().to_toml_string()).unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_gne"))
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        ok &= status.success();
        files.push(std::fs::read(out.join("trajectory.csv")).unwrap_or_default());
    }
    ok &= !files[0].is_empty() && files[0] == files[1];
    check(ok, format!("in-process and CLI trajectories byte-identical ({} bytes)", files[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence on random games", oracle_equivalence),
        ("field vanishes at the equilibrium", equilibrium_field),
        ("formation", formation),
        ("demand response", demand_response),
        ("exponential convergence", exponential_rate),
        ("estimator tracking", estimator_tracking),
        ("multiplier auxiliaries conserved", conservation),
        ("condition checkers", condition_checkers),
        ("integrator order", step_halving),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1} s]", k + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1} s]", k + 1)
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
