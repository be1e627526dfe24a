//! Fits an exponential rate to the distance from equilibrium on a few
//! random games.

use gne_seek::analysis::oracle_gne;
use gne_seek::cli::run_simulation;
use gne_seek::scenarios::{random_quadratic_scenario, RandomGameOptions};
use gne_seek::sim::fit_exponential_rate;

fn main() {
    for seed in 0..5 {
        let cfg = random_quadratic_scenario(seed, &RandomGameOptions::default());
        let run = run_simulation(&cfg).unwrap();
        let cl = &run.built.closed_loop;
        let star = oracle_gne(cl.game()).unwrap();
        let dist: Vec<f64> = run
            .trajectory
            .states
            .iter()
            .map(|s| cl.outputs(s).iter().zip(&star.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        let fit = fit_exponential_rate(&run.trajectory.times, &dist).unwrap();
        println!(
            "seed {seed}: N = {}, n = {}, l = {}, rate {:.4}, r^2 {:.4}, stopped at t = {:.1}",
            cl.game().n_players(),
            cl.game().strategy_dim(),
            cl.game().constraint_dim(),
            fit.rate,
            fit.r_squared,
            run.trajectory.final_time()
        );
    }
}
