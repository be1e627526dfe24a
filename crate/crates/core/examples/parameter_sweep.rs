//! Runs the demand-response scenario for several multiplier gains in
//! parallel and tabulates the final residuals.

use gne_seek::cli::run_simulation;
use gne_seek::scenarios::scenario_der;
use rayon::prelude::*;

fn main() {
    let base = scenario_der();
    let alphas = [0.5, 1.0, 2.0, 4.0, 8.0];
    let rows: Vec<_> = alphas
        .par_iter()
        .map(|&a| {
            let cfg = base.with_override("rule.alpha", a).unwrap();
            let run = run_simulation(&cfg).unwrap();
            (a, *run.trajectory.final_residual().unwrap())
        })
        .collect();
    println!("alpha   stationarity  feasibility   mu_consensus");
    for (a, r) in rows {
        println!("{a:<6}  {:.3e}     {:.3e}     {:.3e}", r.stationarity, r.feasibility, r.mu_consensus);
    }
}
