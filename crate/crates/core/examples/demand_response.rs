//! Six turbine generators settle on the price-anticipating equilibrium
//! while meeting the total demand. The generators are driven through their
//! power output; the literal triple-integrator variant reaches the same
//! point.

use gne_seek::analysis::oracle_gne;
use gne_seek::cli::run_simulation;
use gne_seek::scenarios::{scenario_der, scenario_der_triple, DER_DEMAND};

fn main() {
    for cfg in [scenario_der(), scenario_der_triple()] {
        let run = run_simulation(&cfg).unwrap();
        let cl = &run.built.closed_loop;
        let star = oracle_gne(cl.game()).unwrap();
        let y = cl.outputs(run.trajectory.final_state());
        let mu = &run.trajectory.final_state()[cl.layout().mu_all()];

        println!("== {} ==", cfg.name);
        println!("gen   P_final    P*        mu_i");
        for i in 0..6 {
            println!("{i}  {:>9.4} {:>9.4} {:>9.4}", y[i], star.y[i], mu[i]);
        }
        let total: f64 = y.iter().sum();
        let err = y.iter().zip(&star.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!("sum P = {total:.5} (demand {})", DER_DEMAND.iter().sum::<f64>());
        println!("||P - P*|| = {err:.3e}, clearing price multiplier = {:.4}\n", star.mu[0]);
    }
}
