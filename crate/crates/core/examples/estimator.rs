//! The aggregate estimator with frozen strategies. On the scenario graphs
//! every estimate reaches the true aggregate; on a plain directed 5-cycle
//! the estimator is unstable.

use gne_seek::analysis::estimator_abscissa;
use gne_seek::dynamics::BoundaryLayer;
use gne_seek::scenarios::{scenario_der, scenario_formation};
use gne_seek::sim::{integrate, IntegratorConfig};
use gne_seek::Digraph;

fn main() {
    for cfg in [scenario_formation(), scenario_der()] {
        let graph = cfg.build_graph().unwrap();
        let game = cfg.build_game(&graph).unwrap();
        let y = cfg.initial_outputs().unwrap();
        let layer = BoundaryLayer::new(&graph, &game, &y);
        let traj = integrate(&layer, &layer.initial_state(), &IntegratorConfig::new(0.01, 50.0).record_every(500)).unwrap();
        println!("{} (abscissa {:.4})", cfg.name, estimator_abscissa(&graph));
        for (t, e) in traj.times.iter().zip(&traj.residuals) {
            println!("  tau = {t:>5.1}  max_i |eta_i - sigma| = {e:.3e}");
        }
    }
    let cycle = Digraph::directed_cycle(5).unwrap();
    println!("directed 5-cycle abscissa {:.4}", estimator_abscissa(&cycle));
}
