//! Five double-integrator agents form a pentagon around Q = (1, 2).
//!
//! Run with `cargo run --release --example formation [out.csv]`.

use gne_seek::cli::run_simulation;
use gne_seek::report::write_trajectory_csv;
use gne_seek::scenarios::{formation_offset, scenario_formation};

fn main() {
    let cfg = scenario_formation();
    let run = run_simulation(&cfg).expect("built-in scenario");
    let cl = &run.built.closed_loop;
    let y = cl.outputs(run.trajectory.final_state());

    println!("agent        y_final              target h_i + Q");
    for i in 0..5 {
        let h = formation_offset(i);
        println!("{i}  ({:>8.5}, {:>8.5})   ({:>8.5}, {:>8.5})", y[2 * i], y[2 * i + 1], h[0] + 1.0, h[1] + 2.0);
    }
    let rep = run.trajectory.final_residual().unwrap();
    println!("\nformation error ||(L x I)(y - h)|| = {:.3e}", rep.feasibility);
    println!("multiplier disagreement          = {:.3e}", rep.mu_consensus);

    if let Some(path) = std::env::args().nth(1) {
        let f = std::fs::File::create(&path).unwrap();
        write_trajectory_csv(cl, &run.trajectory, f).unwrap();
        println!("trajectory written to {path}");
    }
}
