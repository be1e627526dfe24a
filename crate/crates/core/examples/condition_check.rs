//! Evaluates the sufficient gain conditions for the built-in scenarios and
//! shows how the damping bound depends on the Lyapunov weight `a1`.

use gne_seek::analysis::damping_gain_bound;
use gne_seek::cli::check_summary;
use gne_seek::scenarios::builtin_scenarios;

fn main() {
    for a1 in [0.5, 1.0, 2.0, 5.0] {
        println!("a1 = {a1:<4} requires k_min > {:.6}", damping_gain_bound(a1));
    }
    println!();
    for cfg in builtin_scenarios() {
        let summary = check_summary(&cfg, 0).unwrap();
        println!("{summary}");
    }
}
