//! Writes a scenario as TOML, parses it back and runs it.

use gne_seek::cli::run_simulation;
use gne_seek::report::trajectory_csv_string;
use gne_seek::ScenarioConfig;

const SCENARIO: &str = r#"
name = "three_firms"

[graph]
nodes = 3
edges = [[0, 1, 1.0], [1, 2, 1.0], [2, 0, 1.0], [1, 0, 1.0], [2, 1, 1.0], [0, 2, 1.0]]

[game]
kind = "der"
base_price = 20.0
price_slope = 0.5
alpha = [0.0, 0.0, 0.0]
beta = [2.0, 3.0, 4.0]
xi = [0.5, 0.5, 0.5]
demand = [5.0, 5.0, 5.0]
lower = [0.0, 0.0, 0.0]
upper = [10.0, 10.0, 10.0]

[dynamics]
kind = "chain"
feedback = [[1.0, 3.0, 3.0]]

[rule]
alpha = 2.0
epsilon = 0.05

[integrator]
step = 0.005
t_end = 60.0
record_every = 400
stop_tol = 0.0

[init]
y0 = [[5.0], [5.0], [5.0]]
"#;

fn main() {
    let cfg = ScenarioConfig::from_toml_str(SCENARIO).unwrap();
    let run = run_simulation(&cfg).unwrap();
    let csv = trajectory_csv_string(&run.built.closed_loop, &run.trajectory);
    let lines: Vec<&str> = csv.lines().collect();
    println!("{}\n{}\n...\n{}", lines[0], lines[1], lines[lines.len() - 1]);

    let broken = SCENARIO.replace("nodes = 3", "nodes = 3.5");
    println!("\nparse error: {}", ScenarioConfig::from_toml_str(&broken).unwrap_err());
}
