//! Built-in scenarios: a five-agent planar formation and demand response
//! among six turbine generators.

use std::f64::consts::PI;

use crate::config::{DynamicsConfig, GameConfig, GraphConfig, InitConfig, OutputConfig, ScenarioConfig};
use crate::dynamics::{GeneratorPlant, RuleParams};
use crate::analysis::estimator_abscissa;
use crate::graph::{spectral_norm, Digraph};
use crate::sim::IntegratorConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Directed 5-cycle `0 -> 1 -> 2 -> 3 -> 4 -> 0` (weight 1.5) with the
/// chord `3 -> 1` (weight 5). The cycle edges `1 -> 2` and `2 -> 3` carry the
/// chord's return weight so every node is balanced.
pub fn formation_graph() -> GraphConfig {
    GraphConfig {
        nodes: 5,
        edges: vec![(0, 1, 1.5), (1, 2, 6.5), (2, 3, 6.5), (3, 4, 1.5), (4, 0, 1.5), (3, 1, 5.0)],
    }
}

/// Directed 6-cycle (weight 3) with the chords `0 -> 4` and `3 -> 1`
/// (weight 3), balanced along the cycle.
pub fn der_graph() -> GraphConfig {
    GraphConfig {
        nodes: 6,
        edges: vec![(0, 1, 3.0), (1, 2, 6.0), (2, 3, 6.0), (3, 4, 3.0), (4, 5, 6.0), (5, 0, 6.0), (0, 4, 3.0), (3, 1, 3.0)],
    }
}

/// Offset of agent `i` on the pentagon of radius 5.
pub fn formation_offset(i: usize) -> [f64; 2] {
    let t = 2.0 * PI * i as f64 / 5.0;
    [5.0 * t.cos(), 5.0 * t.sin()]
}

pub fn scenario_formation() -> ScenarioConfig {
    ScenarioConfig {
        name: "formation".into(),
        description: "five double-integrator agents forming a pentagon around Q = (1, 2)".into(),
        graph: formation_graph(),
        game: GameConfig::Formation {
            landmark: vec![1.0, 2.0],
            beta: 5.0,
            offsets: (0..5).map(|i| formation_offset(i).to_vec()).collect(),
            lower: vec![vec![-10.0, -10.0]],
            upper: vec![vec![10.0, 10.0]],
        },
        dynamics: DynamicsConfig::DoubleIntegrator { gains: vec![5.0] },
        rule: RuleParams { alpha: 1.0, epsilon: 0.1 },
        integrator: IntegratorConfig { step: 0.01, t_end: 400.0, record_every: 50, stop_tol: 0.0 },
        init: InitConfig {
            y0: vec![vec![0.0, 0.0], vec![-0.5, 0.0], vec![0.0, -0.5], vec![0.2, 0.0], vec![0.0, 0.2]],
        },
        outputs: OutputConfig::default(),
    }
}

/// Generator data: `(Tm, Te, Km = Ke, D, H, R)`.
pub const GENERATOR_DATA: [(f64, f64, f64, f64, f64, f64); 6] = [
    (0.35, 0.10, 1.0, 5.0, 4.0, 0.05),
    (0.30, 0.12, 1.1, 4.0, 3.5, 0.04),
    (0.28, 0.08, 0.9, 3.0, 2.8, 0.03),
    (0.40, 0.11, 1.2, 4.5, 4.2, 0.06),
    (0.43, 0.90, 0.8, 3.5, 3.0, 0.04),
    (0.35, 0.10, 1.0, 5.0, 4.0, 0.05),
];

pub const DER_ALPHA: [f64; 6] = [5.0, 8.0, 6.0, 9.0, 7.0, 8.0];
pub const DER_BETA: [f64; 6] = [12.0, 10.0, 11.0, 11.0, 13.0, 14.0];
pub const DER_XI: [f64; 6] = [1.0, 0.5, 0.8, 0.7, 1.1, 0.6];
pub const DER_DEMAND: [f64; 6] = [30.0, 45.0, 28.0, 40.0, 23.0, 25.0];
pub const DER_LOWER: [f64; 6] = [20.0, 45.0, 25.0, 30.0, 20.0, 20.0];
pub const DER_UPPER: [f64; 6] = [30.0, 50.0, 35.0, 40.0, 30.0, 37.0];
/// Nominal initial powers; 35 and 20 for generators 1 and 2 lie outside
/// their boxes.
pub const DER_P0: [f64; 6] = [30.0, 35.0, 20.0, 35.0, 22.0, 28.0];
pub const DER_BASE_PRICE: f64 = 50.0;
pub const DER_PRICE_SLOPE: f64 = 0.1;
pub const SYNC_SPEED: f64 = 2.0 * PI * 50.0;

pub fn der_plants() -> Vec<GeneratorPlant> {
    GENERATOR_DATA
        .iter()
        .zip(DER_DEMAND)
        .map(|(&(tm, te, k, d, h, r), load)| GeneratorPlant {
            turbine_time: tm,
            governor_time: te,
            turbine_gain: k,
            governor_gain: k,
            damping: d,
            inertia: h,
            droop: r,
            sync_speed: SYNC_SPEED,
            load,
        })
        .collect()
}

fn der_game() -> GameConfig {
    GameConfig::Der {
        base_price: DER_BASE_PRICE,
        price_slope: DER_PRICE_SLOPE,
        alpha: DER_ALPHA.to_vec(),
        beta: DER_BETA.to_vec(),
        xi: DER_XI.to_vec(),
        demand: DER_DEMAND.to_vec(),
        lower: DER_LOWER.to_vec(),
        upper: DER_UPPER.to_vec(),
    }
}

/// Nominal initial powers clamped into the boxes.
pub fn der_initial_powers() -> Vec<f64> {
    DER_P0.iter().zip(DER_LOWER.iter().zip(DER_UPPER)).map(|(p, (lo, hi))| p.clamp(*lo, hi)).collect()
}

/// Generators driven through their power output as a triple integrator
/// with poles at `-1`.
pub fn scenario_der() -> ScenarioConfig {
    ScenarioConfig {
        name: "der".into(),
        description: "six turbine generators meeting a total demand of 191".into(),
        graph: der_graph(),
        game: der_game(),
        dynamics: DynamicsConfig::Generator { feedback: vec![1.0, 3.0, 3.0], plants: der_plants() },
        rule: RuleParams { alpha: 2.0, epsilon: 0.05 },
        integrator: IntegratorConfig { step: 0.005, t_end: 80.0, record_every: 20, stop_tol: 0.0 },
        init: InitConfig { y0: der_initial_powers().into_iter().map(|p| vec![p]).collect() },
        outputs: OutputConfig::default(),
    }
}

/// Same game with literal triple-integrator agents.
pub fn scenario_der_triple() -> ScenarioConfig {
    ScenarioConfig {
        name: "der_triple".into(),
        description: "demand response with triple-integrator agents".into(),
        dynamics: DynamicsConfig::Chain { feedback: vec![vec![1.0, 3.0, 3.0]] },
        ..scenario_der()
    }
}

/// Size limits of [`random_quadratic_scenario`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomGameOptions {
    pub max_players: usize,
    pub max_strategy_dim: usize,
    pub max_constraints: usize,
    pub box_half_width: f64,
}

impl Default for RandomGameOptions {
    fn default() -> Self {
        Self { max_players: 5, max_strategy_dim: 2, max_constraints: 2, box_half_width: 50.0 }
    }
}

/// Seeded random affine game with `F = 1.5 I + 0.5 B / ||B||` (so
/// `omega >= 1`, `theta <= 2`), random shared constraints, a random
/// balanced digraph on which the estimator is stable, a stacked coupling
/// matrix with smallest singular value at least 0.5, double-integrator
/// agents with gains in `[3, 6]` and `alpha` 10% above the multiplier gain
/// bound `(k_min ||A||^2 + 2) / lambda2`.
pub fn random_quadratic_scenario(seed: u64, opts: &RandomGameOptions) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let big_n = rng.random_range(2..=opts.max_players.max(2));
    let n = rng.random_range(1..=opts.max_strategy_dim.max(1));
    let l = rng.random_range(0..=opts.max_constraints);
    let dim = big_n * n;

    let mut b = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    for i in 0..big_n {
        let blk = b.view((i * n, i * n), (n, n)).into_owned();
        b.view_mut((i * n, i * n), (n, n)).copy_from(&((&blk + blk.transpose()) * 0.5));
    }
    let b_norm = spectral_norm(&b).max(1e-12);
    let m = DMatrix::<f64>::identity(dim, dim) * 1.5 + b * (0.5 / b_norm);
    let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();

    // redraw until the stacked coupling [A_1 .. A_N] is well conditioned
    let mut coupling: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut demand: Vec<Vec<f64>> = Vec::new();
    let mut a_norm: f64 = 0.0;
    if l > 0 {
        for _ in 0..100 {
            coupling = (0..big_n)
                .map(|_| (0..l).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
                .collect();
            let stacked = DMatrix::from_fn(l, dim, |r, c| coupling[c / n][r][c % n]);
            let smin = stacked.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
            if smin >= 0.5 {
                break;
            }
        }
        a_norm = coupling
            .iter()
            .map(|rows| spectral_norm(&DMatrix::from_fn(l, n, |r, c| rows[r][c])))
            .fold(0.0, f64::max);
        demand = (0..big_n).map(|_| (0..l).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    }

    let mut graph = Digraph::complete(big_n).expect("valid size");
    for _ in 0..100 {
        let cycles = rng.random_range(1..=3);
        let g = Digraph::random_balanced(big_n, cycles, 0.5, 1.5, &mut rng).expect("valid weights");
        if estimator_abscissa(&g) < -0.05 {
            graph = g;
            break;
        }
    }
    let spectral = graph.spectral_summary();

    let gains: Vec<f64> = (0..big_n).map(|_| rng.random_range(3.0..6.0)).collect();
    let k_min = gains.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha = (1.1 * (k_min * a_norm * a_norm + 2.0) / spectral.lambda2).max(1.0);
    let epsilon: f64 = 0.1;
    let step = (epsilon / 5.0).min(1.0 / (alpha * spectral.laplacian_norm));
    let w = opts.box_half_width;

    ScenarioConfig {
        name: format!("random_{seed}"),
        description: String::new(),
        graph: GraphConfig { nodes: big_n, edges: graph.edges() },
        game: GameConfig::Quadratic {
            strategy_dim: n,
            matrix: (0..dim).map(|r| m.row(r).iter().copied().collect()).collect(),
            offset,
            coupling,
            demand,
            lower: vec![vec![-w; n]],
            upper: vec![vec![w; n]],
        },
        dynamics: DynamicsConfig::DoubleIntegrator { gains },
        rule: RuleParams { alpha, epsilon },
        integrator: IntegratorConfig { step, t_end: 600.0, record_every: 10, stop_tol: 1e-8 },
        init: InitConfig { y0: (0..big_n).map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()).collect() },
        outputs: OutputConfig::default(),
    }
}

pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    vec![scenario_formation(), scenario_der(), scenario_der_triple()]
}
