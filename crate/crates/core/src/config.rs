//! TOML scenario files and their translation into a runnable closed loop.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentDynamics, ClosedLoop, GeneratorPlant, RuleParams, SimState};
use crate::error::{BuildError, ConfigError};
use crate::game::{quadratic_game, BoxSet, CouplingBlock, DerCost, FormationCost, GameSpec, Player};
use crate::graph::{Digraph, BALANCE_TOL};
use crate::sim::IntegratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub graph: GraphConfig,
    pub game: GameConfig,
    pub dynamics: DynamicsConfig,
    pub rule: RuleParams,
    pub integrator: IntegratorConfig,
    pub init: InitConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

/// `edges` holds `(from, to, weight)`; agent `to` receives from `from`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GameConfig {
    /// Formation around a landmark with Laplacian-coupled offsets and the
    /// constraint `(L (x) I)(y - h) = 0`.
    Formation {
        landmark: Vec<f64>,
        beta: f64,
        offsets: Vec<Vec<f64>>,
        lower: Vec<Vec<f64>>,
        upper: Vec<Vec<f64>>,
    },
    /// Generation cost under a linear price with the balance constraint
    /// `sum y = sum demand`.
    Der {
        base_price: f64,
        price_slope: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        xi: Vec<f64>,
        demand: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Affine pseudo-gradient `F(y) = M y + q`; `coupling[i]` is the
    /// `l x n` row-major block `A_i`.
    Quadratic {
        strategy_dim: usize,
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        #[serde(default)]
        coupling: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        demand: Vec<Vec<f64>>,
        lower: Vec<Vec<f64>>,
        upper: Vec<Vec<f64>>,
    },
}

/// Per-agent lists of length one are broadcast to every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsConfig {
    DoubleIntegrator { gains: Vec<f64> },
    Chain { feedback: Vec<Vec<f64>> },
    Generator { feedback: Vec<f64>, plants: Vec<GeneratorPlant> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Initial outputs, one row per agent.
    pub y0: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub trajectory: String,
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { trajectory: "trajectory.csv".into(), report: "report".into() }
    }
}

/// Everything needed to run a scenario.
#[derive(Debug)]
pub struct BuiltScenario {
    pub closed_loop: ClosedLoop,
    pub integrator: IntegratorConfig,
    pub initial: SimState,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

fn per_agent<T: Clone>(v: &[T], n: usize, section: &'static str, what: &str) -> Result<Vec<T>, BuildError> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); n]),
        k if k == n => Ok(v.to_vec()),
        k => Err(BuildError::Section { section, message: format!("{what} has {k} entries, expected 1 or {n}") }),
    }
}

fn exact_len<T>(v: &[T], n: usize, section: &'static str, what: &str) -> Result<(), BuildError> {
    if v.len() != n {
        return Err(BuildError::Section { section, message: format!("{what} has {} entries, expected {n}", v.len()) });
    }
    Ok(())
}

fn boxes(lower: &[Vec<f64>], upper: &[Vec<f64>], n_players: usize, dim: usize) -> Result<Vec<BoxSet>, BuildError> {
    let lower = per_agent(lower, n_players, "game", "lower")?;
    let upper = per_agent(upper, n_players, "game", "upper")?;
    lower
        .iter()
        .zip(&upper)
        .map(|(lo, hi)| {
            exact_len(lo, dim, "game", "lower bound row")?;
            exact_len(hi, dim, "game", "upper bound row")?;
            Ok(BoxSet::new(DVector::from_column_slice(lo), DVector::from_column_slice(hi))?)
        })
        .collect()
}

impl ScenarioConfig {
    /// Parses TOML; syntax and type errors carry the line and column.
    pub fn from_toml_str(src: &str) -> Result<Self, ConfigError> {
        toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
            ConfigError::Parse { line, column, message: e.message().trim().to_string() }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn n_agents(&self) -> usize {
        self.graph.nodes
    }

    pub fn build_graph(&self) -> Result<Digraph, BuildError> {
        let g = Digraph::from_edges(self.graph.nodes, &self.graph.edges)?;
        Ok(g)
    }

    pub fn build_game(&self, graph: &Digraph) -> Result<GameSpec, BuildError> {
        let big_n = self.graph.nodes;
        match &self.game {
            GameConfig::Formation { landmark, beta, offsets, lower, upper } => {
                let n = landmark.len();
                exact_len(offsets, big_n, "game", "offsets")?;
                let mut h = Vec::with_capacity(big_n * n);
                for row in offsets {
                    exact_len(row, n, "game", "offset row")?;
                    h.extend_from_slice(row);
                }
                let h = DVector::from_vec(h);
                let lap = graph.laplacian();
                let lifted = lap.kronecker(&DMatrix::<f64>::identity(n, n));
                let bounds = boxes(lower, upper, big_n, n)?;
                let players = bounds
                    .into_iter()
                    .enumerate()
                    .map(|(i, b)| {
                        let a_i = lifted.columns(i * n, n).into_owned();
                        let d_i = &a_i * h.rows(i * n, n);
                        let cost = FormationCost::new(i, &lap, DVector::from_column_slice(landmark), *beta, h.clone())?;
                        Ok(Player { cost: std::sync::Arc::new(cost), coupling: CouplingBlock::new(a_i, d_i)?, bounds: b })
                    })
                    .collect::<Result<Vec<_>, crate::error::GameError>>()?;
                Ok(GameSpec::new(players)?)
            }
            GameConfig::Der { base_price, price_slope, alpha, beta, xi, demand, lower, upper } => {
                for (v, what) in [(alpha, "alpha"), (beta, "beta"), (xi, "xi"), (demand, "demand"), (lower, "lower"), (upper, "upper")] {
                    exact_len(v, big_n, "game", what)?;
                }
                let players = (0..big_n)
                    .map(|i| {
                        Ok(Player {
                            cost: std::sync::Arc::new(DerCost {
                                alpha: alpha[i],
                                beta: beta[i],
                                xi: xi[i],
                                base_price: *base_price,
                                price_slope: *price_slope,
                            }),
                            coupling: CouplingBlock::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, demand[i]))?,
                            bounds: BoxSet::uniform(1, lower[i], upper[i])?,
                        })
                    })
                    .collect::<Result<Vec<_>, crate::error::GameError>>()?;
                Ok(GameSpec::new(players)?)
            }
            GameConfig::Quadratic { strategy_dim, matrix, offset, coupling, demand, lower, upper } => {
                let n = *strategy_dim;
                let dim = big_n * n;
                exact_len(matrix, dim, "game", "matrix")?;
                exact_len(offset, dim, "game", "offset")?;
                let mut m = DMatrix::zeros(dim, dim);
                for (r, row) in matrix.iter().enumerate() {
                    exact_len(row, dim, "game", "matrix row")?;
                    for (c, v) in row.iter().enumerate() {
                        m[(r, c)] = *v;
                    }
                }
                let couplings = if coupling.is_empty() {
                    vec![CouplingBlock::none(n); big_n]
                } else {
                    exact_len(coupling, big_n, "game", "coupling")?;
                    exact_len(demand, big_n, "game", "demand")?;
                    coupling
                        .iter()
                        .zip(demand)
                        .map(|(rows, d)| {
                            let l = rows.len();
                            exact_len(d, l, "game", "demand row")?;
                            let mut a = DMatrix::zeros(l, n);
                            for (r, row) in rows.iter().enumerate() {
                                exact_len(row, n, "game", "coupling row")?;
                                for (c, v) in row.iter().enumerate() {
                                    a[(r, c)] = *v;
                                }
                            }
                            Ok(CouplingBlock::new(a, DVector::from_column_slice(d))?)
                        })
                        .collect::<Result<Vec<_>, BuildError>>()?
                };
                let bounds = boxes(lower, upper, big_n, n)?;
                Ok(quadratic_game(&m, &DVector::from_column_slice(offset), n, couplings, bounds)?)
            }
        }
    }

    pub fn build_agents(&self) -> Result<Vec<AgentDynamics>, BuildError> {
        let big_n = self.graph.nodes;
        let agents = match &self.dynamics {
            DynamicsConfig::DoubleIntegrator { gains } => per_agent(gains, big_n, "dynamics", "gains")?
                .into_iter()
                .map(AgentDynamics::double_integrator)
                .collect::<Result<Vec<_>, _>>()?,
            DynamicsConfig::Chain { feedback } => per_agent(feedback, big_n, "dynamics", "feedback")?
                .into_iter()
                .map(AgentDynamics::chain)
                .collect::<Result<Vec<_>, _>>()?,
            DynamicsConfig::Generator { feedback, plants } => {
                exact_len(plants, big_n, "dynamics", "plants")?;
                plants
                    .iter()
                    .map(|p| AgentDynamics::generator(*p, feedback.clone()))
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        Ok(agents)
    }

    pub fn initial_outputs(&self) -> Result<Vec<f64>, BuildError> {
        exact_len(&self.init.y0, self.graph.nodes, "init", "y0")?;
        Ok(self.init.y0.iter().flatten().copied().collect())
    }

    /// Builds the closed loop and the validated initial state.
    pub fn build(&self) -> Result<BuiltScenario, BuildError> {
        let graph = self.build_graph()?;
        if !graph.is_weight_balanced(BALANCE_TOL) {
            return Err(BuildError::Section { section: "graph", message: "graph is not weight-balanced".into() });
        }
        if !graph.is_strongly_connected() {
            return Err(BuildError::Section { section: "graph", message: "graph is not strongly connected".into() });
        }
        let game = self.build_game(&graph)?;
        let agents = self.build_agents()?;
        let closed_loop = ClosedLoop::new(graph, game, agents, self.rule)?;
        let y0 = self.initial_outputs()?;
        let initial = closed_loop.initial_state(&y0)?;
        let violations = closed_loop.validate_initial_state(&initial);
        if !violations.is_empty() {
            let msg = violations.iter().map(|v| format!("{}: {}", v.code, v.detail)).collect::<Vec<_>>().join("; ");
            return Err(BuildError::InitialState(msg));
        }
        Ok(BuiltScenario { closed_loop, integrator: self.integrator, initial })
    }

    /// Overrides one numeric field addressed by a dotted path such as
    /// `rule.alpha` or `game.price_slope`.
    pub fn with_override(&self, path: &str, value: f64) -> Result<Self, ConfigError> {
        let mut root = toml::Value::try_from(self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut cur = &mut root;
        let keys: Vec<&str> = path.split('.').collect();
        for (k, key) in keys.iter().enumerate() {
            let table = cur
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(format!("`{}` is not a table", keys[..k].join("."))))?;
            cur = table.get_mut(*key).ok_or_else(|| ConfigError::Invalid(format!("unknown parameter `{path}`")))?;
        }
        *cur = match cur {
            toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
            toml::Value::Float(_) | toml::Value::Integer(_) => toml::Value::Float(value),
            _ => return Err(ConfigError::Invalid(format!("`{path}` is not a scalar number"))),
        };
        root.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))
    }
}
