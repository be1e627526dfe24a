use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("weight matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("node {node} out of range for {n_nodes} nodes")]
    NodeOutOfRange { node: usize, n_nodes: usize },
    #[error("invalid weight {weight} on edge {from} -> {to}")]
    BadWeight { from: usize, to: usize, weight: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("game has no players")]
    NoPlayers,
    #[error("box bounds have lengths {lower} and {upper}")]
    BoxLength { lower: usize, upper: usize },
    #[error("empty box: lower bound {lower} exceeds upper bound {upper} in component {index}")]
    EmptyBox { index: usize, lower: f64, upper: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}

impl GameError {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        GameError::Dimension { what: what.into(), expected, got }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("gain k = {0} must be positive")]
    NonPositiveGain(f64),
    #[error("feedback row must start with 1, got {0}")]
    LeadingGain(f64),
    #[error("feedback gain k_{index} = {value} must exceed 1")]
    ChainGain { index: usize, value: f64 },
    #[error("integrator order {0} not supported here")]
    Order(usize),
    #[error("closed-loop matrix H = A - BK is not Hurwitz (max real eigenvalue {0})")]
    NotHurwitz(f64),
    #[error("rule parameters must be positive (alpha = {alpha}, epsilon = {epsilon})")]
    RuleParams { alpha: f64, epsilon: f64 },
    #[error("invalid generator parameter: {0}")]
    Generator(String),
    #[error("graph has {graph} nodes but game has {game} players")]
    PlayerCount { graph: usize, game: usize },
    #[error("{0} agent models given for {1} players")]
    AgentCount(usize, usize),
    #[error("generator agents require scalar strategies, got n = {0}")]
    GeneratorDim(usize),
    #[error("state has length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("all agents must have order {expected}")]
    MixedOrder { expected: &'static str },
    #[error(transparent)]
    Game(#[from] GameError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("direct KKT solve disagrees with fixed-point solution by {0:e}")]
    CrossCheck(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// A config parsed but describes an invalid system.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("game: {0}")]
    Game(#[from] GameError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("{section}: {message}")]
    Section { section: &'static str, message: String },
    #[error("initial state rejected: {0}")]
    InitialState(String),
}
