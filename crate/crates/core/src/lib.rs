//! Distributed equilibrium seeking for aggregative games played by
//! integrator-chain agents over directed communication graphs.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod game;
pub mod graph;
pub mod report;
pub mod scenarios;
pub mod sim;

pub use analysis::{kkt_report, oracle_gne, KktReport};
pub use dynamics::{AgentDynamics, ClosedLoop, RuleParams, SimState};
pub use config::ScenarioConfig;
pub use error::{BuildError, ConfigError, DynamicsError, GameError, GraphError, OracleError};
pub use game::{BoxSet, CouplingBlock, GameSpec, Player};
pub use graph::Digraph;
pub use sim::{integrate, IntegratorConfig, Trajectory, VectorField};
