//! Closed-loop strategy-updating dynamics.
//!
//! Every agent runs three coupled blocks:
//!
//! * the strategy update: a double integrator
//!   `x' = v, v' = -k v - x + y - grad J_i(y_i, eta_i) - A_i^T mu_i`, or an
//!   integrator chain `x' = H x + B (y - grad J_i(y_i, eta_i) - A_i^T mu_i)`
//!   with `H = A_chain - B K`, and projected output `y_i = P(C x_i)`;
//! * multiplier coordination
//!   `mu' = -alpha L mu - z + A_i y_i - d_i`, `z' = alpha L mu`;
//! * the fast aggregate estimator
//!   `eps eta' = -eta - L eta - L w + N phi_i(y_i)`, `eps w' = L eta`.
//!
//! Agent `i` evaluates its gradient at its own estimate `eta_i`, never at
//! the true aggregate.

use nalgebra::{DMatrix, DVector};

use crate::analysis::{kkt_report, KktReport};
use crate::error::DynamicsError;
use crate::game::GameSpec;
use crate::graph::Digraph;
use crate::sim::VectorField;

/// Multiplier coupling gain `alpha` and time-scale separation `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RuleParams {
    pub alpha: f64,
    pub epsilon: f64,
}

impl RuleParams {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self, DynamicsError> {
        if !(alpha > 0.0 && epsilon > 0.0 && alpha.is_finite() && epsilon.is_finite()) {
            return Err(DynamicsError::RuleParams { alpha, epsilon });
        }
        Ok(Self { alpha, epsilon })
    }
}

/// Turbine-generator with governor:
///
/// ```text
/// P'  = -P / Tm + Km / Tm * Xe
/// Xe' = -Ke / (Te R w0) * w - Xe / Te + u / Te
/// w'  = -D / (2H) * w + w0 / (2H) * (P - load)
/// ```
///
/// `P` has relative degree two from `u`. The plant is driven through an
/// input integrator `u' = v` and `v` is chosen so that
/// `(P, P', P'')` obeys a triple integrator exactly.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorPlant {
    pub turbine_time: f64,
    pub governor_time: f64,
    pub turbine_gain: f64,
    pub governor_gain: f64,
    pub damping: f64,
    pub inertia: f64,
    pub droop: f64,
    pub sync_speed: f64,
    pub load: f64,
}

impl GeneratorPlant {
    fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("turbine_time", self.turbine_time),
            ("governor_time", self.governor_time),
            ("turbine_gain", self.turbine_gain),
            ("governor_gain", self.governor_gain),
            ("damping", self.damping),
            ("inertia", self.inertia),
            ("droop", self.droop),
            ("sync_speed", self.sync_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DynamicsError::Generator(format!("{name} = {v} must be positive")));
            }
        }
        if !self.load.is_finite() {
            return Err(DynamicsError::Generator("load must be finite".into()));
        }
        Ok(())
    }

    /// State matrix over `(P, Xe, w)`.
    pub fn state_matrix(&self) -> DMatrix<f64> {
        let (tm, te, km, ke) = (self.turbine_time, self.governor_time, self.turbine_gain, self.governor_gain);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -1.0 / tm,
                km / tm,
                0.0,
                0.0,
                -1.0 / te,
                -ke / (te * self.droop * self.sync_speed),
                self.sync_speed / (2.0 * self.inertia),
                0.0,
                -self.damping / (2.0 * self.inertia),
            ],
        )
    }

    pub fn input_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&[0.0, 1.0 / self.governor_time, 0.0])
    }

    /// Constant load disturbance.
    pub fn disturbance(&self) -> DVector<f64> {
        DVector::from_column_slice(&[0.0, 0.0, -self.sync_speed * self.load / (2.0 * self.inertia)])
    }

    /// Plant state `(P, Xe, w)` and input `u` at rest with power `p`.
    pub fn steady_state(&self, p: f64) -> ([f64; 3], f64) {
        let speed = self.sync_speed * (p - self.load) / self.damping;
        let valve = p / self.turbine_gain;
        let u = valve + self.governor_gain / (self.droop * self.sync_speed) * speed;
        ([p, valve, speed], u)
    }

    /// Rest point used for initialization: `P' = P'' = 0` at power `p`
    /// with zero relative speed.
    pub fn initial_state(&self, p: f64) -> ([f64; 3], f64) {
        let valve = p / self.turbine_gain;
        ([p, valve, 0.0], valve)
    }
}

/// Precomputed output-derivative coefficients of a generator.
#[derive(Debug, Clone)]
struct GeneratorLinearization {
    a: DMatrix<f64>,
    b: DVector<f64>,
    dist: DVector<f64>,
    // e1^T A^k for k = 1, 2, 3
    row1: DVector<f64>,
    row2: DVector<f64>,
    row3: DVector<f64>,
    // e1^T A B, e1^T A^2 B
    gain1: f64,
    gain2: f64,
    // e1^T A c, e1^T A^2 c
    dist1: f64,
    dist2: f64,
}

impl GeneratorLinearization {
    fn new(plant: GeneratorPlant) -> Self {
        let a = plant.state_matrix();
        let b = plant.input_vector();
        let dist = plant.disturbance();
        let at = a.transpose();
        let e1 = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let row1 = &at * &e1;
        let row2 = &at * &row1;
        let row3 = &at * &row2;
        Self {
            gain1: row1.dot(&b),
            gain2: row2.dot(&b),
            dist1: row1.dot(&dist),
            dist2: row2.dot(&dist),
            a,
            b,
            dist,
            row1,
            row2,
            row3,
        }
    }

    /// `(P, P', P'')` from plant state and input.
    fn chain_coordinates(&self, s: &[f64], u: f64) -> [f64; 3] {
        let sv = DVector::from_column_slice(s);
        [s[0], self.row1.dot(&sv), self.row2.dot(&sv) + self.gain1 * u + self.dist1]
    }
}

/// Per-agent plant and local feedback.
#[derive(Debug, Clone)]
pub enum AgentDynamics {
    /// `r = 2` with damping gain `k_i > 0`.
    DoubleIntegrator { gain: f64 },
    /// `r > 2` integrator chain with feedback row `K_i = [1, k_1, ..., k_{r-1}]`.
    Chain { feedback: Vec<f64> },
    /// Turbine-generator whose power output is linearized to a third-order
    /// chain driven by the chain feedback `K_i`.
    Generator { plant: GeneratorPlant, feedback: Vec<f64> },
}

impl AgentDynamics {
    pub fn double_integrator(gain: f64) -> Result<Self, DynamicsError> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(DynamicsError::NonPositiveGain(gain));
        }
        Ok(Self::DoubleIntegrator { gain })
    }

    pub fn chain(feedback: Vec<f64>) -> Result<Self, DynamicsError> {
        validate_feedback(&feedback)?;
        Ok(Self::Chain { feedback })
    }

    pub fn generator(plant: GeneratorPlant, feedback: Vec<f64>) -> Result<Self, DynamicsError> {
        validate_feedback(&feedback)?;
        if feedback.len() != 3 {
            return Err(DynamicsError::Order(feedback.len()));
        }
        plant.validate()?;
        Ok(Self::Generator { plant, feedback })
    }

    /// Integrator order `r` seen by the strategy update.
    pub fn order(&self) -> usize {
        match self {
            Self::DoubleIntegrator { .. } => 2,
            Self::Chain { feedback } | Self::Generator { feedback, .. } => feedback.len(),
        }
    }

    /// Length of this agent's state block for strategy dimension `n`.
    pub fn state_len(&self, n: usize) -> usize {
        match self {
            Self::DoubleIntegrator { .. } => 2 * n,
            Self::Chain { feedback } => feedback.len() * n,
            Self::Generator { .. } => 4,
        }
    }

    /// `H = A_chain - B K` for chain-type agents.
    pub fn closed_loop_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::DoubleIntegrator { .. } => None,
            Self::Chain { feedback } | Self::Generator { feedback, .. } => Some(companion(feedback)),
        }
    }

    pub fn feedback(&self) -> Option<&[f64]> {
        match self {
            Self::DoubleIntegrator { .. } => None,
            Self::Chain { feedback } | Self::Generator { feedback, .. } => Some(feedback),
        }
    }
}

/// `A_chain - B K` for the chain `x_1' = x_2, ..., x_r' = u`.
pub fn companion(feedback: &[f64]) -> DMatrix<f64> {
    let r = feedback.len();
    let mut h = DMatrix::zeros(r, r);
    for j in 0..r.saturating_sub(1) {
        h[(j, j + 1)] = 1.0;
    }
    for (j, &k) in feedback.iter().enumerate() {
        h[(r - 1, j)] = -k;
    }
    h
}

/// Largest real part among the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

fn validate_feedback(feedback: &[f64]) -> Result<(), DynamicsError> {
    if feedback.len() < 3 {
        return Err(DynamicsError::Order(feedback.len()));
    }
    if feedback[0] != 1.0 {
        return Err(DynamicsError::LeadingGain(feedback[0]));
    }
    for (j, &k) in feedback.iter().enumerate().skip(1) {
        if !(k > 1.0 && k.is_finite()) {
            return Err(DynamicsError::ChainGain { index: j, value: k });
        }
    }
    let abscissa = spectral_abscissa(&companion(feedback));
    if abscissa >= 0.0 {
        return Err(DynamicsError::NotHurwitz(abscissa));
    }
    Ok(())
}

/// Offsets of the blocks inside the flat state vector
/// `[agent states | mu | z | eta | w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub n_players: usize,
    pub strategy_dim: usize,
    pub constraint_dim: usize,
    pub aggregate_dim: usize,
    agent_offsets: Vec<usize>,
    agent_lens: Vec<usize>,
    mu_offset: usize,
    z_offset: usize,
    eta_offset: usize,
    w_offset: usize,
    total: usize,
}

/// Named block of the flat state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Agent(usize),
    Mu(usize),
    Z(usize),
    Eta(usize),
    W(usize),
}

impl StateLayout {
    pub fn new(game: &GameSpec, agents: &[AgentDynamics]) -> Self {
        let n = game.strategy_dim();
        let mut agent_offsets = Vec::with_capacity(agents.len());
        let mut agent_lens = Vec::with_capacity(agents.len());
        let mut off = 0;
        for a in agents {
            agent_offsets.push(off);
            agent_lens.push(a.state_len(n));
            off += a.state_len(n);
        }
        let big_n = game.n_players();
        let l = game.constraint_dim();
        let m = game.aggregate_dim();
        let mu_offset = off;
        let z_offset = mu_offset + big_n * l;
        let eta_offset = z_offset + big_n * l;
        let w_offset = eta_offset + big_n * m;
        Self {
            n_players: big_n,
            strategy_dim: n,
            constraint_dim: l,
            aggregate_dim: m,
            agent_offsets,
            agent_lens,
            mu_offset,
            z_offset,
            eta_offset,
            w_offset,
            total: w_offset + big_n * m,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `(offset, length)` of a block.
    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        let (l, m) = (self.constraint_dim, self.aggregate_dim);
        let (start, len) = match block {
            Block::Agent(i) => (self.agent_offsets[i], self.agent_lens[i]),
            Block::Mu(i) => (self.mu_offset + i * l, l),
            Block::Z(i) => (self.z_offset + i * l, l),
            Block::Eta(i) => (self.eta_offset + i * m, m),
            Block::W(i) => (self.w_offset + i * m, m),
        };
        start..start + len
    }

    pub fn mu_all(&self) -> std::ops::Range<usize> {
        self.mu_offset..self.z_offset
    }

    pub fn z_all(&self) -> std::ops::Range<usize> {
        self.z_offset..self.eta_offset
    }

    pub fn eta_all(&self) -> std::ops::Range<usize> {
        self.eta_offset..self.w_offset
    }

    pub fn w_all(&self) -> std::ops::Range<usize> {
        self.w_offset..self.total
    }
}

/// Flat closed-loop state with its index map.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    layout: StateLayout,
    data: Vec<f64>,
}

impl SimState {
    pub fn zeros(layout: StateLayout) -> Self {
        let data = vec![0.0; layout.len()];
        Self { layout, data }
    }

    pub fn from_vec(layout: StateLayout, data: Vec<f64>) -> Result<Self, DynamicsError> {
        if data.len() != layout.len() {
            return Err(DynamicsError::StateLength { expected: layout.len(), got: data.len() });
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.data[self.layout.range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.layout.range(b);
        &mut self.data[r]
    }

    pub fn mu(&self) -> &[f64] {
        &self.data[self.layout.mu_all()]
    }

    pub fn z(&self) -> &[f64] {
        &self.data[self.layout.z_all()]
    }

    pub fn eta(&self) -> &[f64] {
        &self.data[self.layout.eta_all()]
    }

    pub fn w(&self) -> &[f64] {
        &self.data[self.layout.w_all()]
    }

    /// `sum_i z_i`.
    pub fn z_sum(&self) -> DVector<f64> {
        let l = self.layout.constraint_dim;
        let mut s = DVector::zeros(l);
        for i in 0..self.layout.n_players {
            for (acc, v) in s.iter_mut().zip(self.block(Block::Z(i))) {
                *acc += v;
            }
        }
        s
    }
}

/// Problem found by [`ClosedLoop::validate_initial_state`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub player: Option<usize>,
    pub detail: String,
}

/// Tolerance on `|sum_i z_i(0)|`.
pub const Z_SUM_TOL: f64 = 1e-12;

enum AgentKernel {
    Double { gain: f64 },
    Chain { feedback: Vec<f64> },
    Generator { lin: Box<GeneratorLinearization>, feedback: [f64; 3] },
}

/// The stacked closed-loop vector field over a graph, a game and per-agent
/// dynamics.
pub struct ClosedLoop {
    graph: Digraph,
    game: GameSpec,
    agents: Vec<AgentDynamics>,
    kernels: Vec<AgentKernel>,
    params: RuleParams,
    layout: StateLayout,
    /// In-neighbours `(j, a_ij)` of every node.
    neighbours: Vec<Vec<(usize, f64)>>,
}

impl std::fmt::Debug for ClosedLoop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosedLoop")
            .field("graph", &self.graph)
            .field("game", &self.game)
            .field("agents", &self.agents)
            .field("params", &self.params)
            .finish()
    }
}

impl ClosedLoop {
    pub fn new(
        graph: Digraph,
        game: GameSpec,
        agents: Vec<AgentDynamics>,
        params: RuleParams,
    ) -> Result<Self, DynamicsError> {
        let big_n = game.n_players();
        if graph.n_nodes() != big_n {
            return Err(DynamicsError::PlayerCount { graph: graph.n_nodes(), game: big_n });
        }
        if agents.len() != big_n {
            return Err(DynamicsError::AgentCount(agents.len(), big_n));
        }
        let params = RuleParams::new(params.alpha, params.epsilon)?;
        let mut kernels = Vec::with_capacity(big_n);
        for a in &agents {
            let k = match a {
                AgentDynamics::DoubleIntegrator { gain } => {
                    if !(*gain > 0.0) {
                        return Err(DynamicsError::NonPositiveGain(*gain));
                    }
                    AgentKernel::Double { gain: *gain }
                }
                AgentDynamics::Chain { feedback } => {
                    validate_feedback(feedback)?;
                    AgentKernel::Chain { feedback: feedback.clone() }
                }
                AgentDynamics::Generator { plant, feedback } => {
                    if game.strategy_dim() != 1 {
                        return Err(DynamicsError::GeneratorDim(game.strategy_dim()));
                    }
                    validate_feedback(feedback)?;
                    if feedback.len() != 3 {
                        return Err(DynamicsError::Order(feedback.len()));
                    }
                    plant.validate()?;
                    AgentKernel::Generator {
                        lin: Box::new(GeneratorLinearization::new(*plant)),
                        feedback: [feedback[0], feedback[1], feedback[2]],
                    }
                }
            };
            kernels.push(k);
        }
        let w = graph.weights();
        let neighbours = (0..big_n)
            .map(|i| (0..big_n).filter(|&j| w[(i, j)] > 0.0).map(|j| (j, w[(i, j)])).collect())
            .collect();
        let layout = StateLayout::new(&game, &agents);
        Ok(Self { graph, game, agents, kernels, params, layout, neighbours })
    }

    pub fn graph(&self) -> &Digraph {
        &self.graph
    }

    pub fn game(&self) -> &GameSpec {
        &self.game
    }

    pub fn agents(&self) -> &[AgentDynamics] {
        &self.agents
    }

    pub fn params(&self) -> RuleParams {
        self.params
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    /// Same system with different rule parameters.
    pub fn with_params(&self, params: RuleParams) -> Result<Self, DynamicsError> {
        Self::new(self.graph.clone(), self.game.clone(), self.agents.clone(), params)
    }

    fn raw_output<'a>(&self, state: &'a [f64], i: usize) -> &'a [f64] {
        let r = self.layout.range(Block::Agent(i));
        let n = self.layout.strategy_dim;
        &state[r.start..r.start + n]
    }

    /// Projected outputs `y = P_Omega(C x)`.
    pub fn outputs(&self, state: &[f64]) -> DVector<f64> {
        let n = self.layout.strategy_dim;
        let mut y = DVector::zeros(self.game.profile_dim());
        for i in 0..self.game.n_players() {
            let yi = &mut y.as_mut_slice()[i * n..(i + 1) * n];
            yi.copy_from_slice(self.raw_output(state, i));
            self.game.player(i).bounds.project_in_place(yi);
        }
        y
    }

    /// Neighbour disagreement `sum_j a_ij (v_i - v_j)` on a block family.
    fn laplacian_block(&self, state: &[f64], family: fn(usize) -> Block, i: usize, out: &mut [f64]) {
        out.fill(0.0);
        let own = &state[self.layout.range(family(i))];
        for &(j, a) in &self.neighbours[i] {
            let other = &state[self.layout.range(family(j))];
            for k in 0..out.len() {
                out[k] += a * (own[k] - other[k]);
            }
        }
    }

    /// Full closed-loop derivative.
    pub fn eval_into(&self, state: &[f64], out: &mut [f64]) {
        let n = self.layout.strategy_dim;
        let l = self.layout.constraint_dim;
        let m = self.layout.aggregate_dim;
        let big_n = self.game.n_players() as f64;
        let alpha = self.params.alpha;
        let inv_eps = 1.0 / self.params.epsilon;
        let y = self.outputs(state);

        let mut grad = vec![0.0; n];
        let mut u = vec![0.0; n];
        let mut lap_l = vec![0.0; l];
        let mut lap_m = vec![0.0; m];
        let mut lap_w = vec![0.0; m];
        let mut phi = vec![0.0; m];

        for (i, kernel) in self.kernels.iter().enumerate() {
            let player = self.game.player(i);
            let yi = &y.as_slice()[i * n..(i + 1) * n];
            let eta_i = &state[self.layout.range(Block::Eta(i))];
            let mu_i = &state[self.layout.range(Block::Mu(i))];
            player.cost.grad(yi, eta_i, &mut grad);
            // u = y - grad - A^T mu
            for r in 0..n {
                let mut atmu = 0.0;
                for c in 0..l {
                    atmu += player.coupling.a_mat[(c, r)] * mu_i[c];
                }
                u[r] = yi[r] - grad[r] - atmu;
            }

            let xr = self.layout.range(Block::Agent(i));
            let x = &state[xr.clone()];
            let dx = &mut out[xr];
            match kernel {
                AgentKernel::Double { gain } => {
                    for r in 0..n {
                        dx[r] = x[n + r];
                        dx[n + r] = -gain * x[n + r] - x[r] + u[r];
                    }
                }
                AgentKernel::Chain { feedback } => {
                    let order = feedback.len();
                    for r in 0..n {
                        for j in 0..order - 1 {
                            dx[j * n + r] = x[(j + 1) * n + r];
                        }
                        let mut acc = u[r];
                        for (j, k) in feedback.iter().enumerate() {
                            acc -= k * x[j * n + r];
                        }
                        dx[(order - 1) * n + r] = acc;
                    }
                }
                AgentKernel::Generator { lin, feedback } => {
                    let plant_state = &x[0..3];
                    let input = x[3];
                    let xi = lin.chain_coordinates(plant_state, input);
                    let chain_input = u[0] - feedback.iter().zip(xi.iter()).map(|(k, v)| k * v).sum::<f64>();
                    let sv = DVector::from_column_slice(plant_state);
                    let drift = lin.row3.dot(&sv) + lin.gain2 * input + lin.dist2;
                    let rate = (chain_input - drift) / lin.gain1;
                    let ds = &lin.a * &sv + &lin.b * input + &lin.dist;
                    dx[0..3].copy_from_slice(ds.as_slice());
                    dx[3] = rate;
                }
            }

            // multipliers
            self.laplacian_block(state, Block::Mu, i, &mut lap_l);
            let z_i = &state[self.layout.range(Block::Z(i))];
            let mu_out = self.layout.range(Block::Mu(i));
            let z_out = self.layout.range(Block::Z(i));
            for c in 0..l {
                let mut ay = 0.0;
                for r in 0..n {
                    ay += player.coupling.a_mat[(c, r)] * yi[r];
                }
                out[mu_out.start + c] = -alpha * lap_l[c] - z_i[c] + ay - player.coupling.d_vec[c];
                out[z_out.start + c] = alpha * lap_l[c];
            }

            // estimator
            player.cost.phi(yi, &mut phi);
            self.laplacian_block(state, Block::Eta, i, &mut lap_m);
            self.laplacian_block(state, Block::W, i, &mut lap_w);
            let eta_out = self.layout.range(Block::Eta(i));
            let w_out = self.layout.range(Block::W(i));
            for k in 0..m {
                out[eta_out.start + k] = inv_eps * (-eta_i[k] - lap_m[k] - lap_w[k] + big_n * phi[k]);
                out[w_out.start + k] = inv_eps * lap_m[k];
            }
        }
    }

    pub fn eval(&self, state: &SimState) -> Result<SimState, DynamicsError> {
        if state.layout() != &self.layout {
            return Err(DynamicsError::StateLength { expected: self.layout.len(), got: state.as_slice().len() });
        }
        let mut out = SimState::zeros(self.layout.clone());
        self.eval_into(state.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Stacked field for double-integrator agents.
    pub fn rhs_double_integrator(&self, state: &SimState) -> Result<SimState, DynamicsError> {
        if !self.agents.iter().all(|a| matches!(a, AgentDynamics::DoubleIntegrator { .. })) {
            return Err(DynamicsError::MixedOrder { expected: "r = 2" });
        }
        self.eval(state)
    }

    /// Stacked field for integrator-chain (and linearized generator) agents.
    pub fn rhs_multi_integrator(&self, state: &SimState) -> Result<SimState, DynamicsError> {
        if !self.agents.iter().all(|a| a.order() > 2) {
            return Err(DynamicsError::MixedOrder { expected: "r > 2" });
        }
        self.eval(state)
    }

    /// Initial state with outputs at `y0` and every agent at rest:
    /// `mu = 0`, `z = 0`, `eta_i = N phi_i(y_i(0))`, `w = 0`.
    pub fn initial_state(&self, y0: &[f64]) -> Result<SimState, DynamicsError> {
        let n = self.layout.strategy_dim;
        if y0.len() != self.game.profile_dim() {
            return Err(DynamicsError::StateLength { expected: self.game.profile_dim(), got: y0.len() });
        }
        let mut s = SimState::zeros(self.layout.clone());
        let big_n = self.game.n_players() as f64;
        let mut phi = vec![0.0; self.layout.aggregate_dim];
        for (i, agent) in self.agents.iter().enumerate() {
            let yi = &y0[i * n..(i + 1) * n];
            let x = s.block_mut(Block::Agent(i));
            match agent {
                AgentDynamics::Generator { plant, .. } => {
                    let (ps, u) = plant.initial_state(yi[0]);
                    x[0..3].copy_from_slice(&ps);
                    x[3] = u;
                }
                _ => x[0..n].copy_from_slice(yi),
            }
            self.game.player(i).cost.phi(yi, &mut phi);
            for (e, p) in s.block_mut(Block::Eta(i)).iter_mut().zip(&phi) {
                *e = big_n * p;
            }
        }
        Ok(s)
    }

    /// Checks `mu(0) = 0`, `sum_i z_i(0) = 0` and `C x_i(0) in Omega_i`.
    pub fn validate_initial_state(&self, state: &SimState) -> Vec<Violation> {
        let mut out = Vec::new();
        if state.layout() != &self.layout {
            out.push(Violation { code: "layout_mismatch", player: None, detail: "state layout differs".into() });
            return out;
        }
        for i in 0..self.game.n_players() {
            if state.block(Block::Mu(i)).iter().any(|&v| v != 0.0) {
                out.push(Violation {
                    code: "mu_nonzero",
                    player: Some(i),
                    detail: format!("mu_{i}(0) = {:?}", state.block(Block::Mu(i))),
                });
            }
        }
        let zs = state.z_sum();
        if zs.iter().any(|v| v.abs() > Z_SUM_TOL) {
            out.push(Violation { code: "z_sum_nonzero", player: None, detail: format!("sum z(0) = {:?}", zs.as_slice()) });
        }
        for i in 0..self.game.n_players() {
            let raw = self.raw_output(state.as_slice(), i);
            if !self.game.player(i).bounds.contains(raw, 0.0) {
                out.push(Violation { code: "x_outside_box", player: Some(i), detail: format!("C x_{i}(0) = {raw:?}") });
            }
        }
        out
    }

    /// KKT residuals of the state's projected outputs, multipliers and
    /// estimates.
    pub fn kkt_report(&self, state: &[f64]) -> KktReport {
        let y = self.outputs(state);
        kkt_report(&self.game, y.as_slice(), &state[self.layout.mu_all()], &state[self.layout.eta_all()])
    }

    /// Builds the equilibrium associated with a KKT pair `(y*, mu*)`:
    /// agents at rest with `C x* = y* - F(y*) - A_i^T mu*`, consensual
    /// multipliers, `z_i = A_i y_i* - d_i`, `eta_i = sigma(y*)` and `w`
    /// solving `L w = N phi(y*) - eta*`.
    pub fn equilibrium_state(&self, y_star: &[f64], mu_star: &[f64]) -> Result<SimState, DynamicsError> {
        let n = self.layout.strategy_dim;
        let l = self.layout.constraint_dim;
        let m = self.layout.aggregate_dim;
        let big_n = self.game.n_players();
        if y_star.len() != self.game.profile_dim() {
            return Err(DynamicsError::StateLength { expected: self.game.profile_dim(), got: y_star.len() });
        }
        if mu_star.len() != l {
            return Err(DynamicsError::StateLength { expected: l, got: mu_star.len() });
        }
        let f = self.game.pseudo_gradient(y_star)?;
        let sigma = self.game.aggregate(y_star)?;
        let mu_vec = DVector::from_column_slice(mu_star);
        let mut s = SimState::zeros(self.layout.clone());
        let mut phi = vec![0.0; m];
        let mut rhs = DVector::zeros(big_n * m);
        for (i, agent) in self.agents.iter().enumerate() {
            let player = self.game.player(i);
            let yi = DVector::from_column_slice(&y_star[i * n..(i + 1) * n]);
            let fi = f.rows(i * n, n);
            let xi = &yi - fi - player.coupling.a_mat.transpose() * &mu_vec;
            let x = s.block_mut(Block::Agent(i));
            match agent {
                AgentDynamics::Generator { plant, .. } => {
                    let (ps, u) = plant.steady_state(xi[0]);
                    x[0..3].copy_from_slice(&ps);
                    x[3] = u;
                }
                _ => x[0..n].copy_from_slice(xi.as_slice()),
            }
            s.block_mut(Block::Mu(i)).copy_from_slice(mu_star);
            let zi = &player.coupling.a_mat * &yi - &player.coupling.d_vec;
            s.block_mut(Block::Z(i)).copy_from_slice(zi.as_slice());
            s.block_mut(Block::Eta(i)).copy_from_slice(sigma.as_slice());
            player.cost.phi(yi.as_slice(), &mut phi);
            for k in 0..m {
                rhs[i * m + k] = big_n as f64 * phi[k] - sigma[k];
            }
        }
        if m > 0 {
            let lifted = self.graph.laplacian().kronecker(&DMatrix::<f64>::identity(m, m));
            let w = lifted
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| DynamicsError::Generator(format!("estimator auxiliary solve failed: {e}")))?;
            let wr = self.layout.w_all();
            s.as_mut_slice()[wr].copy_from_slice(w.as_slice());
        }
        Ok(s)
    }
}

impl VectorField for ClosedLoop {
    type Report = KktReport;

    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn eval(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        self.eval_into(state, out)
    }

    fn report(&self, _t: f64, state: &[f64]) -> KktReport {
        self.kkt_report(state)
    }

    fn converged(&self, report: &KktReport, tol: f64) -> bool {
        report.max() <= tol
    }

    fn max_stable_step(&self) -> Option<f64> {
        Some(self.params.epsilon / 5.0)
    }
}

/// Estimator subsystem with frozen outputs, in the fast time `tau = t / eps`:
/// `eta' = -eta - L eta - L w + N phi`, `w' = L eta`.
pub struct BoundaryLayer {
    neighbours: Vec<Vec<(usize, f64)>>,
    /// `N phi_i(y_i)` per agent, flattened.
    targets: Vec<f64>,
    m: usize,
}

impl BoundaryLayer {
    pub fn new(graph: &Digraph, game: &GameSpec, y: &[f64]) -> Self {
        let n = game.strategy_dim();
        let m = game.aggregate_dim();
        let big_n = game.n_players();
        let mut targets = vec![0.0; big_n * m];
        for i in 0..big_n {
            game.player(i).cost.phi(&y[i * n..(i + 1) * n], &mut targets[i * m..(i + 1) * m]);
        }
        for t in targets.iter_mut() {
            *t *= big_n as f64;
        }
        let w = graph.weights();
        let neighbours = (0..big_n)
            .map(|i| (0..big_n).filter(|&j| w[(i, j)] > 0.0).map(|j| (j, w[(i, j)])).collect())
            .collect();
        Self { neighbours, targets, m }
    }

    pub fn n_agents(&self) -> usize {
        self.neighbours.len()
    }

    /// Warm start `eta_i = N phi_i(y_i)`, `w = 0`.
    pub fn initial_state(&self) -> Vec<f64> {
        let mut s = self.targets.clone();
        s.resize(2 * self.targets.len(), 0.0);
        s
    }

    /// Largest deviation `max_i ||eta_i - sum_j phi_j||` for state `(eta, w)`.
    pub fn tracking_error(&self, state: &[f64]) -> f64 {
        let big_n = self.n_agents();
        let m = self.m;
        let mut sigma = vec![0.0; m];
        for i in 0..big_n {
            for k in 0..m {
                sigma[k] += self.targets[i * m + k] / big_n as f64;
            }
        }
        (0..big_n)
            .map(|i| (0..m).map(|k| (state[i * m + k] - sigma[k]).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

impl VectorField for BoundaryLayer {
    type Report = f64;

    fn dim(&self) -> usize {
        2 * self.targets.len()
    }

    fn eval(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        let m = self.m;
        let nm = self.targets.len();
        let (eta, w) = state.split_at(nm);
        let (deta, dw) = out.split_at_mut(nm);
        for (i, nb) in self.neighbours.iter().enumerate() {
            for k in 0..m {
                let mut le = 0.0;
                let mut lw = 0.0;
                for &(j, a) in nb {
                    le += a * (eta[i * m + k] - eta[j * m + k]);
                    lw += a * (w[i * m + k] - w[j * m + k]);
                }
                deta[i * m + k] = -eta[i * m + k] - le - lw + self.targets[i * m + k];
                dw[i * m + k] = le;
            }
        }
    }

    fn report(&self, _t: f64, state: &[f64]) -> f64 {
        self.tracking_error(state)
    }

    fn converged(&self, report: &f64, tol: f64) -> bool {
        *report <= tol
    }
}
