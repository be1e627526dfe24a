//! Aggregative games with coupled linear equality constraints and local
//! box constraints.
//!
//! Each player `i` owns a [`CostModel`] providing its local aggregator
//! contribution `phi_i(y_i)` and the partial gradient of its cost taken
//! with the aggregate as a separate argument. The gradient already
//! includes the dependence of the aggregate on `y_i`, so evaluating it at
//! the true aggregate `sigma(y)` yields the pseudo-gradient block
//! `F_i(y)`, while the agents evaluate it at their private estimates.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::GameError;
use crate::graph::spectral_norm;

/// Closed box `{x : lower <= x <= upper}`; components may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, GameError> {
        if lower.len() != upper.len() {
            return Err(GameError::BoxLength { lower: lower.len(), upper: upper.len() });
        }
        for (index, (&lo, &hi)) in lower.iter().zip(upper.iter()).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(GameError::EmptyBox { index, lower: lo, upper: hi });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Same interval `[lo, hi]` in each of `n` components.
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self, GameError> {
        Self::new(DVector::from_element(n, lo), DVector::from_element(n, hi))
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// Euclidean projection, i.e. a componentwise clamp.
    pub fn project(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::from_column_slice(x);
        self.project_in_place(out.as_mut_slice());
        out
    }

    pub fn project_in_place(&self, x: &mut [f64]) {
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = xj.max(self.lower[j]).min(self.upper[j]);
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .enumerate()
            .all(|(j, &xj)| xj >= self.lower[j] - tol && xj <= self.upper[j] + tol)
    }
}

/// Player `i`'s share `(A_i, d_i)` of the coupled constraint
/// `sum_i A_i y_i = sum_i d_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub a_mat: DMatrix<f64>,
    pub d_vec: DVector<f64>,
}

impl CouplingBlock {
    pub fn new(a_mat: DMatrix<f64>, d_vec: DVector<f64>) -> Result<Self, GameError> {
        if a_mat.nrows() != d_vec.len() {
            return Err(GameError::dim("coupling rows", a_mat.nrows(), d_vec.len()));
        }
        Ok(Self { a_mat, d_vec })
    }

    /// No coupled constraints (`l = 0`).
    pub fn none(n: usize) -> Self {
        Self { a_mat: DMatrix::zeros(0, n), d_vec: DVector::zeros(0) }
    }

    pub fn rows(&self) -> usize {
        self.a_mat.nrows()
    }
}

/// Cost structure of a single player.
pub trait CostModel: Send + Sync {
    fn strategy_dim(&self) -> usize;
    fn aggregate_dim(&self) -> usize;
    /// Local aggregator contribution `phi_i(y_i)`, written into `out`.
    fn phi(&self, y_i: &[f64], out: &mut [f64]);
    fn phi_jacobian(&self, y_i: &[f64]) -> DMatrix<f64>;
    /// `d/dy_i J_i(y_i, sigma(y))` with `sigma` replaced by `eta`.
    fn grad(&self, y_i: &[f64], eta: &[f64], out: &mut [f64]);
    /// Scalar cost `J_i(y_i, sigma)`.
    fn value(&self, y_i: &[f64], sigma: &[f64]) -> f64;
    fn describe(&self) -> String {
        "cost".into()
    }
}

#[derive(Clone)]
pub struct Player {
    pub cost: Arc<dyn CostModel>,
    pub coupling: CouplingBlock,
    pub bounds: BoxSet,
}

impl fmt::Debug for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Player")
            .field("cost", &self.cost.describe())
            .field("coupling", &self.coupling)
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// An aggregative game: costs, aggregator, coupled constraints, local boxes.
#[derive(Debug, Clone)]
pub struct GameSpec {
    players: Vec<Player>,
    strategy_dim: usize,
    aggregate_dim: usize,
    constraint_dim: usize,
}

impl GameSpec {
    pub fn new(players: Vec<Player>) -> Result<Self, GameError> {
        let first = players.first().ok_or(GameError::NoPlayers)?;
        let n = first.cost.strategy_dim();
        let m = first.cost.aggregate_dim();
        let l = first.coupling.rows();
        for (i, p) in players.iter().enumerate() {
            let check = |what: &str, expected: usize, got: usize| {
                if expected == got {
                    Ok(())
                } else {
                    Err(GameError::dim(format!("player {i} {what}"), expected, got))
                }
            };
            check("strategy dimension", n, p.cost.strategy_dim())?;
            check("aggregate dimension", m, p.cost.aggregate_dim())?;
            check("constraint rows", l, p.coupling.rows())?;
            check("coupling columns", n, p.coupling.a_mat.ncols())?;
            check("box dimension", n, p.bounds.dim())?;
        }
        Ok(Self { players, strategy_dim: n, aggregate_dim: m, constraint_dim: l })
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn strategy_dim(&self) -> usize {
        self.strategy_dim
    }

    pub fn aggregate_dim(&self) -> usize {
        self.aggregate_dim
    }

    pub fn constraint_dim(&self) -> usize {
        self.constraint_dim
    }

    pub fn profile_dim(&self) -> usize {
        self.n_players() * self.strategy_dim
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn player(&self, i: usize) -> &Player {
        &self.players[i]
    }

    fn check_profile(&self, y: &[f64]) -> Result<(), GameError> {
        if y.len() != self.profile_dim() {
            return Err(GameError::dim("strategy profile", self.profile_dim(), y.len()));
        }
        Ok(())
    }

    fn block<'a>(&self, y: &'a [f64], i: usize) -> &'a [f64] {
        let n = self.strategy_dim;
        &y[i * n..(i + 1) * n]
    }

    /// `sigma(y) = sum_i phi_i(y_i)`.
    pub fn aggregate(&self, y: &[f64]) -> Result<DVector<f64>, GameError> {
        self.check_profile(y)?;
        Ok(self.aggregate_unchecked(y))
    }

    pub(crate) fn aggregate_unchecked(&self, y: &[f64]) -> DVector<f64> {
        let m = self.aggregate_dim;
        let mut sigma = DVector::zeros(m);
        let mut buf = vec![0.0; m];
        for (i, p) in self.players.iter().enumerate() {
            p.cost.phi(self.block(y, i), &mut buf);
            for (s, b) in sigma.iter_mut().zip(&buf) {
                *s += b;
            }
        }
        sigma
    }

    /// Pseudo-gradient `F(y)`, every block evaluated at the true aggregate.
    pub fn pseudo_gradient(&self, y: &[f64]) -> Result<DVector<f64>, GameError> {
        self.check_profile(y)?;
        Ok(self.pseudo_gradient_unchecked(y))
    }

    pub(crate) fn pseudo_gradient_unchecked(&self, y: &[f64]) -> DVector<f64> {
        let n = self.strategy_dim;
        let sigma = self.aggregate_unchecked(y);
        let mut out = DVector::zeros(self.profile_dim());
        for (i, p) in self.players.iter().enumerate() {
            p.cost.grad(self.block(y, i), sigma.as_slice(), &mut out.as_mut_slice()[i * n..(i + 1) * n]);
        }
        out
    }

    /// `sum_i A_i y_i - sum_i d_i`.
    pub fn constraint_residual(&self, y: &[f64]) -> Result<DVector<f64>, GameError> {
        self.check_profile(y)?;
        let mut r = DVector::zeros(self.constraint_dim);
        for (i, p) in self.players.iter().enumerate() {
            let yi = DVector::from_column_slice(self.block(y, i));
            r += &p.coupling.a_mat * yi - &p.coupling.d_vec;
        }
        Ok(r)
    }

    /// Stacked coupling matrix `A = [A_1, ..., A_N]` (`l x Nn`).
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        let n = self.strategy_dim;
        let mut a = DMatrix::zeros(self.constraint_dim, self.profile_dim());
        for (i, p) in self.players.iter().enumerate() {
            a.view_mut((0, i * n), (self.constraint_dim, n)).copy_from(&p.coupling.a_mat);
        }
        a
    }

    /// `d = sum_i d_i`.
    pub fn total_demand(&self) -> DVector<f64> {
        self.players
            .iter()
            .fold(DVector::zeros(self.constraint_dim), |acc, p| acc + &p.coupling.d_vec)
    }

    /// Spectral norm of `blk{A_1, ..., A_N}`, i.e. `max_i ||A_i||`.
    pub fn block_coupling_norm(&self) -> f64 {
        self.players
            .iter()
            .map(|p| spectral_norm(&p.coupling.a_mat))
            .fold(0.0, f64::max)
    }

    pub fn project_profile(&self, x: &[f64]) -> DVector<f64> {
        let n = self.strategy_dim;
        let mut out = DVector::from_column_slice(x);
        for (i, p) in self.players.iter().enumerate() {
            p.bounds.project_in_place(&mut out.as_mut_slice()[i * n..(i + 1) * n]);
        }
        out
    }

    pub fn profile_in_bounds(&self, y: &[f64], tol: f64) -> bool {
        self.players
            .iter()
            .enumerate()
            .all(|(i, p)| p.bounds.contains(self.block(y, i), tol))
    }

    /// Scalar cost `J_i(y)` of player `i` at profile `y`.
    pub fn player_cost(&self, i: usize, y: &[f64]) -> Result<f64, GameError> {
        let sigma = self.aggregate(y)?;
        Ok(self.players[i].cost.value(self.block(y, i), sigma.as_slice()))
    }

    /// Central finite-difference Jacobian of `F` at `y`.
    pub fn pseudo_jacobian_fd(&self, y: &[f64], step: f64) -> DMatrix<f64> {
        let dim = self.profile_dim();
        let mut jac = DMatrix::zeros(dim, dim);
        let mut yp = y.to_vec();
        for k in 0..dim {
            let orig = yp[k];
            yp[k] = orig + step;
            let fp = self.pseudo_gradient_unchecked(&yp);
            yp[k] = orig - step;
            let fm = self.pseudo_gradient_unchecked(&yp);
            yp[k] = orig;
            jac.set_column(k, &((fp - fm) / (2.0 * step)));
        }
        jac
    }

    /// Central finite differences of the scalar costs: block `i` holds
    /// `d/dy_i J_i(y_i, sigma(y))`. Independent of [`CostModel::grad`].
    pub fn cost_gradient_fd(&self, y: &[f64], step: f64) -> DVector<f64> {
        let n = self.strategy_dim;
        let mut out = DVector::zeros(self.profile_dim());
        let mut yp = y.to_vec();
        for i in 0..self.n_players() {
            for j in 0..n {
                let k = i * n + j;
                let orig = yp[k];
                yp[k] = orig + step;
                let jp = self.player_cost(i, &yp).expect("profile length checked");
                yp[k] = orig - step;
                let jm = self.player_cost(i, &yp).expect("profile length checked");
                yp[k] = orig;
                out[k] = (jp - jm) / (2.0 * step);
            }
        }
        out
    }
}

/// Aggregator that stacks the whole profile: `phi_i(y_i) = e_i (x) y_i`.
/// Costs that depend on individual neighbours' strategies (not only on a
/// sum) are aggregative under this map with `m = N n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileEmbedding {
    pub player: usize,
    pub n_players: usize,
    pub dim: usize,
}

impl ProfileEmbedding {
    pub fn aggregate_dim(&self) -> usize {
        self.n_players * self.dim
    }

    pub fn phi(&self, y_i: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[self.player * self.dim..(self.player + 1) * self.dim].copy_from_slice(y_i);
    }

    pub fn jacobian(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.aggregate_dim(), self.dim);
        for k in 0..self.dim {
            j[(self.player * self.dim + k, k)] = 1.0;
        }
        j
    }

    /// Copy of the estimate with the player's own block replaced by its
    /// actual strategy.
    pub fn localize(&self, y_i: &[f64], eta: &[f64]) -> Vec<f64> {
        let mut v = eta.to_vec();
        v[self.player * self.dim..(self.player + 1) * self.dim].copy_from_slice(y_i);
        v
    }
}

/// Player `i` of the affine game `F(y) = M y + q` under the profile
/// embedding. The cost is
/// `J_i = 1/2 y_i^T M_ii y_i + sum_{j != i} y_i^T M_ij sigma_j + q_i^T y_i`,
/// which requires symmetric diagonal blocks `M_ii`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    embed: ProfileEmbedding,
    /// Row block `[M_i1, ..., M_iN]` (`n x Nn`).
    row: DMatrix<f64>,
    offset: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(player: usize, n_players: usize, row: DMatrix<f64>, offset: DVector<f64>) -> Result<Self, GameError> {
        let n = offset.len();
        if row.nrows() != n || row.ncols() != n * n_players {
            return Err(GameError::dim("quadratic row block columns", n * n_players, row.ncols()));
        }
        let diag = row.view((0, player * n), (n, n));
        if (diag - diag.transpose()).amax() > 1e-12 {
            return Err(GameError::Invalid(format!("diagonal block M_{player}{player} is not symmetric")));
        }
        Ok(Self { embed: ProfileEmbedding { player, n_players, dim: n }, row, offset })
    }
}

impl CostModel for QuadraticCost {
    fn strategy_dim(&self) -> usize {
        self.embed.dim
    }

    fn aggregate_dim(&self) -> usize {
        self.embed.aggregate_dim()
    }

    fn phi(&self, y_i: &[f64], out: &mut [f64]) {
        self.embed.phi(y_i, out)
    }

    fn phi_jacobian(&self, _y_i: &[f64]) -> DMatrix<f64> {
        self.embed.jacobian()
    }

    fn grad(&self, y_i: &[f64], eta: &[f64], out: &mut [f64]) {
        let v = self.embed.localize(y_i, eta);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.offset[r] + self.row.row(r).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn value(&self, y_i: &[f64], sigma: &[f64]) -> f64 {
        let n = self.embed.dim;
        let i = self.embed.player;
        let mut total = 0.0;
        for r in 0..n {
            let mut acc = self.offset[r];
            for (c, &s) in sigma.iter().enumerate() {
                let blk = c / n;
                let coef = self.row[(r, c)];
                if blk == i {
                    acc += 0.5 * coef * y_i[c - i * n];
                } else {
                    acc += coef * s;
                }
            }
            total += y_i[r] * acc;
        }
        total
    }

    fn describe(&self) -> String {
        format!("quadratic(player {})", self.embed.player)
    }
}

/// Formation cost `||y_i - Q_i||^2 + beta (sigma - h)^T (L (x) I) (sigma - h)`
/// under the profile embedding.
#[derive(Debug, Clone)]
pub struct FormationCost {
    embed: ProfileEmbedding,
    landmark: DVector<f64>,
    beta: f64,
    offsets: DVector<f64>,
    /// `L (x) I_n`.
    lifted_laplacian: DMatrix<f64>,
}

impl FormationCost {
    pub fn new(
        player: usize,
        laplacian: &DMatrix<f64>,
        landmark: DVector<f64>,
        beta: f64,
        offsets: DVector<f64>,
    ) -> Result<Self, GameError> {
        let n_players = laplacian.nrows();
        let dim = landmark.len();
        if offsets.len() != n_players * dim {
            return Err(GameError::dim("formation offsets", n_players * dim, offsets.len()));
        }
        Ok(Self {
            embed: ProfileEmbedding { player, n_players, dim },
            landmark,
            beta,
            offsets,
            lifted_laplacian: laplacian.kronecker(&DMatrix::identity(dim, dim)),
        })
    }
}

impl CostModel for FormationCost {
    fn strategy_dim(&self) -> usize {
        self.embed.dim
    }

    fn aggregate_dim(&self) -> usize {
        self.embed.aggregate_dim()
    }

    fn phi(&self, y_i: &[f64], out: &mut [f64]) {
        self.embed.phi(y_i, out)
    }

    fn phi_jacobian(&self, _y_i: &[f64]) -> DMatrix<f64> {
        self.embed.jacobian()
    }

    fn grad(&self, y_i: &[f64], eta: &[f64], out: &mut [f64]) {
        let n = self.embed.dim;
        let i = self.embed.player;
        let mut dev = self.embed.localize(y_i, eta);
        for (d, h) in dev.iter_mut().zip(self.offsets.iter()) {
            *d -= h;
        }
        for (r, o) in out.iter_mut().enumerate() {
            let k = i * n + r;
            // row k of (L + L^T) (x) I applied to (sigma - h)
            let mut s = 0.0;
            for (c, d) in dev.iter().enumerate() {
                s += (self.lifted_laplacian[(k, c)] + self.lifted_laplacian[(c, k)]) * d;
            }
            *o = 2.0 * (y_i[r] - self.landmark[r]) + self.beta * s;
        }
    }

    fn value(&self, y_i: &[f64], sigma: &[f64]) -> f64 {
        let own: f64 = y_i.iter().zip(self.landmark.iter()).map(|(y, q)| (y - q).powi(2)).sum();
        let dev = DVector::from_column_slice(sigma) - &self.offsets;
        own + self.beta * dev.dot(&(&self.lifted_laplacian * &dev))
    }

    fn describe(&self) -> String {
        format!("formation(player {})", self.embed.player)
    }
}

/// Generation cost with price-anticipating revenue:
/// `J_i = alpha + beta y + xi y^2 - (p0 - a sigma) y`, `sigma = sum_j y_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerCost {
    pub alpha: f64,
    pub beta: f64,
    pub xi: f64,
    pub base_price: f64,
    pub price_slope: f64,
}

impl CostModel for DerCost {
    fn strategy_dim(&self) -> usize {
        1
    }

    fn aggregate_dim(&self) -> usize {
        1
    }

    fn phi(&self, y_i: &[f64], out: &mut [f64]) {
        out[0] = y_i[0];
    }

    fn phi_jacobian(&self, _y_i: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    fn grad(&self, y_i: &[f64], eta: &[f64], out: &mut [f64]) {
        let y = y_i[0];
        out[0] = self.beta + 2.0 * self.xi * y - (self.base_price - self.price_slope * eta[0]) + self.price_slope * y;
    }

    fn value(&self, y_i: &[f64], sigma: &[f64]) -> f64 {
        let y = y_i[0];
        self.alpha + self.beta * y + self.xi * y * y - (self.base_price - self.price_slope * sigma[0]) * y
    }

    fn describe(&self) -> String {
        "der".into()
    }
}

type PhiFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type ValueFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Cost model assembled from closures.
#[derive(Clone)]
pub struct FnCost {
    pub strategy_dim: usize,
    pub aggregate_dim: usize,
    pub phi: Arc<PhiFn>,
    pub phi_jacobian: Arc<JacFn>,
    pub grad: Arc<GradFn>,
    pub value: Arc<ValueFn>,
}

impl CostModel for FnCost {
    fn strategy_dim(&self) -> usize {
        self.strategy_dim
    }

    fn aggregate_dim(&self) -> usize {
        self.aggregate_dim
    }

    fn phi(&self, y_i: &[f64], out: &mut [f64]) {
        (self.phi)(y_i, out)
    }

    fn phi_jacobian(&self, y_i: &[f64]) -> DMatrix<f64> {
        (self.phi_jacobian)(y_i)
    }

    fn grad(&self, y_i: &[f64], eta: &[f64], out: &mut [f64]) {
        (self.grad)(y_i, eta, out)
    }

    fn value(&self, y_i: &[f64], sigma: &[f64]) -> f64 {
        (self.value)(y_i, sigma)
    }

    fn describe(&self) -> String {
        "closure".into()
    }
}

/// Builds the affine game `F(y) = M y + q` with the profile embedding as
/// aggregator.
pub fn quadratic_game(
    matrix: &DMatrix<f64>,
    offset: &DVector<f64>,
    strategy_dim: usize,
    couplings: Vec<CouplingBlock>,
    bounds: Vec<BoxSet>,
) -> Result<GameSpec, GameError> {
    let dim = matrix.nrows();
    if matrix.ncols() != dim || offset.len() != dim || strategy_dim == 0 || !dim.is_multiple_of(strategy_dim) {
        return Err(GameError::dim("quadratic game matrix", dim, matrix.ncols()));
    }
    let n_players = dim / strategy_dim;
    if couplings.len() != n_players || bounds.len() != n_players {
        return Err(GameError::dim("per-player blocks", n_players, couplings.len().min(bounds.len())));
    }
    let players = couplings
        .into_iter()
        .zip(bounds)
        .enumerate()
        .map(|(i, (coupling, bounds))| {
            let n = strategy_dim;
            let row = matrix.rows(i * n, n).into_owned();
            let q = offset.rows(i * n, n).into_owned();
            let cost = QuadraticCost::new(i, n_players, row, q)?;
            Ok(Player { cost: Arc::new(cost), coupling, bounds })
        })
        .collect::<Result<Vec<_>, GameError>>()?;
    GameSpec::new(players)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn identity_players(n_players: usize, grad: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> GameSpec {
        let grad = Arc::new(grad);
        let players = (0..n_players)
            .map(|_| {
                let g = grad.clone();
                Player {
                    cost: Arc::new(FnCost {
                        strategy_dim: 1,
                        aggregate_dim: 1,
                        phi: Arc::new(|y, out| out[0] = y[0]),
                        phi_jacobian: Arc::new(|_| DMatrix::from_element(1, 1, 1.0)),
                        grad: Arc::new(move |y, eta, out| out[0] = g(y[0], eta[0])),
                        value: Arc::new(|_, _| 0.0),
                    }),
                    coupling: CouplingBlock::none(1),
                    bounds: BoxSet::unbounded(1),
                }
            })
            .collect();
        GameSpec::new(players).unwrap()
    }

    #[test]
    fn projection_examples() {
        let b = BoxSet::uniform(2, -10.0, 10.0).unwrap();
        assert_eq!(b.project(&[3.0, -2.0]), dvector![3.0, -2.0]);
        assert_eq!(b.project(&[15.0, -12.0]), dvector![10.0, -10.0]);
        let g1 = BoxSet::uniform(1, 20.0, 30.0).unwrap();
        assert_eq!(g1.project(&[19.5]), dvector![20.0]);
    }

    #[test]
    fn empty_box_rejected() {
        assert!(matches!(
            BoxSet::new(dvector![1.0, 0.0], dvector![2.0, -1.0]),
            Err(GameError::EmptyBox { index: 1, .. })
        ));
        assert!(BoxSet::new(dvector![1.0], dvector![2.0, 3.0]).is_err());
    }

    #[test]
    fn aggregate_identity_sum() {
        let g = identity_players(3, |_, _| 0.0);
        assert_eq!(g.aggregate(&[1.0, 2.0, 3.0]).unwrap(), dvector![6.0]);
        assert!(g.aggregate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregate_nonlinear_map() {
        let sq = |_: usize| Player {
            cost: Arc::new(FnCost {
                strategy_dim: 1,
                aggregate_dim: 1,
                phi: Arc::new(|y, out| out[0] = y[0] * y[0]),
                phi_jacobian: Arc::new(|y| DMatrix::from_element(1, 1, 2.0 * y[0])),
                grad: Arc::new(|_, _, out| out[0] = 0.0),
                value: Arc::new(|_, _| 0.0),
            }),
            coupling: CouplingBlock::none(1),
            bounds: BoxSet::unbounded(1),
        };
        let g = GameSpec::new(vec![sq(0), sq(1)]).unwrap();
        assert_eq!(g.aggregate(&[1.0, -1.0]).unwrap(), dvector![2.0]);
    }

    #[test]
    fn der_gradient_matches_hand_derivative_and_fd() {
        let c = DerCost { alpha: 5.0, beta: 12.0, xi: 1.0, base_price: 50.0, price_slope: 0.1 };
        let (y1, sigma) = (25.0, 180.0);
        let mut g = [0.0];
        c.grad(&[y1], &[sigma], &mut g);
        let hand = 12.0 + 2.0 * 1.0 * y1 - (50.0 - 0.1 * sigma) + 0.1 * y1;
        assert!((g[0] - hand).abs() < 1e-12);
        // FD of y1 -> J_1(y1, sigma(y)) with the rest of the aggregate fixed
        let rest = sigma - y1;
        let h = 1e-4;
        let j = |y: f64| c.value(&[y], &[rest + y]);
        let fd = (j(y1 + h) - j(y1 - h)) / (2.0 * h);
        assert!((fd - hand).abs() < 1e-6);
    }

    #[test]
    fn quadratic_game_is_affine() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let q = dvector![1.0, -1.0];
        let g = quadratic_game(
            &m,
            &q,
            1,
            vec![CouplingBlock::none(1), CouplingBlock::none(1)],
            vec![BoxSet::unbounded(1), BoxSet::unbounded(1)],
        )
        .unwrap();
        let y = [0.7, -0.3];
        let f = g.pseudo_gradient(&y).unwrap();
        assert_eq!(f, &m * dvector![0.7, -0.3] + &q);
        let fd = g.cost_gradient_fd(&y, 1e-5);
        assert!((fd - f).amax() < 1e-8);
    }

    #[test]
    fn quadratic_rejects_asymmetric_diagonal_block() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let r = quadratic_game(
            &m,
            &dvector![0.0, 0.0],
            2,
            vec![CouplingBlock::none(2)],
            vec![BoxSet::unbounded(2)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn constraint_residual_and_stacks() {
        let players = (0..2)
            .map(|i| Player {
                cost: Arc::new(DerCost { alpha: 0.0, beta: 0.0, xi: 1.0, base_price: 0.0, price_slope: 0.0 }),
                coupling: CouplingBlock::new(DMatrix::from_element(1, 1, 1.0 + i as f64), dvector![3.0]).unwrap(),
                bounds: BoxSet::unbounded(1),
            })
            .collect();
        let g = GameSpec::new(players).unwrap();
        assert_eq!(g.constraint_residual(&[1.0, 2.0]).unwrap(), dvector![-1.0]);
        assert_eq!(g.coupling_matrix(), DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        assert_eq!(g.total_demand(), dvector![6.0]);
        assert!((g.block_coupling_norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_players_rejected() {
        let p1 = Player {
            cost: Arc::new(DerCost { alpha: 0.0, beta: 0.0, xi: 1.0, base_price: 0.0, price_slope: 0.0 }),
            coupling: CouplingBlock::none(1),
            bounds: BoxSet::unbounded(1),
        };
        let mut p2 = p1.clone();
        p2.coupling = CouplingBlock::new(DMatrix::zeros(1, 1), dvector![0.0]).unwrap();
        assert!(matches!(GameSpec::new(vec![p1, p2]), Err(GameError::Dimension { .. })));
        assert!(matches!(GameSpec::new(vec![]), Err(GameError::NoPlayers)));
    }
}
