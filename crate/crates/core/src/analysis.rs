//! Verification tools: KKT residuals, an independent equilibrium oracle,
//! monotonicity constants of the pseudo-gradient, and checkers for the
//! sufficient gain conditions of the double-integrator and the
//! integrator-chain rules.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{spectral_abscissa, AgentDynamics, RuleParams};
use crate::error::{DynamicsError, OracleError};
use crate::game::{BoxSet, GameSpec};
use crate::graph::{spectral_norm, Digraph, SpectralSummary};

/// Residuals of the equilibrium conditions
/// `y = P(y - F(y) - A^T mu)`, `A y = d`, plus the disagreement of the
/// local multipliers and aggregate estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub feasibility: f64,
    pub mu_consensus: f64,
    pub eta_tracking: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.mu_consensus).max(self.eta_tracking)
    }
}

impl fmt::Display for KktReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kkt_stationarity = {:e}", self.stationarity)?;
        writeln!(f, "kkt_feasibility  = {:e}", self.feasibility)?;
        writeln!(f, "mu_consensus     = {:e}", self.mu_consensus)?;
        write!(f, "eta_tracking     = {:e}", self.eta_tracking)
    }
}

/// Mean of `N` stacked blocks of length `len`.
fn block_mean(stacked: &[f64], n_blocks: usize, len: usize) -> DVector<f64> {
    let mut m = DVector::zeros(len);
    for i in 0..n_blocks {
        for k in 0..len {
            m[k] += stacked[i * len + k];
        }
    }
    m / n_blocks as f64
}

fn max_block_distance(stacked: &[f64], n_blocks: usize, center: &DVector<f64>) -> f64 {
    let len = center.len();
    (0..n_blocks)
        .map(|i| (0..len).map(|k| (stacked[i * len + k] - center[k]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// KKT report for a profile `y`, stacked local multipliers `mu` (`N l`) and
/// stacked aggregate estimates `eta` (`N m`). The pseudo-gradient uses the
/// true aggregate and the mean multiplier.
pub fn kkt_report(game: &GameSpec, y: &[f64], mu: &[f64], eta: &[f64]) -> KktReport {
    let n = game.strategy_dim();
    let l = game.constraint_dim();
    let big_n = game.n_players();
    let f = game.pseudo_gradient_unchecked(y);
    let mu_bar = block_mean(mu, big_n, l);
    let mut stat = 0.0;
    for (i, p) in game.players().iter().enumerate() {
        let atmu = p.coupling.a_mat.transpose() * &mu_bar;
        let yi = &y[i * n..(i + 1) * n];
        let trial: Vec<f64> = (0..n).map(|r| yi[r] - f[i * n + r] - atmu[r]).collect();
        let proj = p.bounds.project(&trial);
        stat += (0..n).map(|r| (yi[r] - proj[r]).powi(2)).sum::<f64>();
    }
    let feas = game.constraint_residual(y).map(|r| r.norm()).unwrap_or(f64::NAN);
    let sigma = game.aggregate_unchecked(y);
    KktReport {
        stationarity: stat.sqrt(),
        feasibility: feas,
        mu_consensus: if l == 0 { 0.0 } else { max_block_distance(mu, big_n, &mu_bar) },
        eta_tracking: max_block_distance(eta, big_n, &sigma),
    }
}

/// KKT residuals of a candidate pair `(y, mu)` with a single multiplier.
pub fn kkt_report_pair(game: &GameSpec, y: &[f64], mu: &[f64]) -> KktReport {
    let big_n = game.n_players();
    let mu_stack: Vec<f64> = (0..big_n).flat_map(|_| mu.iter().copied()).collect();
    let sigma = game.aggregate_unchecked(y);
    let eta_stack: Vec<f64> = (0..big_n).flat_map(|_| sigma.iter().copied()).collect();
    kkt_report(game, y, &mu_stack, &eta_stack)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotonicityMethod {
    JacobianExact,
    Sampled,
}

/// Strong-monotonicity constant `omega` and Lipschitz constant `theta` of
/// the pseudo-gradient on the strategy space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityEstimate {
    pub omega: f64,
    pub theta: f64,
    pub method: MonotonicityMethod,
    pub warning: Option<String>,
}

const SAMPLE_SPAN: f64 = 10.0;

fn sample_in_box<R: Rng + ?Sized>(b: &BoxSet, rng: &mut R, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi) = (b.lower()[j], b.upper()[j]);
        let (a, c) = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => (lo, hi),
            (true, false) => (lo, lo + 2.0 * SAMPLE_SPAN),
            (false, true) => (hi - 2.0 * SAMPLE_SPAN, hi),
            (false, false) => (-SAMPLE_SPAN, SAMPLE_SPAN),
        };
        // finite but huge boxes are sampled near the origin
        let (a, c) = (a.max(-1e3 * SAMPLE_SPAN), c.min(1e3 * SAMPLE_SPAN));
        *o = if c > a { rng.random_range(a..=c) } else { a };
    }
}

fn sample_profile<R: Rng + ?Sized>(game: &GameSpec, rng: &mut R) -> Vec<f64> {
    let n = game.strategy_dim();
    let mut y = vec![0.0; game.profile_dim()];
    for (i, p) in game.players().iter().enumerate() {
        sample_in_box(&p.bounds, rng, &mut y[i * n..(i + 1) * n]);
    }
    y
}

fn fd_step(y: &[f64]) -> f64 {
    1e-4 * y.iter().fold(1.0f64, |a, v| a.max(v.abs()))
}

/// Jacobian of `F` if it is constant at three probe points, `None`
/// otherwise.
pub fn affine_jacobian(game: &GameSpec, seed: u64) -> Option<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a771);
    let probes: Vec<Vec<f64>> = (0..3).map(|_| sample_profile(game, &mut rng)).collect();
    let jacs: Vec<DMatrix<f64>> = probes.iter().map(|y| game.pseudo_jacobian_fd(y, fd_step(y))).collect();
    let scale = jacs[0].amax().max(1.0);
    let constant = jacs[1..].iter().all(|j| (j - &jacs[0]).amax() <= 1e-6 * scale);
    if constant {
        // average reduces roundoff
        Some((&jacs[0] + &jacs[1] + &jacs[2]) / 3.0)
    } else {
        None
    }
}

/// Estimates `(omega, theta)`: exactly from the Jacobian when `F` is affine,
/// otherwise by sampling `samples` random pairs in the strategy space.
pub fn estimate_monotonicity(game: &GameSpec, samples: usize, seed: u64) -> MonotonicityEstimate {
    match affine_jacobian(game, seed) {
        Some(m) => exact_monotonicity(&m),
        None => sampled_monotonicity(game, samples, seed),
    }
}

/// `omega = lambda_min((M + M^T)/2)`, `theta = ||M||`.
pub fn exact_monotonicity(m: &DMatrix<f64>) -> MonotonicityEstimate {
    let sym = (m + m.transpose()) * 0.5;
    let omega = sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    let theta = spectral_norm(m);
    let warning = (omega <= 0.0).then(|| format!("pseudo-gradient is not strongly monotone (omega = {omega})"));
    MonotonicityEstimate { omega, theta, method: MonotonicityMethod::JacobianExact, warning }
}

/// Sampled pairwise bounds, ignoring affinity.
pub fn sampled_monotonicity(game: &GameSpec, samples: usize, seed: u64) -> MonotonicityEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = f64::INFINITY;
    let mut theta: f64 = 0.0;
    for _ in 0..samples.max(2) {
        let a = sample_profile(game, &mut rng);
        let b = sample_profile(game, &mut rng);
        let dy = DVector::from_vec(a.iter().zip(&b).map(|(x, y)| x - y).collect());
        let dn2 = dy.norm_squared();
        if dn2 < 1e-24 {
            continue;
        }
        let df = game.pseudo_gradient_unchecked(&a) - game.pseudo_gradient_unchecked(&b);
        omega = omega.min(df.dot(&dy) / dn2);
        theta = theta.max(df.norm() / dn2.sqrt());
    }
    let warning = (omega <= 0.0).then(|| format!("sampled omega = {omega} is not positive"));
    MonotonicityEstimate { omega, theta, method: MonotonicityMethod::Sampled, warning }
}

/// Equilibrium found by [`oracle_gne`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub step: f64,
    /// Distance to the direct linear KKT solve when that applies.
    pub cross_check: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Step `gamma`; `None` picks `omega / (theta + ||A||)^2`, capped at
    /// `0.5 / (theta + ||A||)`.
    pub step: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { step: None, max_iter: 1_000_000, tol: 1e-12, seed: 0 }
    }
}

/// Natural KKT residual `||y - P(y - F - A^T mu)|| + ||A y - d||`.
fn natural_residual(game: &GameSpec, a: &DMatrix<f64>, d: &DVector<f64>, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let g = game.pseudo_gradient_unchecked(y.as_slice()) + a.transpose() * mu;
    let p = game.project_profile((y - g).as_slice());
    (y - p).norm() + (a * y - d).norm()
}

/// Solves the equilibrium conditions `y = P(y - F(y) - A^T mu)`, `A y = d`
/// by projected extragradient iteration on `(y, mu)`.
pub fn oracle_gne(game: &GameSpec) -> Result<OracleSolution, OracleError> {
    oracle_gne_with(game, &OracleOptions::default())
}

pub fn oracle_gne_with(game: &GameSpec, opts: &OracleOptions) -> Result<OracleSolution, OracleError> {
    let a = game.coupling_matrix();
    let d = game.total_demand();
    let affine = affine_jacobian(game, opts.seed);
    let mono = match &affine {
        Some(m) => exact_monotonicity(m),
        None => sampled_monotonicity(game, 500, opts.seed),
    };
    if mono.omega <= 0.0 {
        return Err(OracleError::Assumption(format!("pseudo-gradient not strongly monotone (omega = {})", mono.omega)));
    }
    let a_norm = spectral_norm(&a);
    let lip = mono.theta + a_norm;
    // extragradient additionally needs gamma below 1 / lip
    let gamma = opts.step.unwrap_or((1.9 * mono.omega / (lip * lip)).min(0.5 / lip));

    // start from the projection of the box centres
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut y = DVector::from_vec(sample_profile(game, &mut rng));
    let n = game.strategy_dim();
    for (i, p) in game.players().iter().enumerate() {
        for j in 0..n {
            let (lo, hi) = (p.bounds.lower()[j], p.bounds.upper()[j]);
            if lo.is_finite() && hi.is_finite() && hi - lo < 1e6 {
                y[i * n + j] = 0.5 * (lo + hi);
            }
        }
    }
    let mut mu = DVector::zeros(game.constraint_dim());
    let at = a.transpose();

    let mut residual = natural_residual(game, &a, &d, &y, &mu);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let tol = opts.tol * y.amax().max(1.0);
        if residual <= tol {
            break;
        }
        let g = game.pseudo_gradient_unchecked(y.as_slice()) + &at * &mu;
        let y_half = game.project_profile((&y - &g * gamma).as_slice());
        let mu_half = &mu + (&a * &y - &d) * gamma;
        let g_half = game.pseudo_gradient_unchecked(y_half.as_slice()) + &at * &mu_half;
        y = game.project_profile((&y - g_half * gamma).as_slice());
        mu += (&a * &y_half - &d) * gamma;
        iterations += 1;
        if iterations % 16 == 0 || iterations == opts.max_iter {
            residual = natural_residual(game, &a, &d, &y, &mu);
            if !residual.is_finite() {
                return Err(OracleError::NotConverged { iterations, residual });
            }
        }
    }
    residual = natural_residual(game, &a, &d, &y, &mu);
    if residual > opts.tol * y.amax().max(1.0) {
        return Err(OracleError::NotConverged { iterations, residual });
    }

    let mut cross_check = None;
    if let Some(m) = affine {
        let interior = game.players().iter().enumerate().all(|(i, p)| {
            (0..n).all(|j| {
                let v = y[i * n + j];
                v > p.bounds.lower()[j] + 1e-9 && v < p.bounds.upper()[j] - 1e-9
            })
        });
        if interior {
            let zero = DVector::zeros(game.profile_dim());
            let q = game.pseudo_gradient_unchecked(zero.as_slice());
            let (y_lin, _) = linear_kkt_solve(&m, &q, &a, &d);
            let diff = (&y_lin - &y).amax();
            if diff > 1e-6 * y.amax().max(1.0) {
                return Err(OracleError::CrossCheck(diff));
            }
            cross_check = Some(diff);
        }
    }

    Ok(OracleSolution {
        y: y.as_slice().to_vec(),
        mu: mu.as_slice().to_vec(),
        iterations,
        residual,
        step: gamma,
        cross_check,
    })
}

/// Direct solve of `[M A^T; A 0] [y; mu] = [-q; d]`. Falls back to the
/// minimum-norm least-squares solution when the system is singular
/// (rank-deficient `A`).
pub fn linear_kkt_solve(
    m: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    d: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let nn = m.nrows();
    let l = a.nrows();
    let mut k = DMatrix::zeros(nn + l, nn + l);
    k.view_mut((0, 0), (nn, nn)).copy_from(m);
    k.view_mut((0, nn), (nn, l)).copy_from(&a.transpose());
    k.view_mut((nn, 0), (l, nn)).copy_from(a);
    let mut rhs = DVector::zeros(nn + l);
    rhs.rows_mut(0, nn).copy_from(&(-q));
    rhs.rows_mut(nn, l).copy_from(d);
    let sol = k
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()) && (&k * s - &rhs).amax() < 1e-9 * rhs.amax().max(1.0))
        .unwrap_or_else(|| k.svd(true, true).solve(&rhs, 1e-10).expect("svd computed with u and v"));
    (sol.rows(0, nn).into_owned(), sol.rows(nn, l).into_owned())
}

/// One inequality of a sufficient condition, oriented so that a positive
/// `slack` means satisfied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margin {
    pub id: String,
    pub lhs: f64,
    pub relation: &'static str,
    pub rhs: f64,
    pub slack: f64,
}

impl Margin {
    pub fn less(id: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { id: id.into(), lhs, relation: "<", rhs, slack: rhs - lhs }
    }

    pub fn greater(id: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { id: id.into(), lhs, relation: ">", rhs, slack: lhs - rhs }
    }

    pub fn holds(&self) -> bool {
        self.slack > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub satisfied: bool,
    pub margins: Vec<Margin>,
    pub searched_a1: Option<f64>,
    /// A search failed to produce a certificate; not a disproof.
    pub inconclusive: bool,
    pub notes: Vec<String>,
}

impl ConditionReport {
    fn from_margins(margins: Vec<Margin>, searched_a1: Option<f64>, inconclusive: bool, notes: Vec<String>) -> Self {
        let satisfied = margins.iter().all(Margin::holds);
        Self { satisfied, margins, searched_a1, inconclusive, notes }
    }

    pub fn margin(&self, id: &str) -> Option<&Margin> {
        self.margins.iter().find(|m| m.id == id)
    }
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "satisfied = {}", self.satisfied)?;
        if let Some(a1) = self.searched_a1 {
            writeln!(f, "searched_a1 = {a1}")?;
        }
        if self.inconclusive {
            writeln!(f, "inconclusive = true")?;
        }
        for m in &self.margins {
            writeln!(
                f,
                "{:<28} {:>14.6e} {} {:<14.6e} slack {:+.6e} [{}]",
                m.id,
                m.lhs,
                m.relation,
                m.rhs,
                m.slack,
                if m.holds() { "ok" } else { "VIOLATED" }
            )?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}

/// Lower bound on the smallest damping gain for a Lyapunov weight `a1`:
/// `(a1 + 1) / sqrt(6 a1 / 5)`.
pub fn damping_gain_bound(a1: f64) -> f64 {
    (a1 + 1.0) / (6.0 * a1 / 5.0).sqrt()
}

/// `100` log-spaced values in `[0.1, 10]`.
pub fn a1_grid() -> Vec<f64> {
    (0..100).map(|k| 10f64.powf(-1.0 + 2.0 * k as f64 / 99.0)).collect()
}

/// Sufficient conditions for the double-integrator rule:
/// `k_max < 3 k_min`, `k_min > (a1 + 1)/sqrt(6 a1/5)`,
/// `||A||^2 < k_min (2 omega - theta^2) - 2 k_max`,
/// `alpha > (k_min ||A||^2 + 2) / lambda2`,
/// with `a1` grid-searched and `||A||` the norm of `blk{A_1..A_N}`.
pub fn check_double_integrator_conditions(
    spectral: &SpectralSummary,
    game: &GameSpec,
    gains: &[f64],
    params: &RuleParams,
    mono: &MonotonicityEstimate,
) -> ConditionReport {
    let k_min = gains.iter().copied().fold(f64::INFINITY, f64::min);
    let k_max = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a_norm = game.block_coupling_norm();
    let a_sq = a_norm * a_norm;
    let lambda2 = spectral.lambda2;

    let (best_a1, best_bound) = a1_grid()
        .into_iter()
        .map(|a1| (a1, damping_gain_bound(a1)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty grid");

    let mut notes = Vec::new();
    let alpha_bound = if lambda2 > 0.0 {
        (k_min * a_sq + 2.0) / lambda2
    } else {
        notes.push("lambda2 is not positive; the multiplier gain bound is unattainable".into());
        f64::INFINITY
    };
    let margins = vec![
        Margin::less("k_max_lt_3k_min", k_max, 3.0 * k_min),
        Margin::greater("k_min_gt_a1_bound", k_min, best_bound),
        Margin::less("coupling_norm_sq_lt", a_sq, k_min * (2.0 * mono.omega - mono.theta * mono.theta) - 2.0 * k_max),
        Margin::greater("alpha_gt", params.alpha, alpha_bound),
    ];
    if 2.0 * mono.omega - mono.theta * mono.theta <= 2.0 {
        notes.push(format!(
            "2 omega - theta^2 = {:.6} <= 2, so the coupling-norm inequality cannot hold for any gains",
            2.0 * mono.omega - mono.theta * mono.theta
        ));
    }
    ConditionReport::from_margins(margins, Some(best_a1), false, notes)
}

/// Multiplier gain bound of the chain rule: `(4 + ||A||^2) / (2 lambda2)`.
pub fn chain_alpha_bound(coupling_norm: f64, lambda2: f64) -> f64 {
    (4.0 + coupling_norm * coupling_norm) / (2.0 * lambda2)
}

/// `G(j w) = C (j w I - H)^{-1} B` for the chain output `C = e_1^T` and
/// input `B = e_r`.
pub fn chain_frequency_response(h: &DMatrix<f64>, omega: f64) -> Complex64 {
    let r = h.nrows();
    let mut m = DMatrix::<Complex64>::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            m[(i, j)] = Complex64::new(-h[(i, j)], 0.0);
        }
        m[(i, i)] += Complex64::new(0.0, omega);
    }
    let mut b = nalgebra::DVector::<Complex64>::zeros(r);
    b[r - 1] = Complex64::new(1.0, 0.0);
    let x = m.lu().solve(&b).unwrap_or_else(|| nalgebra::DVector::from_element(r, Complex64::new(f64::NAN, 0.0)));
    x[0]
}

/// Log grid of `count` frequencies in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..count).map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64)).collect()
}

/// Solves `X^T P + P X = -Q` for symmetric `P`.
pub fn solve_lyapunov(x: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let r = x.nrows();
    let id = DMatrix::<f64>::identity(r, r);
    let xt = x.transpose();
    let op = id.kronecker(&xt) + xt.kronecker(&id);
    let rhs = DVector::from_iterator(r * r, (-q).iter().copied());
    let v = op.lu().solve(&rhs)?;
    let p = DMatrix::from_column_slice(r, r, v.as_slice());
    Some((&p + p.transpose()) * 0.5)
}

/// Largest real part among the non-conserved modes of the unforced
/// estimator `eta' = -eta - L eta - L w`, `w' = L eta` (unit time scale).
/// Negative means the estimator tracks exponentially; on some directed
/// graphs it is positive.
pub fn estimator_abscissa(graph: &Digraph) -> f64 {
    let l = graph.laplacian();
    let n = l.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-DMatrix::<f64>::identity(n, n) - &l));
    m.view_mut((0, n), (n, n)).copy_from(&(-&l));
    m.view_mut((n, 0), (n, n)).copy_from(&l);
    m.complex_eigenvalues()
        .iter()
        .filter(|c| c.norm() > 1e-9)
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Best storage matrix found by the grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StorageCandidate {
    pub epsilon: f64,
    pub rho: f64,
    pub lambda_min: f64,
    pub output_error: f64,
}

/// Grid search over `(eps, rho)` in `(0, 1]^2` for `P = P^T > 0` with
/// `H^T P + P H + eps P = -rho I` and `P B = C^T`. Returns the candidate
/// with the largest `lambda_min(P)` among those meeting the output
/// constraint, and separately the closest miss.
pub fn storage_search(h: &DMatrix<f64>, grid: usize) -> (Option<StorageCandidate>, Option<StorageCandidate>) {
    let r = h.nrows();
    let id = DMatrix::<f64>::identity(r, r);
    let mut best: Option<StorageCandidate> = None;
    let mut closest: Option<StorageCandidate> = None;
    for ei in 1..=grid {
        let eps = ei as f64 / grid as f64;
        let shifted = h + &id * (0.5 * eps);
        if spectral_abscissa(&shifted) >= 0.0 {
            continue;
        }
        for ri in 1..=grid {
            let rho = ri as f64 / grid as f64;
            let Some(p) = solve_lyapunov(&shifted, &(&id * rho)) else { continue };
            let lambda_min = p.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
            if lambda_min <= 0.0 {
                continue;
            }
            // P B - C^T = last column of P minus e_1
            let mut output_error: f64 = 0.0;
            for i in 0..r {
                let target = if i == 0 { 1.0 } else { 0.0 };
                output_error = output_error.max((p[(i, r - 1)] - target).abs());
            }
            let cand = StorageCandidate { epsilon: eps, rho, lambda_min, output_error };
            if output_error <= 1e-8 && best.is_none_or(|b| lambda_min > b.lambda_min) {
                best = Some(cand);
            }
            if closest.is_none_or(|c| output_error < c.output_error) {
                closest = Some(cand);
            }
        }
    }
    (best, closest)
}

/// Sufficient conditions for the integrator-chain rule: strict positive
/// realness of every agent's `C (sI - H_i)^{-1} B`, a storage matrix from
/// the grid search, and the branch thresholds on `lambda_min(P)` and
/// `alpha`.
pub fn check_chain_conditions(
    agents: &[AgentDynamics],
    game: &GameSpec,
    params: &RuleParams,
    spectral: &SpectralSummary,
    mono: &MonotonicityEstimate,
) -> Result<ConditionReport, DynamicsError> {
    let mut margins = Vec::new();
    let mut notes = Vec::new();
    let mut inconclusive = false;
    let freqs = log_grid(1e-3, 1e3, 200);
    let mut lambda_min_p = f64::INFINITY;

    for (i, agent) in agents.iter().enumerate() {
        let h = agent.closed_loop_matrix().ok_or(DynamicsError::Order(agent.order()))?;
        let abscissa = spectral_abscissa(&h);
        if abscissa >= 0.0 {
            return Err(DynamicsError::NotHurwitz(abscissa));
        }
        margins.push(Margin::less(format!("hurwitz_{i}"), abscissa, 0.0));
        let min_re = freqs
            .iter()
            .map(|&w| chain_frequency_response(&h, w).re)
            .fold(f64::INFINITY, f64::min);
        margins.push(Margin::greater(format!("spr_min_re_{i}"), min_re, 0.0));

        if h.nrows() >= 2 && i == 0 {
            // (P B)_r = P_rr > 0 while (C^T)_r = 0
            notes.push("C B = 0 for chains of order >= 2, so no P > 0 can satisfy P B = C^T exactly".into());
        }
        let (best, closest) = storage_search(&h, 20);
        match best {
            Some(c) => lambda_min_p = lambda_min_p.min(c.lambda_min),
            None => {
                inconclusive = true;
                lambda_min_p = f64::NAN;
                if let Some(c) = closest {
                    notes.push(format!(
                        "agent {i}: no storage matrix met P B = C^T on the grid (closest miss {:.3e} at eps = {}, rho = {})",
                        c.output_error, c.epsilon, c.rho
                    ));
                } else {
                    notes.push(format!("agent {i}: no positive definite storage matrix on the grid"));
                }
            }
        }
    }

    let a_norm = game.block_coupling_norm();
    let a_sq = a_norm * a_norm;
    let branch_one = mono.omega >= a_sq / 2.0;
    let p_threshold = if branch_one { 3.0 } else { 3.0 + 2.0 * a_sq };
    notes.push(format!(
        "branch {} (omega = {:.6}, ||A||^2/2 = {:.6})",
        if branch_one { 1 } else { 2 },
        mono.omega,
        a_sq / 2.0
    ));
    let lmp = if lambda_min_p.is_nan() { f64::NEG_INFINITY } else { lambda_min_p };
    margins.push(Margin::greater("lambda_min_p", lmp, p_threshold));
    let alpha_bound = if spectral.lambda2 > 0.0 {
        chain_alpha_bound(a_norm, spectral.lambda2)
    } else {
        notes.push("lambda2 is not positive; the multiplier gain bound is unattainable".into());
        f64::INFINITY
    };
    margins.push(Margin::greater("alpha_gt", params.alpha, alpha_bound));
    Ok(ConditionReport::from_margins(margins, None, inconclusive, notes))
}
