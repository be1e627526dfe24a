#![allow(dead_code)]

use gne_seek::config::GameConfig;
use gne_seek::scenarios::formation_offset;
use gne_seek::{GameSpec, ScenarioConfig};
use nalgebra::{DMatrix, DVector};

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Affine data `(M, q, A, d)` of a quadratic scenario, read straight from
/// the config rather than from the built game.
pub fn quadratic_data(cfg: &ScenarioConfig) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let GameConfig::Quadratic { strategy_dim: n, matrix, offset, coupling, demand, .. } = &cfg.game else {
        panic!("not a quadratic scenario");
    };
    let dim = offset.len();
    let big_n = dim / n;
    let m = DMatrix::from_fn(dim, dim, |r, c| matrix[r][c]);
    let q = DVector::from_column_slice(offset);
    let l = coupling.first().map_or(0, Vec::len);
    let a = DMatrix::from_fn(l, dim, |r, c| coupling[c / n][r][c % n]);
    let d = DVector::from_fn(l, |r, _| (0..big_n).map(|i| demand[i][r]).sum());
    (m, q, a, d)
}

/// Interior equilibrium of `M y + q + A^T mu = 0`, `A y = d` by a dense LU
/// solve of the saddle system.
pub fn saddle_solve(m: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>, d: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let (k, l) = (m.nrows(), a.nrows());
    let mut big = DMatrix::zeros(k + l, k + l);
    big.view_mut((0, 0), (k, k)).copy_from(m);
    big.view_mut((0, k), (k, l)).copy_from(&a.transpose());
    big.view_mut((k, 0), (l, k)).copy_from(a);
    let mut rhs = DVector::zeros(k + l);
    rhs.rows_mut(0, k).copy_from(&(-q));
    rhs.rows_mut(k, l).copy_from(d);
    let sol = big.lu().solve(&rhs).expect("nonsingular saddle system");
    (sol.rows(0, k).iter().copied().collect(), sol.rows(k, l).iter().copied().collect())
}

pub fn quadratic_equilibrium(cfg: &ScenarioConfig) -> (Vec<f64>, Vec<f64>) {
    let (m, q, a, d) = quadratic_data(cfg);
    saddle_solve(&m, &q, &a, &d)
}

/// Equilibrium of the generator game by bisection on the common price
/// multiplier. With the demand constraint active the aggregate is fixed at
/// `S = sum d`, so each player's first-order condition
/// `beta + 2 xi y + a y - (p0 - a S) + mu = 0` gives `y_i(mu)` in closed form
/// (clipped to its box), and `sum_i y_i(mu) = S` is monotone in `mu`.
pub fn der_equilibrium(cfg: &ScenarioConfig) -> (Vec<f64>, f64) {
    let GameConfig::Der { base_price, price_slope, beta, xi, demand, lower, upper, .. } = &cfg.game else {
        panic!("not a generator scenario");
    };
    let total: f64 = demand.iter().sum();
    let a = *price_slope;
    let powers = |mu: f64| -> Vec<f64> {
        (0..beta.len())
            .map(|i| ((base_price - a * total - beta[i] - mu) / (2.0 * xi[i] + a)).clamp(lower[i], upper[i]))
            .collect()
    };
    let (mut lo, mut hi) = (-1e4, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if powers(mid).iter().sum::<f64>() > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    (powers(mu), mu)
}

/// Formation equilibrium `y_i = h_i + Q` (the offsets have zero mean), and
/// the minimum-norm multiplier solving `A^T mu = -F(y*)` with
/// `F(y*) = 2 (y* - Q) = 2 h`.
pub fn formation_equilibrium(game: &GameSpec) -> (Vec<f64>, Vec<f64>) {
    let q = [1.0, 2.0];
    let y: Vec<f64> = (0..5).flat_map(|i| {
        let h = formation_offset(i);
        [h[0] + q[0], h[1] + q[1]]
    }).collect();
    let f = game.pseudo_gradient(&y).unwrap();
    let a = game.coupling_matrix();
    let mu = a.transpose().svd(true, true).solve(&(-f), 1e-12).unwrap();
    (y, mu.iter().copied().collect())
}

/// `sum_i z_i` for every recorded state.
pub fn z_sums(cl: &gne_seek::ClosedLoop, states: &[Vec<f64>]) -> Vec<f64> {
    let l = cl.game().constraint_dim();
    let range = cl.layout().z_all();
    states
        .iter()
        .map(|s| {
            let z = &s[range.clone()];
            (0..l).map(|k| z.iter().skip(k).step_by(l.max(1)).sum::<f64>().abs()).fold(0.0, f64::max)
        })
        .collect()
}
