//! Weighted communication digraphs, their Laplacians and the spectral
//! quantities that enter the gain conditions.
//!
//! Convention: `weights[(i, j)] = a_ij > 0` iff agent `i` receives from
//! agent `j`, i.e. the edge `j -> i` exists. The Laplacian is
//! `L = D_in - W`, so every row of `L` sums to zero.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::GraphError;

/// Default tolerance for [`Digraph::is_weight_balanced`].
pub const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    weights: DMatrix<f64>,
}

/// Spectral data of a digraph used by the gain conditions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectralSummary {
    /// Second smallest eigenvalue of `(L + L^T) / 2`.
    pub lambda2: f64,
    /// Spectral norm of `L`.
    pub laplacian_norm: f64,
    pub is_weight_balanced: bool,
    pub is_strongly_connected: bool,
}

impl Digraph {
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        if weights.nrows() == 0 {
            return Err(GraphError::Empty);
        }
        if weights.nrows() != weights.ncols() {
            return Err(GraphError::NotSquare {
                rows: weights.nrows(),
                cols: weights.ncols(),
            });
        }
        for i in 0..weights.nrows() {
            if weights[(i, i)] != 0.0 {
                return Err(GraphError::SelfLoop(i));
            }
            for j in 0..weights.ncols() {
                let a = weights[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(GraphError::BadWeight { from: j, to: i, weight: a });
                }
            }
        }
        Ok(Self { weights })
    }

    /// Builds a digraph from `(from, to, weight)` triples. Repeated edges
    /// accumulate.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if n_nodes == 0 {
            return Err(GraphError::Empty);
        }
        let mut w = DMatrix::zeros(n_nodes, n_nodes);
        for &(from, to, weight) in edges {
            if from >= n_nodes || to >= n_nodes {
                return Err(GraphError::NodeOutOfRange { node: from.max(to), n_nodes });
            }
            if from == to {
                return Err(GraphError::SelfLoop(from));
            }
            if !weight.is_finite() || weight <= 0.0 {
                return Err(GraphError::BadWeight { from, to, weight });
            }
            w[(to, from)] += weight;
        }
        Self::from_weights(w)
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0` with unit weights.
    pub fn directed_cycle(n_nodes: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (0..n_nodes).map(|i| (i, (i + 1) % n_nodes, 1.0)).collect();
        if n_nodes == 1 {
            return Self::from_edges(1, &[]);
        }
        Self::from_edges(n_nodes, &edges)
    }

    /// Complete graph with unit weights in both directions.
    pub fn complete(n_nodes: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for i in 0..n_nodes {
            for j in 0..n_nodes {
                if i != j {
                    edges.push((i, j, 1.0));
                }
            }
        }
        Self::from_edges(n_nodes, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Edge list `(from, to, weight)` in row-major order of the weight matrix.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for to in 0..n {
            for from in 0..n {
                let a = self.weights[(to, from)];
                if a > 0.0 {
                    out.push((from, to, a));
                }
            }
        }
        out
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut l = -self.weights.clone();
        for i in 0..n {
            // Diagonal from the negated off-diagonals so the row sum is
            // computed in the same order it is checked.
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
            l[(i, i)] = -s;
        }
        l
    }

    /// `true` iff every column sum of the Laplacian is within `tol` of zero
    /// (in-weight equals out-weight at every node).
    pub fn is_weight_balanced(&self, tol: f64) -> bool {
        let l = self.laplacian();
        l.column_iter().all(|c| c.sum().abs() <= tol)
    }

    /// Exact reachability check on positive-weight edges.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.n_nodes();
        let forward = self.reachable_from(0, false);
        let backward = self.reachable_from(0, true);
        forward.iter().filter(|&&r| r).count() == n && backward.iter().filter(|&&r| r).count() == n
    }

    fn reachable_from(&self, start: usize, reverse: bool) -> Vec<bool> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                // edge u -> v is stored at (v, u)
                let a = if reverse { self.weights[(u, v)] } else { self.weights[(v, u)] };
                if a > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn spectral_summary(&self) -> SpectralSummary {
        let l = self.laplacian();
        let eig = symmetrized_eigenvalues(&l);
        // A single node has no second eigenvalue; report zero.
        let lambda2 = eig.get(1).copied().unwrap_or(0.0).max(0.0);
        let laplacian_norm = spectral_norm(&l);
        SpectralSummary {
            lambda2,
            laplacian_norm,
            is_weight_balanced: self.is_weight_balanced(BALANCE_TOL),
            is_strongly_connected: self.is_strongly_connected(),
        }
    }

    /// Superposition of `n_cycles` random directed Hamiltonian cycles with
    /// weights drawn from `[w_min, w_max]`. Balanced and strongly connected
    /// by construction.
    pub fn random_balanced<R: Rng + ?Sized>(
        n_nodes: usize,
        n_cycles: usize,
        w_min: f64,
        w_max: f64,
        rng: &mut R,
    ) -> Result<Self, GraphError> {
        if n_nodes < 2 {
            return Self::from_edges(n_nodes, &[]);
        }
        let mut edges = Vec::with_capacity(n_nodes * n_cycles.max(1));
        for _ in 0..n_cycles.max(1) {
            let mut order: Vec<usize> = (0..n_nodes).collect();
            order.shuffle(rng);
            let w = rng.random_range(w_min..=w_max);
            for k in 0..n_nodes {
                edges.push((order[k], order[(k + 1) % n_nodes], w));
            }
        }
        Self::from_edges(n_nodes, &edges)
    }
}

/// Ascending eigenvalues of `(L + L^T) / 2`.
pub fn symmetrized_eigenvalues(l: &DMatrix<f64>) -> Vec<f64> {
    let sym = (l + l.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}
