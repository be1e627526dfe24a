//! Solves a small game with a shared constraint two ways: by the
//! projected extragradient oracle and by the direct KKT linear solve.

use gne_seek::analysis::{affine_jacobian, linear_kkt_solve, oracle_gne};
use gne_seek::game::{quadratic_game, BoxSet, CouplingBlock};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};

fn main() {
    // J_1 = y_1^2 + 0.5 y_1 y_2 - 4 y_1,  J_2 = 0.75 y_2^2 + 0.5 y_1 y_2,
    // subject to y_1 + y_2 = 3
    let m = dmatrix![2.0, 0.5; 0.5, 1.5];
    let q = dvector![-4.0, 0.0];
    let coupling = |d: f64| CouplingBlock::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, d)).unwrap();
    let game = quadratic_game(&m, &q, 1, vec![coupling(1.5), coupling(1.5)], vec![BoxSet::uniform(1, -10.0, 10.0).unwrap(); 2])
        .unwrap();

    let sol = oracle_gne(&game).unwrap();
    println!("oracle: y* = {:?}, mu* = {:?}", sol.y, sol.mu);
    println!("        {} iterations, residual {:.2e}, step {:.4}", sol.iterations, sol.residual, sol.step);

    let jac = affine_jacobian(&game, 0).expect("affine game");
    let (y, mu) = linear_kkt_solve(&jac, &q, &game.coupling_matrix(), &game.total_demand());
    println!("direct: y* = {:?}, mu* = {:?}", y.as_slice(), mu.as_slice());
    println!("agreement {:.2e}", sol.cross_check.unwrap());

    // tighten player 0's box so the solution moves to the boundary
    let game = quadratic_game(&m, &q, 1, vec![coupling(1.5), coupling(1.5)], vec![
        BoxSet::uniform(1, -10.0, 1.0).unwrap(),
        BoxSet::uniform(1, -10.0, 10.0).unwrap(),
    ])
    .unwrap();
    let sol = oracle_gne(&game).unwrap();
    println!("\nwith y_0 <= 1: y* = {:?}, mu* = {:?}", sol.y, sol.mu);
}
