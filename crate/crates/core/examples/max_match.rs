//! Greedy maximum match between two representations that share part of
//! their span, against the singular-value bound.

use nalgebra::DMatrix;
use repdisc::linalg::{gaussian_matrix, RngStream};
use repdisc::{d_hat, max_match_bound, max_match_greedy, FeatureMatrix};

fn main() -> repdisc::Result<()> {
    let n = 2_000;
    let mut rng = RngStream::new(9, 0);
    let shared = gaussian_matrix(2, n, &mut rng);
    let own_a = gaussian_matrix(2, n, &mut rng);
    let own_b = gaussian_matrix(3, n, &mut rng);

    // z holds two shared directions plus two private ones, z2 the shared pair
    // mixed by a rotation plus three private ones
    let rot = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
    let z = FeatureMatrix::new(concat(&shared, &own_a))?;
    let z2 = FeatureMatrix::new(concat(&(rot * &shared), &own_b))?;

    let sigma = d_hat(&z, &z2)?.sigma;
    println!("sigma {:?}", sigma.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>());
    for eps in [0.0, 0.05, 0.2, 0.5] {
        let m = max_match_greedy(&z, &z2, eps)?;
        println!(
            "eps={eps:<4} greedy {:.3} (rows {} + {}) bound {:.3}",
            m.value,
            m.aux["matched_a"],
            m.aux["matched_b"],
            max_match_bound(&sigma, eps, z.p(), z2.p())?
        );
    }
    Ok(())
}

fn concat(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.rows_mut(0, top.nrows()).copy_from(top);
    m.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    m
}
