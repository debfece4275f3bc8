//! Singular spectrum of the alignment matrix and the limits derived from it.

use repdisc::linalg::RngStream;
use repdisc::spectral::{
    expected_td_over_tasks, r2_from_spectrum, repset_numeric, td_limit_repset, td_limit_restricted,
};
use repdisc::{d_hat, make_spec, sample_joint, SpecKind};

fn main() -> repdisc::Result<()> {
    let mut rng = RngStream::new(11, 0);
    let spec = make_spec(SpecKind::Random, 4, 4, &mut rng)?;
    let population = spec.alignment()?;
    println!("population sigma {:?}", round(&population.sigma));

    for n in [200, 2_000, 20_000, 200_000] {
        let (z, z2) = sample_joint(&spec, n, &mut rng)?;
        let s = d_hat(&z, &z2)?;
        println!("n={n:>6} sigma {:?} repset limit {:.4}", round(&s.sigma), td_limit_repset(&s).value);
    }

    println!("population repset limit {:.4}", td_limit_repset(&population).value);
    for r in 1..=population.p() {
        println!("  restricted to first {r} directions: {:.4}", td_limit_restricted(&population, r)?);
    }
    let r2 = r2_from_spectrum(&population);
    println!("mean TD over ball tasks {:.4} (R^2 = {r2:.4})", expected_td_over_tasks(4, r2));

    // the closed form needs p = p'; the numeric search covers an extra dimension
    let sigma = [0.3, 0.2];
    println!("p=2 p'=3 sigma {sigma:?}: numeric sup {:.4}", repset_numeric(&sigma, 3));
    Ok(())
}

fn round(v: &[f64]) -> Vec<String> {
    v.iter().map(|s| format!("{s:.3}")).collect()
}
