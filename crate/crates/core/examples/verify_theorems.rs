//! Run each Monte Carlo check once at a modest size and print the reports.

use nalgebra::DVector;
use repdisc::linalg::RngStream;
use repdisc::verify::{
    verify_ball_moment, verify_cka, verify_invariance, verify_thm1, verify_thm2, verify_thm3,
};
use repdisc::{make_spec, sample_joint, SpecKind, TaskVector};

fn main() -> repdisc::Result<()> {
    let spec = make_spec(SpecKind::Random, 3, 3, &mut RngStream::new(5, 0))?;
    let alpha = DVector::from_vec(vec![0.6, 0.8, 0.0]);
    let alpha2 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let (z, z2) = sample_joint(&spec, 1_000, &mut RngStream::new(5, 1))?;
    let y = TaskVector::new(z.data().row(0).transpose())?;

    let reports = [
        verify_thm1(&spec, &alpha, &alpha2, 20_000, 10, 1)?,
        verify_thm2(&spec, 20_000, 10, 1)?,
        verify_thm3(&z, &z2, 20_000, 1)?,
        verify_ball_moment(8, 200_000, 1)?,
        verify_cka(&spec, 20_000, 10, 1)?,
        verify_invariance(&z, &z2, &y, 20, 1, 1e-8)?,
    ];
    for r in &reports {
        println!(
            "{:<10} theory {:>8.5} mean {:>8.5} stderr {:.1e} rule {:<22} {}",
            r.theorem,
            r.theoretical,
            r.empirical_mean,
            r.empirical_stderr,
            r.tolerance_rule,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    println!("{}", serde_json::to_string_pretty(&reports[3]).expect("report serializes"));
    Ok(())
}
