//! Every similarity metric on a pair of synthetic representations.

use repdisc::linalg::RngStream;
use repdisc::probes::{td_generic, DistanceKind, HeadKind, LogisticConfig};
use repdisc::synth::{TaskBuilder, Whitening};
use repdisc::{
    d_cca, d_cka, make_spec, max_match_greedy, sample_joint, td_linear, ClassLabels, Labels, SpecKind,
};

fn main() -> repdisc::Result<()> {
    let mut rng = RngStream::new(42, 0);
    let spec = make_spec(SpecKind::Random, 4, 6, &mut rng)?;
    let (z, z2) = sample_joint(&spec, 5_000, &mut rng)?;

    let alpha = nalgebra::DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
    let alpha2 = nalgebra::DVector::zeros(6);
    let y = TaskBuilder::new(&z, &z2, Whitening::Empirical)?.task(&alpha, &alpha2)?;

    println!("td (linear probe)  {:.4}", td_linear(&z, &z2, &y)?.value);
    let cca = d_cca(&z, &z2)?;
    println!("cca distance       {:.4} (mean squared correlation {:.4})", cca.value, cca.aux["r2"]);
    println!("cka distance       {:.4}", d_cka(&z, &z2)?.value);
    for eps in [0.1, 0.5, 0.9] {
        println!("max match eps={eps}  {:.4}", max_match_greedy(&z, &z2, eps)?.value);
    }

    // threshold the same task into two classes for the classification variants
    let classes: Vec<u32> = y.values().iter().map(|&v| u32::from(v > 0.0)).collect();
    let labels = Labels::Classes(ClassLabels::new(classes, 2)?);
    let head = HeadKind::Logistic(LogisticConfig::default());
    let hard = td_generic(&z, &z2, &labels, None, head, DistanceKind::Hard)?;
    let soft = td_generic(&z, &z2, &labels, None, head, DistanceKind::Soft)?;
    println!("td_cls             {hard:.4}");
    println!("td_soft            {soft:.4}");
    Ok(())
}
