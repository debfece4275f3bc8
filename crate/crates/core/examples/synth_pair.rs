//! Generate correlated, independent and random feature pairs and write one
//! of them to disk.

use repdisc::fmat::write_fmat;
use repdisc::linalg::RngStream;
use repdisc::{d_cca, make_spec, sample_joint, SpecKind};

fn main() -> repdisc::Result<()> {
    for kind in [SpecKind::Correlated, SpecKind::Independent, SpecKind::Random] {
        let spec = make_spec(kind, 3, 3, &mut RngStream::new(7, 0))?;
        let (z, z2) = sample_joint(&spec, 10_000, &mut RngStream::new(7, 1))?;
        let sigma: Vec<String> = spec.alignment()?.sigma.iter().map(|s| format!("{s:.3}")).collect();
        println!("{kind:<12} population sigma {sigma:?} sample cca distance {:.4}", d_cca(&z, &z2)?.value);
    }

    let spec = make_spec(SpecKind::Random, 4, 6, &mut RngStream::new(1, 0))?;
    let (z, z2) = sample_joint(&spec, 1_000, &mut RngStream::new(1, 1))?;
    let dir = std::env::temp_dir();
    write_fmat(&z, dir.join("pair_a.fmat"))?;
    write_fmat(&z2, dir.join("pair_b.fmat"))?;
    println!("wrote {} and {}", dir.join("pair_a.fmat").display(), dir.join("pair_b.fmat").display());
    Ok(())
}
