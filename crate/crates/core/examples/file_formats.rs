//! Write a feature matrix and labels to FMAT/LBL1, read them back, and
//! import the same features from CSV.

use repdisc::fmat::{encode_fmat, parse_csv_features, read_fmat, read_labels, write_fmat, write_labels};
use repdisc::{ClassLabels, FeatureMatrix, Labels};

fn main() -> repdisc::Result<()> {
    let dir = std::env::temp_dir().join("repdisc-file-formats");
    std::fs::create_dir_all(&dir)?;

    let z = FeatureMatrix::from_rows(&[&[1.0, 0.0, -1.0, 2.0], &[0.5, 0.5, -2.0, 1.0]])?;
    let path = dir.join("features.fmat");
    write_fmat(&z, &path)?;
    println!("{} bytes on disk ({} header)", encode_fmat(&z).len(), repdisc::fmat::FMAT_HEADER_LEN);

    let back = read_fmat(&path)?;
    println!("read back p={} n={} centered={} name={:?}", back.p(), back.n(), back.centered(), back.name());
    assert_eq!(back.data(), z.data());

    let labels = Labels::Classes(ClassLabels::new(vec![0, 1, 1, 2], 3)?);
    let lpath = dir.join("labels.lbl");
    write_labels(&labels, &lpath)?;
    if let Labels::Classes(c) = read_labels(&lpath)? {
        println!("labels {:?} with K={}", c.labels(), c.num_classes());
    }

    // CSV rows are samples, columns are dimensions
    let csv = parse_csv_features("1,0.5\n0,0.5\n-1,-2\n2,1\n")?;
    assert_eq!(csv.data(), z.data());
    println!("CSV import matches the FMAT matrix");

    match repdisc::fmat::decode_fmat(b"FMAT\x02") {
        Err(e) => println!("corrupt input is rejected: {} ({e})", e.name()),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
