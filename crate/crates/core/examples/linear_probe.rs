//! Fit linear and logistic heads on frozen features and evaluate them on
//! held-out samples.

use repdisc::linalg::RngStream;
use repdisc::probes::{
    accuracy, fit_linear_head, fit_logistic_head, predict_classes, predict_linear, LogisticConfig,
};
use repdisc::synth::{TaskBuilder, Whitening};
use repdisc::{make_spec, sample_joint, ClassLabels, SpecKind, TaskVector};

fn main() -> repdisc::Result<()> {
    let mut rng = RngStream::new(3, 0);
    let spec = make_spec(SpecKind::Random, 5, 5, &mut rng)?;
    let (z, z2) = sample_joint(&spec, 4_000, &mut rng)?;
    let train: Vec<usize> = (0..3_000).collect();
    let test: Vec<usize> = (3_000..4_000).collect();

    let alpha = nalgebra::DVector::from_element(5, 0.4);
    let y = TaskBuilder::new(&z, &z2, Whitening::Population(&spec))?.task(&alpha, &alpha)?;
    let pick = |idx: &[usize]| TaskVector::from_slice(&idx.iter().map(|&i| y.values()[i]).collect::<Vec<_>>());
    let (y_train, y_test) = (pick(&train)?, pick(&test)?);

    let head = fit_linear_head(&z.select_samples(&train)?, &y_train)?;
    let pred = predict_linear(&head, &z.select_samples(&test)?)?;
    let mse = (pred - y_test.values()).norm_squared() / test.len() as f64;
    println!("linear head weights {:?}", head.w.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());
    println!("held-out mean squared error {mse:.4}");

    let to_class = |t: &TaskVector| t.values().iter().map(|&v| u32::from(v > 0.0)).collect::<Vec<_>>();
    let train_labels = ClassLabels::new(to_class(&y_train), 2)?;
    let test_labels = ClassLabels::new(to_class(&y_test), 2)?;
    let cfg = LogisticConfig { max_iters: 500, ..LogisticConfig::default() };
    let logit = fit_logistic_head(&z.select_samples(&train)?, &train_labels, cfg)?;
    let acc = accuracy(&predict_classes(&logit, &z.select_samples(&test)?)?, &test_labels);
    println!(
        "logistic head: {} iterations, converged={}, held-out accuracy {acc:.3}",
        logit.iterations, logit.converged
    );
    Ok(())
}
