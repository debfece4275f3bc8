//! Monte Carlo checks of the asymptotic and in-expectation identities.
//!
//! Each check returns a [`VerifyReport`]. Trials are independent and keyed
//! by `(seed, trial_index)` streams, so they run in parallel while the
//! reduction stays in trial order and reports are reproducible bit for bit.

use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fmat::{FeatureMatrix, TaskVector};
use crate::linalg::{random_unitary, sample_unit_ball, RngStream};
use crate::metrics::{d_cca, d_cka, td_linear, LinearTdPlan};
use crate::spectral::{
    cka_expectation, d_hat, expected_td_over_tasks_general, population_alignment,
    td_limit_for_matrix, td_limit_repset,
};
use crate::synth::{sample_joint, JointGaussianSpec, TaskBuilder, Whitening};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub theorem: String,
    pub theoretical: f64,
    pub empirical_mean: f64,
    pub empirical_stderr: f64,
    pub trials: usize,
    pub n: usize,
    pub seed: u64,
    pub pass: bool,
    pub tolerance_rule: String,
}

/// How the allowed gap `|empirical_mean − theoretical|` is computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToleranceRule {
    /// `max(k · stderr, floor)`.
    Stderr { k: f64, floor: f64 },
    /// A fixed absolute bound.
    Absolute(f64),
}

impl ToleranceRule {
    pub fn tolerance(&self, stderr: f64) -> f64 {
        match *self {
            ToleranceRule::Stderr { k, floor } => (k * stderr).max(floor),
            ToleranceRule::Absolute(tol) => tol,
        }
    }

    /// Parses the textual form written into reports.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("max(").and_then(|r| r.strip_suffix(')')) {
            let (lhs, floor) = inner.split_once(',')?;
            let k = lhs.trim().strip_suffix("*stderr")?.trim().parse().ok()?;
            return Some(ToleranceRule::Stderr {
                k,
                floor: floor.trim().parse().ok()?,
            });
        }
        if let Some(k) = s.strip_suffix("*stderr") {
            return Some(ToleranceRule::Stderr {
                k: k.trim().parse().ok()?,
                floor: 0.0,
            });
        }
        s.strip_prefix("abs(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|v| v.trim().parse().ok())
            .map(ToleranceRule::Absolute)
    }
}

impl fmt::Display for ToleranceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToleranceRule::Stderr { k, floor } if *floor == 0.0 => write!(f, "{k}*stderr"),
            ToleranceRule::Stderr { k, floor } => write!(f, "max({k}*stderr, {floor:e})"),
            ToleranceRule::Absolute(tol) => write!(f, "abs({tol:e})"),
        }
    }
}

pub const THM1_RULE: ToleranceRule = ToleranceRule::Stderr { k: 3.0, floor: 0.05 };
pub const THM2_RULE: ToleranceRule = ToleranceRule::Stderr { k: 3.0, floor: 0.05 };
/// Exact identity; the floor only absorbs round-off when both sides are 0.
pub const THM3_RULE: ToleranceRule = ToleranceRule::Stderr { k: 4.0, floor: 1e-12 };
pub const BALL_RULE: ToleranceRule = ToleranceRule::Stderr { k: 4.0, floor: 0.0 };
pub const CKA_RULE: ToleranceRule = ToleranceRule::Stderr { k: 5.0, floor: 0.02 };
pub const INVARIANCE_REL_TOL: f64 = 1e-8;

impl VerifyReport {
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        theorem: &str,
        theoretical: f64,
        empirical_mean: f64,
        empirical_stderr: f64,
        trials: usize,
        n: usize,
        seed: u64,
        rule: ToleranceRule,
    ) -> Self {
        let pass = (empirical_mean - theoretical).abs() <= rule.tolerance(empirical_stderr);
        Self {
            theorem: theorem.to_string(),
            theoretical,
            empirical_mean,
            empirical_stderr,
            trials,
            n,
            seed,
            pass,
            tolerance_rule: rule.to_string(),
        }
    }

    /// Recomputes the pass decision from the serialized fields alone.
    pub fn recheck(&self) -> Option<bool> {
        let rule = ToleranceRule::parse(&self.tolerance_rule)?;
        Some((self.empirical_mean - self.theoretical).abs() <= rule.tolerance(self.empirical_stderr))
    }
}

/// Sample mean and standard error of the mean, summed in slice order.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs `trial(rng)` for each index on its own stream; results in index order.
fn run_trials<F>(seed: u64, stream: u64, trials: usize, trial: F) -> Result<Vec<f64>>
where
    F: Fn(&mut RngStream) -> Result<f64> + Sync,
{
    let base = RngStream::new(seed, stream);
    (0..trials)
        .into_par_iter()
        .map(|t| trial(&mut base.child(t as u64)))
        .collect()
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    Ok(())
}

/// Empirical linear TD on population-whitened tasks against the
/// single-task limit.
pub fn verify_thm1(
    spec: &JointGaussianSpec,
    alpha: &DVector<f64>,
    alpha2: &DVector<f64>,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<VerifyReport> {
    check_trials(trials)?;
    let d = population_alignment(spec.a(), spec.b(), spec.c())?;
    let theoretical = td_limit_for_matrix(&d, alpha, alpha2)?;
    let values = run_trials(seed, 1, trials, |rng| {
        let (z, z2) = sample_joint(spec, n, rng)?;
        let y = TaskBuilder::new(&z, &z2, Whitening::Population(spec))?.task(alpha, alpha2)?;
        Ok(td_linear(&z, &z2, &y)?.value)
    })?;
    let (mean, se) = mean_and_stderr(&values);
    Ok(VerifyReport::evaluate("thm1", theoretical, mean, se, trials, n, seed, THM1_RULE))
}

/// Representative-set limit of the empirical alignment against the population one.
pub fn verify_thm2(spec: &JointGaussianSpec, n: usize, trials: usize, seed: u64) -> Result<VerifyReport> {
    check_trials(trials)?;
    let theoretical = td_limit_repset(&spec.alignment()?).value;
    let values = run_trials(seed, 2, trials, |rng| {
        let (z, z2) = sample_joint(spec, n, rng)?;
        Ok(td_limit_repset(&d_hat(&z, &z2)?).value)
    })?;
    let (mean, se) = mean_and_stderr(&values);
    Ok(VerifyReport::evaluate("thm2", theoretical, mean, se, trials, n, seed, THM2_RULE))
}

/// Mean linear TD over uniform-ball tasks on a fixed pair against the
/// canonical-correlation closed form.
pub fn verify_thm3(z: &FeatureMatrix, z2: &FeatureMatrix, num_tasks: usize, seed: u64) -> Result<VerifyReport> {
    check_trials(num_tasks)?;
    let plan = LinearTdPlan::new(z, z2)?;
    let builder = TaskBuilder::new(z, z2, Whitening::Empirical)?;
    let cca = d_cca(z, z2)?;
    let (p_small, p_large) = (z.p().min(z2.p()), z.p().max(z2.p()));
    let sum_sq = cca.aux["r2"] * p_small as f64;
    let theoretical = expected_td_over_tasks_general(p_small, p_large, sum_sq);
    let (p, p2) = (z.p(), z2.p());
    let values = run_trials(seed, 3, num_tasks, |rng| {
        let alpha = sample_unit_ball(p, rng);
        let alpha2 = sample_unit_ball(p2, rng);
        plan.td(builder.task(&alpha, &alpha2)?.values())
    })?;
    let (mean, se) = mean_and_stderr(&values);
    Ok(VerifyReport::evaluate("thm3", theoretical, mean, se, num_tasks, z.n(), seed, THM3_RULE))
}

const BALL_CHUNK: usize = 8192;

/// Monte Carlo second moment of one coordinate of the uniform unit ball.
pub fn verify_ball_moment(dim: usize, samples: usize, seed: u64) -> Result<VerifyReport> {
    if dim == 0 {
        return Err(shape_err("ball dimension must be at least 1"));
    }
    check_trials(samples)?;
    let base = RngStream::new(seed, 4);
    let chunks = samples.div_ceil(BALL_CHUNK);
    let values: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = base.child(c as u64);
            let len = BALL_CHUNK.min(samples - c * BALL_CHUNK);
            (0..len)
                .map(|_| sample_unit_ball(dim, &mut rng)[0].powi(2))
                .collect::<Vec<_>>()
        })
        .collect();
    let (mean, se) = mean_and_stderr(&values);
    let theoretical = 1.0 / (dim as f64 + 2.0);
    Ok(VerifyReport::evaluate("ball", theoretical, mean, se, samples, dim, seed, BALL_RULE))
}

/// Mean empirical linear CKA against its population expression.
pub fn verify_cka(spec: &JointGaussianSpec, n: usize, trials: usize, seed: u64) -> Result<VerifyReport> {
    check_trials(trials)?;
    let theoretical = cka_expectation(spec.a(), spec.b(), spec.c())?;
    let values = run_trials(seed, 5, trials, |rng| {
        let (z, z2) = sample_joint(spec, n, rng)?;
        Ok(d_cka(&z, &z2)?.aux["s_cka"])
    })?;
    let (mean, se) = mean_and_stderr(&values);
    Ok(VerifyReport::evaluate("cka", theoretical, mean, se, trials, n, seed, CKA_RULE))
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// One random transformation `(β, Q, β′, Q′)`.
#[derive(Debug, Clone)]
pub struct Transform {
    pub beta: f64,
    pub beta2: f64,
    pub q: nalgebra::DMatrix<f64>,
    pub q2: nalgebra::DMatrix<f64>,
}

impl Transform {
    /// Scales log-uniform in `[1e-2, 1e2]`, Haar rotations.
    pub fn random(p: usize, p2: usize, rng: &mut RngStream) -> Self {
        let beta = 10f64.powf(rng.random_range(-2.0..2.0));
        let beta2 = 10f64.powf(rng.random_range(-2.0..2.0));
        Self {
            beta,
            beta2,
            q: random_unitary(p, rng),
            q2: random_unitary(p2, rng),
        }
    }

    pub fn apply(&self, z: &FeatureMatrix, z2: &FeatureMatrix) -> Result<(FeatureMatrix, FeatureMatrix)> {
        Ok((
            FeatureMatrix::new(&self.q * z.data() * self.beta)?,
            FeatureMatrix::new(&self.q2 * z2.data() * self.beta2)?,
        ))
    }
}

/// Largest relative change of linear TD, CCA and CKA distances under `t`.
pub fn invariance_gap(z: &FeatureMatrix, z2: &FeatureMatrix, y: &TaskVector, t: &Transform) -> Result<f64> {
    let (tz, tz2) = t.apply(z, z2)?;
    let gaps = [
        relative_gap(td_linear(z, z2, y)?.value, td_linear(&tz, &tz2, y)?.value),
        relative_gap(d_cca(z, z2)?.value, d_cca(&tz, &tz2)?.value),
        relative_gap(d_cka(z, z2)?.value, d_cka(&tz, &tz2)?.value),
    ];
    Ok(gaps.into_iter().fold(0.0, f64::max))
}

/// Random scaling/rotation trials. `empirical_mean` holds the largest
/// relative deviation seen and must not exceed `rel_tol`.
pub fn verify_invariance(
    z: &FeatureMatrix,
    z2: &FeatureMatrix,
    y: &TaskVector,
    trials: usize,
    seed: u64,
    rel_tol: f64,
) -> Result<VerifyReport> {
    check_trials(trials)?;
    let (p, p2) = (z.p(), z2.p());
    let gaps = run_trials(seed, 6, trials, |rng| {
        invariance_gap(z, z2, y, &Transform::random(p, p2, rng))
    })?;
    let worst = gaps.into_iter().fold(0.0, f64::max);
    Ok(VerifyReport::evaluate(
        "invariance",
        0.0,
        worst,
        0.0,
        trials,
        z.n(),
        seed,
        ToleranceRule::Absolute(rel_tol),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::center_rows;
    use crate::synth::{make_spec, SpecKind};

    #[test]
    fn tolerance_rules_roundtrip_through_text() {
        for rule in [THM1_RULE, THM3_RULE, BALL_RULE, CKA_RULE, ToleranceRule::Absolute(1e-8)] {
            assert_eq!(ToleranceRule::parse(&rule.to_string()), Some(rule));
        }
    }

    #[test]
    fn report_pass_is_rederivable() {
        let r = VerifyReport::evaluate("x", 1.0, 1.04, 0.001, 10, 5, 0, THM1_RULE);
        assert!(r.pass);
        assert_eq!(r.recheck(), Some(true));
        let r = VerifyReport::evaluate("x", 1.0, 1.06, 0.001, 10, 5, 0, THM1_RULE);
        assert!(!r.pass);
        assert_eq!(r.recheck(), Some(false));
    }

    #[test]
    fn mean_stderr_basics() {
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_stderr(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn ball_dims() {
        for (dim, expect) in [(1, 1.0 / 3.0), (8, 0.1), (98, 0.01)] {
            let r = verify_ball_moment(dim, 200_000, 1).unwrap();
            assert_eq!(r.theoretical, expect);
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn reports_are_reproducible() {
        let a = verify_ball_moment(3, 20_000, 9).unwrap();
        let b = verify_ball_moment(3, 20_000, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let spec = make_spec(SpecKind::Random, 2, 2, &mut RngStream::new(1, 0)).unwrap();
        let a = verify_thm2(&spec, 500, 4, 3).unwrap();
        let b = verify_thm2(&spec, 500, 4, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thm1_special_cases() {
        let unit = DVector::from_vec(vec![0.6, 0.8]);
        let corr = make_spec(SpecKind::Correlated, 2, 2, &mut RngStream::new(2, 0)).unwrap();
        let r = verify_thm1(&corr, &unit, &unit, 20_000, 4, 1).unwrap();
        assert!(r.theoretical.abs() < 1e-9 && r.empirical_mean < 0.02 && r.pass, "{r:?}");
        let ind = make_spec(SpecKind::Independent, 2, 2, &mut RngStream::new(3, 0)).unwrap();
        let r = verify_thm1(&ind, &unit, &unit, 20_000, 4, 1).unwrap();
        assert!((r.theoretical - 2.0).abs() < 1e-12 && r.pass, "{r:?}");
    }

    #[test]
    fn thm2_special_cases() {
        let corr = make_spec(SpecKind::Correlated, 3, 3, &mut RngStream::new(4, 0)).unwrap();
        let r = verify_thm2(&corr, 5_000, 3, 1).unwrap();
        assert!(r.pass && r.empirical_mean.abs() < 1e-6, "{r:?}");
        let ind = make_spec(SpecKind::Independent, 3, 3, &mut RngStream::new(5, 0)).unwrap();
        let r = verify_thm2(&ind, 20_000, 3, 1).unwrap();
        assert!(r.pass && r.theoretical == 2.0, "{r:?}");
    }

    #[test]
    fn thm3_hand_pair() {
        let z = FeatureMatrix::from_rows(&[&[1.0, 0.0, -1.0]]).unwrap();
        let z2 = FeatureMatrix::from_rows(&[&[0.0, 1.0, -1.0]]).unwrap();
        let r = verify_thm3(&z, &z2, 100_000, 2).unwrap();
        assert!((r.theoretical - 0.5).abs() < 1e-12);
        assert!(r.pass, "{r:?}");
        let same = verify_thm3(&z, &z, 1_000, 2).unwrap();
        assert!(same.pass && same.empirical_mean.abs() < 1e-20, "{same:?}");
    }

    #[test]
    fn thm3_random_pair() {
        let mut rng = RngStream::new(6, 0);
        let spec = make_spec(SpecKind::Random, 4, 4, &mut rng).unwrap();
        let (z, z2) = sample_joint(&spec, 2048, &mut rng).unwrap();
        let r = verify_thm3(&z, &z2, 20_000, 3).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn cka_special_cases() {
        let ind = make_spec(SpecKind::Independent, 2, 3, &mut RngStream::new(7, 0)).unwrap();
        let r = verify_cka(&ind, 20_000, 5, 1).unwrap();
        assert_eq!(r.theoretical, 0.0);
        assert!(r.pass, "{r:?}");
        let corr = make_spec(SpecKind::Correlated, 3, 3, &mut RngStream::new(8, 0)).unwrap();
        let r = verify_cka(&corr, 5_000, 3, 1).unwrap();
        assert!((r.theoretical - 1.0).abs() < 1e-9 && r.pass, "{r:?}");
    }

    #[test]
    fn invariance_cases() {
        let z = FeatureMatrix::from_rows(&[&[1.0, 0.0, -1.0]]).unwrap();
        let z2 = FeatureMatrix::from_rows(&[&[0.0, 1.0, -1.0]]).unwrap();
        let y = TaskVector::from_slice(&[1.0, 0.0, -1.0]).unwrap();
        let identity = Transform {
            beta: 1.0,
            beta2: 1.0,
            q: nalgebra::DMatrix::identity(1, 1),
            q2: nalgebra::DMatrix::identity(1, 1),
        };
        assert_eq!(invariance_gap(&z, &z2, &y, &identity).unwrap(), 0.0);
        let stress = Transform {
            beta: 1e6,
            ..identity.clone()
        };
        assert!(invariance_gap(&z, &z2, &y, &stress).unwrap() < 1e-6);
        let r = verify_invariance(&z, &z2, &y, 100, 4, INVARIANCE_REL_TOL).unwrap();
        assert!(r.pass, "{r:?}");

        let mut rng = RngStream::new(10, 0);
        let spec = make_spec(SpecKind::Random, 3, 5, &mut rng).unwrap();
        let (a, b) = sample_joint(&spec, 200, &mut rng).unwrap();
        let y = TaskVector::from_slice(&center_rows(&a).data().row(0).iter().copied().collect::<Vec<_>>())
            .unwrap();
        assert!(verify_invariance(&a, &b, &y, 20, 1, INVARIANCE_REL_TOL).unwrap().pass);
    }
}
