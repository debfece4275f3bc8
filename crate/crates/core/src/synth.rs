//! Synthetic jointly Gaussian feature pairs with known covariance blocks,
//! and construction of linearly realizable downstream tasks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::fmat::{FeatureMatrix, TaskVector};
use crate::linalg::{
    center_rows, gaussian_matrix, inv_sqrt_psd, random_unitary, sqrt_psd, InvSqrtOptions,
    RngStream, SymmetricPsd,
};
use crate::spectral::AlignmentSpectrum;

/// Joint covariance `[[A, B], [Bᵀ, C]]` of a feature pair `(z, z′)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussianSpec {
    a: SymmetricPsd,
    b: DMatrix<f64>,
    c: SymmetricPsd,
}

impl JointGaussianSpec {
    /// Validates shapes, invertibility of `A` and `C`, and block PSD-ness.
    pub fn new(a: SymmetricPsd, b: DMatrix<f64>, c: SymmetricPsd) -> Result<Self> {
        if b.nrows() != a.dim() || b.ncols() != c.dim() {
            return Err(shape_err(format!(
                "B is {}x{}, expected {}x{}",
                b.nrows(),
                b.ncols(),
                a.dim(),
                c.dim()
            )));
        }
        let opts = InvSqrtOptions::default();
        inv_sqrt_psd(&a, opts)?;
        inv_sqrt_psd(&c, opts)?;
        let spec = Self { a, b, c };
        let ev = spec.block().eigenvalues();
        let (min, max) = (ev[0], ev[ev.len() - 1]);
        if min < -1e-10 * max {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(spec)
    }

    pub fn a(&self) -> &SymmetricPsd {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &SymmetricPsd {
        &self.c
    }

    pub fn p(&self) -> usize {
        self.a.dim()
    }

    pub fn p2(&self) -> usize {
        self.c.dim()
    }

    pub fn block(&self) -> SymmetricPsd {
        let (p, p2) = (self.p(), self.p2());
        let mut m = DMatrix::zeros(p + p2, p + p2);
        m.view_mut((0, 0), (p, p)).copy_from(self.a.data());
        m.view_mut((0, p), (p, p2)).copy_from(&self.b);
        m.view_mut((p, 0), (p2, p)).copy_from(&self.b.transpose());
        m.view_mut((p, p), (p2, p2)).copy_from(self.c.data());
        SymmetricPsd::new(m).expect("block matrix is symmetric by construction")
    }

    pub fn alignment(&self) -> Result<AlignmentSpectrum> {
        AlignmentSpectrum::from_population(&self.a, &self.b, &self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecKind {
    /// `z′ = Q z` for a random orthogonal `Q`.
    Correlated,
    /// `B = 0`.
    Independent,
    /// Partition of a random Wishart-like block matrix.
    Random,
}

impl fmt::Display for SpecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpecKind::Correlated => "correlated",
            SpecKind::Independent => "independent",
            SpecKind::Random => "random",
        })
    }
}

impl FromStr for SpecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlated" => Ok(SpecKind::Correlated),
            "independent" => Ok(SpecKind::Independent),
            "random" => Ok(SpecKind::Random),
            other => Err(Error::InvalidArgument(format!("unknown spec kind {other:?}"))),
        }
    }
}

/// `G Gᵀ / cols` for a Gaussian `dim × (dim + 4)` matrix.
fn random_covariance(dim: usize, rng: &mut RngStream) -> SymmetricPsd {
    let cols = dim + 4;
    let g = gaussian_matrix(dim, cols, rng);
    SymmetricPsd::new(&g * g.transpose() / cols as f64).expect("Gram matrix is symmetric")
}

pub fn make_spec(kind: SpecKind, p: usize, p2: usize, rng: &mut RngStream) -> Result<JointGaussianSpec> {
    if p == 0 || p > p2 {
        return Err(shape_err(format!("need 1 <= p <= p', got p={p} p'={p2}")));
    }
    match kind {
        SpecKind::Correlated => {
            if p != p2 {
                return Err(shape_err("correlated specs need p = p'"));
            }
            let a = random_covariance(p, rng);
            let q = random_unitary(p, rng);
            let b = a.data() * q.transpose();
            let c = SymmetricPsd::new(&q * a.data() * q.transpose())?;
            JointGaussianSpec::new(a, b, c)
        }
        SpecKind::Independent => {
            let a = random_covariance(p, rng);
            let c = random_covariance(p2, rng);
            JointGaussianSpec::new(a, DMatrix::zeros(p, p2), c)
        }
        SpecKind::Random => {
            let full = random_covariance(p + p2, rng);
            let m = full.data();
            let a = SymmetricPsd::new(m.view((0, 0), (p, p)).into_owned())?;
            let b = m.view((0, p), (p, p2)).into_owned();
            let c = SymmetricPsd::new(m.view((p, p), (p2, p2)).into_owned())?;
            JointGaussianSpec::new(a, b, c)
        }
    }
}

/// `n` joint samples via the symmetric square root of the block covariance,
/// returned row-centered.
pub fn sample_joint(
    spec: &JointGaussianSpec,
    n: usize,
    rng: &mut RngStream,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if n < 2 {
        return Err(shape_err(format!("need at least two samples, got {n}")));
    }
    let (p, p2) = (spec.p(), spec.p2());
    let root = sqrt_psd(&spec.block(), InvSqrtOptions::default())?;
    let x = root * gaussian_matrix(p + p2, n, rng);
    let z = FeatureMatrix::with_name(x.rows(0, p).into_owned(), "z")?;
    let z2 = FeatureMatrix::with_name(x.rows(p, p2).into_owned(), "z_prime")?;
    Ok((center_rows(&z), center_rows(&z2)))
}

/// How task coefficients are mapped onto the features.
#[derive(Debug, Clone, Copy)]
pub enum Whitening<'a> {
    /// Population `A^{-1/2}`, `C^{-1/2}`.
    Population(&'a JointGaussianSpec),
    /// Empirical `Â = Z Zᵀ / n`, `Ĉ = Z′ Z′ᵀ / n`.
    Empirical,
}

/// Whitened features kept around to build many tasks on the same pair.
#[derive(Debug, Clone)]
pub struct TaskBuilder {
    wa: DMatrix<f64>,
    wb: DMatrix<f64>,
}

impl TaskBuilder {
    pub fn new(z: &FeatureMatrix, z2: &FeatureMatrix, whitening: Whitening<'_>) -> Result<Self> {
        if z.n() != z2.n() {
            return Err(shape_err(format!(
                "sample counts differ: {} vs {}",
                z.n(),
                z2.n()
            )));
        }
        let opts = InvSqrtOptions::default();
        let (ra, rb) = match whitening {
            Whitening::Population(spec) => {
                if spec.p() != z.p() || spec.p2() != z2.p() {
                    return Err(shape_err("spec dimensions do not match the features"));
                }
                (inv_sqrt_psd(spec.a(), opts)?, inv_sqrt_psd(spec.c(), opts)?)
            }
            Whitening::Empirical => (
                inv_sqrt_psd(&SymmetricPsd::covariance(z.data()), opts)?,
                inv_sqrt_psd(&SymmetricPsd::covariance(z2.data()), opts)?,
            ),
        };
        Ok(Self {
            wa: ra * z.data(),
            wb: rb * z2.data(),
        })
    }

    pub fn p(&self) -> usize {
        self.wa.nrows()
    }

    pub fn p2(&self) -> usize {
        self.wb.nrows()
    }

    /// `Y = α W_a + α′ W_b` as a task vector.
    pub fn task(&self, alpha: &DVector<f64>, alpha2: &DVector<f64>) -> Result<TaskVector> {
        if alpha.len() != self.p() || alpha2.len() != self.p2() {
            return Err(shape_err(format!(
                "coefficients have lengths {} and {}, expected {} and {}",
                alpha.len(),
                alpha2.len(),
                self.p(),
                self.p2()
            )));
        }
        for v in [alpha, alpha2] {
            let norm = v.norm();
            if norm > 1.0 + 1e-12 {
                return Err(Error::NormViolation { norm });
            }
        }
        TaskVector::new(self.wa.tr_mul(alpha) + self.wb.tr_mul(alpha2))
    }
}

pub fn make_task(
    z: &FeatureMatrix,
    z2: &FeatureMatrix,
    alpha: &DVector<f64>,
    alpha2: &DVector<f64>,
    whitening: Whitening<'_>,
) -> Result<TaskVector> {
    TaskBuilder::new(z, z2, whitening)?.task(alpha, alpha2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::td_linear;

    #[test]
    fn independent_has_zero_cross_block() {
        let spec = make_spec(SpecKind::Independent, 3, 5, &mut RngStream::new(1, 0)).unwrap();
        assert!(spec.b().iter().all(|&v| v == 0.0));
        assert!(spec.alignment().unwrap().sigma.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn correlated_alignment_is_orthogonal() {
        for seed in 0..5 {
            let spec = make_spec(SpecKind::Correlated, 4, 4, &mut RngStream::new(seed, 0)).unwrap();
            let s = spec.alignment().unwrap();
            assert!(s.sigma.iter().all(|&v| (v - 1.0).abs() < 1e-9), "{:?}", s.sigma);
        }
        assert!(make_spec(SpecKind::Correlated, 2, 3, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn random_block_is_psd() {
        for seed in 0..20 {
            let spec = make_spec(SpecKind::Random, 3, 4, &mut RngStream::new(seed, 0)).unwrap();
            let ev = spec.block().eigenvalues();
            assert!(ev[0] >= -1e-10 * ev[ev.len() - 1]);
        }
        assert!(make_spec(SpecKind::Random, 4, 3, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn bad_block_rejected() {
        let id = SymmetricPsd::identity(1);
        let b = DMatrix::from_element(1, 1, 2.0);
        assert!(matches!(
            JointGaussianSpec::new(id.clone(), b, id),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn samples_match_covariance() {
        let mut rng = RngStream::new(3, 0);
        let spec = make_spec(SpecKind::Random, 3, 3, &mut rng).unwrap();
        let n = 100_000;
        let (z, z2) = sample_joint(&spec, n, &mut rng).unwrap();
        assert!(z.centered() && z.rows_are_centered() && z2.rows_are_centered());
        let nf = n as f64;
        let a_hat = z.data() * z.data().transpose() / nf;
        let b_hat = z.data() * z2.data().transpose() / nf;
        let tol = 5.0 * spec.block().data().norm() / nf.sqrt();
        assert!((a_hat - spec.a().data()).norm() < tol);
        assert!((b_hat - spec.b()).norm() < tol);
    }

    #[test]
    fn task_examples() {
        let mut rng = RngStream::new(4, 0);
        let spec = make_spec(SpecKind::Random, 1, 1, &mut rng).unwrap();
        let (z, z2) = sample_joint(&spec, 500, &mut rng).unwrap();
        let zero = DVector::zeros(1);
        let one = DVector::from_element(1, 1.0);
        let y = make_task(&z, &z2, &zero, &zero, Whitening::Empirical).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));

        let y = make_task(&z, &z2, &one, &zero, Whitening::Empirical).unwrap();
        let mean_sq = y.values().norm_squared() / 500.0;
        assert!((mean_sq - 1.0).abs() < 1e-12);
        assert!(y.centered());
        assert!(td_linear(&z, &z, &y).unwrap().value < 1e-20);

        let long = DVector::from_element(1, 1.5);
        assert!(matches!(
            make_task(&z, &z2, &long, &zero, Whitening::Population(&spec)),
            Err(Error::NormViolation { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = make_spec(SpecKind::Random, 2, 3, &mut RngStream::new(5, 0)).unwrap();
        let a = sample_joint(&spec, 50, &mut RngStream::new(5, 1)).unwrap();
        let b = sample_joint(&spec, 50, &mut RngStream::new(5, 1)).unwrap();
        assert_eq!(a, b);
    }
}
