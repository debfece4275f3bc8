//! Shared linear-algebra primitives.
//!
//! Every inverse square root, square root and projector goes through one
//! symmetric eigendecomposition routine ([`psd_power`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};
use crate::fmat::FeatureMatrix;

pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Subtracts each row's mean. Idempotent.
pub fn center_rows(m: &FeatureMatrix) -> FeatureMatrix {
    let mut data = m.data().clone();
    for mut row in data.row_iter_mut() {
        let mean = row.sum() / row.len() as f64;
        row.add_scalar_mut(-mean);
    }
    FeatureMatrix::with_name(data, m.name())
        .expect("centering preserves shape and finiteness")
        .with_centered_flag(true)
}

/// Subtracts each column's mean. Opt-in only; no metric relies on it.
pub fn center_columns(m: &FeatureMatrix) -> FeatureMatrix {
    let mut data = m.data().clone();
    for mut col in data.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let out = FeatureMatrix::with_name(data, m.name()).expect("shape and finiteness preserved");
    let centered = out.rows_are_centered();
    out.with_centered_flag(centered)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha20 with the stream id mapped to the cipher's stream
/// counter, so output is identical across platforms and independent of
/// how many other streams are in flight.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives an independent stream for sub-task `index` (e.g. a trial).
    pub fn child(&self, index: u64) -> Self {
        Self::new(
            self.seed,
            splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(1))),
        )
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DMatrix<f64> {
    // Column-major fill order is part of the determinism contract.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A real symmetric positive semi-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricPsd {
    data: DMatrix<f64>,
    /// Relative eigenvalue floor used by inverse operations.
    eigen_floor: f64,
}

impl SymmetricPsd {
    /// Validates squareness and symmetry (1e-10 relative), then symmetrizes.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if !data.is_square() || data.nrows() == 0 {
            return Err(shape_err(format!(
                "expected non-empty square matrix, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        let scale = data.amax().max(f64::MIN_POSITIVE);
        let asym = (&data - data.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(shape_err(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sym = (&data + data.transpose()) * 0.5;
        Ok(Self {
            data: sym,
            eigen_floor: DEFAULT_REL_TOL,
        })
    }

    /// `X Xᵀ / n` for a `p × n` matrix.
    pub fn covariance(z: &DMatrix<f64>) -> Self {
        let n = z.ncols() as f64;
        let g = z * z.transpose() / n;
        Self::new(g).expect("Gram matrix is square and symmetric")
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is symmetric")
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }

    pub fn with_eigen_floor(mut self, floor: f64) -> Self {
        self.eigen_floor = floor;
        self
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.data.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Controls for [`inv_sqrt_psd`] and friends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvSqrtOptions {
    /// Eigenvalues at or below `rel_tol · λ_max` are not inverted.
    pub rel_tol: f64,
    /// Drop near-null eigenvalues (pseudo-inverse) instead of failing.
    pub allow_singular: bool,
    /// Added to the diagonal before decomposition.
    pub ridge: f64,
}

impl Default for InvSqrtOptions {
    fn default() -> Self {
        Self {
            rel_tol: DEFAULT_REL_TOL,
            allow_singular: false,
            ridge: 0.0,
        }
    }
}

impl InvSqrtOptions {
    pub fn pseudo() -> Self {
        Self {
            allow_singular: true,
            ..Self::default()
        }
    }
}

/// `V diag(f(λ)) Vᵀ` over retained eigenpairs, for PSD input.
///
/// With `exponent < 0` eigenvalues in `(-rel_tol·λ_max, rel_tol·λ_max]` are
/// dropped when `allow_singular` is set and rejected otherwise. For
/// non-negative exponents they are clamped to zero.
pub fn psd_power(m: &SymmetricPsd, exponent: f64, opts: InvSqrtOptions) -> Result<DMatrix<f64>> {
    if opts.rel_tol <= 0.0 || opts.rel_tol.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "rel_tol must be positive, got {}",
            opts.rel_tol
        )));
    }
    let d = m.dim();
    let mut a = m.data().clone();
    if opts.ridge != 0.0 {
        for i in 0..d {
            a[(i, i)] += opts.ridge;
        }
    }
    let eig = SymmetricEigen::new(a);
    let lambda_max = eig.eigenvalues.max();
    let lambda_min = eig.eigenvalues.min();
    if lambda_max <= 0.0 {
        if exponent >= 0.0 {
            return Ok(DMatrix::zeros(d, d));
        }
        return Err(Error::RankDeficient(format!(
            "largest eigenvalue {lambda_max:e} is not positive"
        )));
    }
    let cutoff = opts.rel_tol * lambda_max;
    if lambda_min < -cutoff {
        return Err(Error::NotPsd {
            min_eigenvalue: lambda_min,
        });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let factor = if lambda > cutoff {
            lambda.powf(exponent)
        } else if exponent >= 0.0 {
            0.0
        } else if opts.allow_singular {
            0.0
        } else {
            return Err(Error::RankDeficient(format!(
                "eigenvalue {lambda:e} at or below {cutoff:e} (relative tolerance {})",
                opts.rel_tol
            )));
        };
        scaled.column_mut(k).scale_mut(factor);
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// `M^{-1/2}` on the retained eigenspace.
pub fn inv_sqrt_psd(m: &SymmetricPsd, opts: InvSqrtOptions) -> Result<DMatrix<f64>> {
    psd_power(m, -0.5, opts)
}

/// Symmetric PSD square root.
pub fn sqrt_psd(m: &SymmetricPsd, opts: InvSqrtOptions) -> Result<DMatrix<f64>> {
    psd_power(m, 0.5, opts)
}

/// `(Z Zᵀ)^{-1/2} Z`: rows are orthonormal and span the row space of `Z`.
pub fn orthonormal_rows(z: &DMatrix<f64>, opts: InvSqrtOptions) -> Result<DMatrix<f64>> {
    let gram = SymmetricPsd::new(z * z.transpose())?;
    let r = inv_sqrt_psd(&gram, opts)?;
    Ok(r * z)
}

/// `Zᵀ (Z Zᵀ)^{-1} Z`, the `n × n` orthogonal projector onto the row space of `Z`.
pub fn projection(z: &FeatureMatrix) -> Result<DMatrix<f64>> {
    projection_with(z, InvSqrtOptions::default())
}

pub fn projection_with(z: &FeatureMatrix, opts: InvSqrtOptions) -> Result<DMatrix<f64>> {
    if z.n() <= z.p() {
        return Err(shape_err(format!(
            "projection needs n > p, got p={} n={}",
            z.p(),
            z.n()
        )));
    }
    let w = orthonormal_rows(z.data(), opts)?;
    Ok(w.transpose() * w)
}

/// Uniform draw from the unit ball: normalized Gaussian direction scaled by `u^{1/dim}`.
pub fn sample_unit_ball(dim: usize, rng: &mut RngStream) -> DVector<f64> {
    assert!(dim >= 1, "ball dimension must be at least 1");
    loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            let u: f64 = rng.random();
            return g * (u.powf(1.0 / dim as f64) / norm);
        }
    }
}

/// Haar-distributed orthogonal matrix via QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn random_unitary(dim: usize, rng: &mut RngStream) -> DMatrix<f64> {
    assert!(dim >= 1, "unitary dimension must be at least 1");
    let g = gaussian_matrix(dim, dim, rng);
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn hand_z() -> FeatureMatrix {
        FeatureMatrix::from_rows(&[&[1.0, 0.0, -1.0]]).unwrap()
    }

    fn random_psd(dim: usize, seed: u64) -> SymmetricPsd {
        let mut rng = RngStream::new(seed, 0);
        let g = gaussian_matrix(dim, dim + 3, &mut rng);
        SymmetricPsd::new(&g * g.transpose()).unwrap()
    }

    #[test]
    fn center_rows_examples() {
        let m = FeatureMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]]).unwrap();
        let c = center_rows(&m);
        assert!(c.centered());
        assert_eq!(c.data().row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(c.data().row(1).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        let again = center_rows(&c);
        assert!((again.data() - c.data()).amax() < 1e-15);
    }

    #[test]
    fn column_centering_is_opt_in() {
        let m = FeatureMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 6.0]]).unwrap();
        let c = center_columns(&m);
        for col in c.data().column_iter() {
            assert!(col.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn inv_sqrt_identity_and_diag() {
        let id = SymmetricPsd::identity(3);
        let r = inv_sqrt_psd(&id, InvSqrtOptions::default()).unwrap();
        assert!((r - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);

        let d = SymmetricPsd::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])))
            .unwrap();
        let r = inv_sqrt_psd(&d, InvSqrtOptions::default()).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((r[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(r[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn inv_sqrt_random_psd_whitens() {
        for seed in 0..20 {
            let m = random_psd(6, seed);
            let r = inv_sqrt_psd(&m, InvSqrtOptions::default()).unwrap();
            let w = &r * m.data() * &r;
            assert!((w - DMatrix::<f64>::identity(6, 6)).amax() < 1e-8);
        }
    }

    #[test]
    fn singular_matrix_needs_opt_in() {
        let v = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let m = SymmetricPsd::new(&v * v.transpose()).unwrap();
        assert!(matches!(
            inv_sqrt_psd(&m, InvSqrtOptions::default()),
            Err(Error::RankDeficient(_))
        ));
        let r = inv_sqrt_psd(&m, InvSqrtOptions::pseudo()).unwrap();
        // pseudo-inverse identity on the retained (rank one) eigenspace
        let rr = &r * &r;
        let pinv_check = m.data() * &rr * m.data();
        assert!((pinv_check - m.data()).amax() < 1e-8);
        // ridge restores invertibility
        let ridged = InvSqrtOptions {
            ridge: 1e-3,
            ..InvSqrtOptions::default()
        };
        assert!(inv_sqrt_psd(&m, ridged).is_ok());
    }

    #[test]
    fn not_psd_detected() {
        let m = SymmetricPsd::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert!(matches!(
            inv_sqrt_psd(&m, InvSqrtOptions::pseudo()),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(SymmetricPsd::new(m), Err(Error::ShapeError(_))));
    }

    #[test]
    fn inv_sqrt_twice_is_inverse() {
        for seed in 0..10 {
            let m = random_psd(5, 100 + seed);
            let r = inv_sqrt_psd(&m, InvSqrtOptions::default()).unwrap();
            let inv = m.data().clone().try_inverse().unwrap();
            let scale = inv.amax();
            assert!((&r * &r - inv).amax() < 1e-8 * scale.max(1.0));
        }
    }

    #[test]
    fn projection_hand_example() {
        let p = projection(&hand_z()).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.5, 0.0, -0.5, 0.0, 0.0, 0.0, -0.5, 0.0, 0.5]);
        assert!((p - expected).amax() < 1e-15);
    }

    #[test]
    fn projection_shape_and_rank_errors() {
        let square = FeatureMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(projection(&square), Err(Error::ShapeError(_))));
        let dup = FeatureMatrix::from_rows(&[&[1.0, 0.0, -1.0], &[2.0, 0.0, -2.0]]).unwrap();
        assert!(matches!(projection(&dup), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn ball_samples_inside() {
        let mut rng = RngStream::new(3, 0);
        for dim in [1, 2, 5, 50] {
            for _ in 0..1000 {
                assert!(sample_unit_ball(dim, &mut rng).norm() <= 1.0);
            }
        }
    }

    fn second_moment(dim: usize, coord: usize, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngStream::new(seed, 0);
        let xs: Vec<f64> = (0..samples)
            .map(|_| sample_unit_ball(dim, &mut rng)[coord].powi(2))
            .collect();
        let mean = xs.iter().sum::<f64>() / samples as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
        (mean, (var / samples as f64).sqrt())
    }

    #[test]
    fn ball_second_moment_dim1_and_dim8() {
        let (m1, se1) = second_moment(1, 0, 1_000_000, 11);
        assert!((m1 - 1.0 / 3.0).abs() < 3.0 * se1, "{m1} ± {se1}");
        let (m8, se8) = second_moment(8, 0, 1_000_000, 12);
        assert!((m8 - 0.1).abs() < 3.0 * se8, "{m8} ± {se8}");
    }

    #[test]
    fn ball_coordinates_exchangeable() {
        let dim = 4;
        let (m0, se0) = second_moment(dim, 0, 200_000, 21);
        let (m3, se3) = second_moment(dim, 3, 200_000, 21);
        let tol = 4.0 * (se0 * se0 + se3 * se3).sqrt();
        assert!((m0 - m3).abs() < tol);
    }

    #[test]
    fn unitary_is_orthogonal_and_deterministic() {
        for dim in [1, 2, 7, 16] {
            let q = random_unitary(dim, &mut RngStream::new(9, dim as u64));
            let qqt = &q * q.transpose();
            assert!((qqt - DMatrix::<f64>::identity(dim, dim)).amax() < 1e-10);
            assert!((q.determinant().abs() - 1.0).abs() < 1e-8);
            let again = random_unitary(dim, &mut RngStream::new(9, dim as u64));
            assert_eq!(q, again);
        }
    }

    #[test]
    fn streams_differ_and_children_are_stable() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        assert_ne!(a.next_u64(), b.next_u64());
        let parent = RngStream::new(5, 2);
        assert_eq!(parent.child(3).next_u64(), parent.child(3).next_u64());
        assert_ne!(parent.child(3).stream_id(), parent.child(4).stream_id());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn projector_invariant_under_rotation_and_scale(seed in 0u64..10_000, p in 1usize..5, extra in 1usize..12, beta in 1e-3f64..1e3) {
            let n = p + extra;
            let mut rng = RngStream::new(seed, 0);
            let z = center_rows(&FeatureMatrix::new(gaussian_matrix(p, n, &mut rng)).unwrap());
            let q = random_unitary(p, &mut rng);
            let base = projection(&z).unwrap();
            let rotated = projection(&FeatureMatrix::new(&q * z.data() * beta).unwrap()).unwrap();
            prop_assert!((&base - &rotated).amax() < 1e-9);
            prop_assert!((&base * &base - &base).amax() < 1e-9);
            prop_assert!((base.trace() - p as f64).abs() < 1e-9);
        }
    }
}
