//! The alignment matrix `D = A^{-1/2} B C^{-1/2}`, its singular spectrum,
//! and the closed-form limits of transferred discrepancy built on it.
//!
//! A spectrum is always stored with the narrower side first (`p ≤ p′`);
//! `swapped` records whether the caller's arguments were exchanged to get
//! there. Task coefficients passed to [`td_limit_single_task`] refer to this
//! oriented frame.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::fmat::FeatureMatrix;
use crate::linalg::{inv_sqrt_psd, orthonormal_rows, InvSqrtOptions, RngStream, SymmetricPsd};
use crate::metrics::ensure_centered;

/// Singular values in `(1, 1 + SIGMA_CLAMP]` are treated as round-off and set to 1.
pub const SIGMA_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSpectrum {
    /// `p × p′` with `p ≤ p′`.
    pub d: DMatrix<f64>,
    /// `p × p` orthogonal.
    pub u: DMatrix<f64>,
    /// `p′ × p′` orthogonal.
    pub v: DMatrix<f64>,
    /// Nonincreasing, length `p`.
    pub sigma: Vec<f64>,
    pub clamped: bool,
    pub swapped: bool,
}

impl AlignmentSpectrum {
    /// Decomposes `d`, transposing first if it is taller than wide.
    pub fn from_matrix(d: DMatrix<f64>) -> Result<Self> {
        let swapped = d.nrows() > d.ncols();
        let d = if swapped { d.transpose() } else { d };
        let (p, p2) = d.shape();
        if p == 0 {
            return Err(shape_err("alignment matrix is empty"));
        }
        let svd = d.clone().svd(true, true);
        let u_thin = svd.u.expect("requested U");
        let vt_thin = svd.v_t.expect("requested Vᵀ");
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));

        let mut clamped = false;
        let mut sigma = Vec::with_capacity(p);
        for &k in &order {
            let s = svd.singular_values[k];
            if s > 1.0 + SIGMA_CLAMP || !s.is_finite() {
                return Err(Error::SigmaOutOfRange { value: s });
            }
            if s > 1.0 {
                clamped = true;
                sigma.push(1.0);
            } else {
                sigma.push(s.max(0.0));
            }
        }
        let u = DMatrix::from_fn(p, p, |i, j| u_thin[(i, order[j])]);
        let mut v = DMatrix::zeros(p2, p2);
        for (j, &k) in order.iter().enumerate() {
            v.column_mut(j).copy_from(&vt_thin.row(k).transpose());
        }
        complete_orthonormal_basis(&mut v, p);
        Ok(Self {
            d,
            u,
            v,
            sigma,
            clamped,
            swapped,
        })
    }

    /// Population alignment from covariance blocks `A` (p×p), `B` (p×p′), `C` (p′×p′).
    pub fn from_population(a: &SymmetricPsd, b: &DMatrix<f64>, c: &SymmetricPsd) -> Result<Self> {
        Self::from_matrix(population_alignment(a, b, c)?)
    }

    /// `p`, the narrower dimension.
    pub fn p(&self) -> usize {
        self.d.nrows()
    }

    /// `p′`, the wider dimension.
    pub fn p2(&self) -> usize {
        self.d.ncols()
    }

    pub fn max_abs_reconstruction_error(&self) -> f64 {
        let (p, p2) = self.d.shape();
        let mut sig = DMatrix::zeros(p, p2);
        for (j, &s) in self.sigma.iter().enumerate() {
            sig[(j, j)] = s;
        }
        (&self.u * sig * self.v.transpose() - &self.d).amax()
    }
}

/// Fills columns `filled..` of `v` with an orthonormal complement of the
/// first `filled` columns (modified Gram-Schmidt over the standard basis).
fn complete_orthonormal_basis(v: &mut DMatrix<f64>, filled: usize) {
    let dim = v.nrows();
    let mut next = filled;
    for e in 0..dim {
        if next == dim {
            break;
        }
        let mut cand = DVector::<f64>::zeros(dim);
        cand[e] = 1.0;
        for _ in 0..2 {
            for j in 0..next {
                let proj = v.column(j).dot(&cand);
                cand.axpy(-proj, &v.column(j), 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-6 {
            v.column_mut(next).copy_from(&(cand / norm));
            next += 1;
        }
    }
}

pub fn population_alignment(
    a: &SymmetricPsd,
    b: &DMatrix<f64>,
    c: &SymmetricPsd,
) -> Result<DMatrix<f64>> {
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
    Ok(inv_sqrt_psd(a, opts)? * b * inv_sqrt_psd(c, opts)?)
}

/// Empirical alignment `(Z Zᵀ)^{-1/2} Z Z′ᵀ (Z′ Z′ᵀ)^{-1/2}` with its SVD.
pub fn d_hat(z: &FeatureMatrix, z2: &FeatureMatrix) -> Result<AlignmentSpectrum> {
    if z.n() != z2.n() {
        return Err(shape_err(format!(
            "sample counts differ: {} vs {}",
            z.n(),
            z2.n()
        )));
    }
    let (za, _) = ensure_centered(z);
    let (zb, _) = ensure_centered(z2);
    let opts = InvSqrtOptions::default();
    let wa = orthonormal_rows(za.data(), opts)?;
    let wb = orthonormal_rows(zb.data(), opts)?;
    AlignmentSpectrum::from_matrix(wa * wb.transpose())
}

fn check_ball(v: &DVector<f64>) -> Result<()> {
    let norm = v.norm();
    if norm > 1.0 + 1e-12 {
        return Err(Error::NormViolation { norm });
    }
    Ok(())
}

/// Almost-sure limit of linear TD for the task `Y = α A^{-1/2} Z + α′ C^{-1/2} Z′`:
/// `α(I − DDᵀ)αᵀ + α′(I − DᵀD)α′ᵀ + 2α(D − DDᵀD)α′ᵀ`.
pub fn td_limit_single_task(
    spec: &AlignmentSpectrum,
    alpha: &DVector<f64>,
    alpha2: &DVector<f64>,
) -> Result<f64> {
    td_limit_for_matrix(&spec.d, alpha, alpha2)
}

/// Same quadratic form for an arbitrary `p × p′` alignment matrix.
pub fn td_limit_for_matrix(d: &DMatrix<f64>, alpha: &DVector<f64>, alpha2: &DVector<f64>) -> Result<f64> {
    let (p, p2) = d.shape();
    if alpha.len() != p || alpha2.len() != p2 {
        return Err(shape_err(format!(
            "coefficients have lengths {} and {}, expected {p} and {p2}",
            alpha.len(),
            alpha2.len()
        )));
    }
    check_ball(alpha)?;
    check_ball(alpha2)?;
    let d_alpha2 = d * alpha2;
    let dt_alpha = d.tr_mul(alpha);
    // α(I − DDᵀ)αᵀ = ‖α‖² − ‖Dᵀα‖²
    let first = alpha.norm_squared() - dt_alpha.norm_squared();
    let second = alpha2.norm_squared() - d_alpha2.norm_squared();
    // α(D − DDᵀD)α′ᵀ = αᵀDα′ − (Dᵀα)ᵀ(DᵀD α′)
    let cross = alpha.dot(&d_alpha2) - dt_alpha.dot(&d.tr_mul(&d_alpha2));
    Ok(first + second + 2.0 * cross)
}

fn repset_term(s: f64) -> f64 {
    2.0 * (1.0 - s) * (1.0 + s) * (1.0 + s)
}

/// Result of [`td_limit_repset`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepsetLimit {
    pub value: f64,
    /// The closed form's precondition failed and `value` came from
    /// numerical maximization.
    pub precondition_unmet: bool,
}

/// Whether `max_j 2(1−σ_j)(1+σ_j)²` is the exact representative-set limit.
pub fn repset_precondition_holds(spec: &AlignmentSpectrum) -> bool {
    let s = *spec.sigma.last().expect("non-empty spectrum");
    spec.p() == spec.p2() || (1.0 - s) * (1.0 + s) * (1.0 + s) >= 1.0
}

/// Limit of TD over the representative task set.
pub fn td_limit_repset(spec: &AlignmentSpectrum) -> RepsetLimit {
    if repset_precondition_holds(spec) {
        RepsetLimit {
            value: closed_form_max(&spec.sigma),
            precondition_unmet: false,
        }
    } else {
        RepsetLimit {
            value: repset_numeric(&spec.sigma, spec.p2()),
            precondition_unmet: true,
        }
    }
}

fn closed_form_max(sigma: &[f64]) -> f64 {
    sigma.iter().map(|&s| repset_term(s)).fold(f64::NEG_INFINITY, f64::max)
}

/// Restricted task set `S_r`: `max_{j ≤ r} 2(1−σ_j)(1+σ_j)²`.
pub fn td_limit_restricted(spec: &AlignmentSpectrum, r: usize) -> Result<f64> {
    if r == 0 || r > spec.p() {
        return Err(Error::IndexOutOfRange {
            index: r,
            max: spec.p(),
        });
    }
    Ok(closed_form_max(&spec.sigma[..r]))
}

/// `Σσ_j² / p`, the expected squared canonical correlation.
pub fn r2_from_spectrum(spec: &AlignmentSpectrum) -> f64 {
    spec.sigma.iter().map(|s| s * s).sum::<f64>() / spec.p() as f64
}

/// Mean linear TD over tasks with coefficients uniform on the unit balls,
/// for `p = p′`: `(2p / (p+2)) (1 − R²)`.
pub fn expected_td_over_tasks(p: usize, r2: f64) -> f64 {
    let p = p as f64;
    2.0 * p / (p + 2.0) * (1.0 - r2)
}

/// Two-sided form `(p − Σσ²)/(p+2) + (p′ − Σσ²)/(p′+2)`, valid for `p ≤ p′`.
pub fn expected_td_over_tasks_general(p: usize, p2: usize, sum_sigma_sq: f64) -> f64 {
    let (p, p2) = (p as f64, p2 as f64);
    (p - sum_sigma_sq) / (p + 2.0) + (p2 - sum_sigma_sq) / (p2 + 2.0)
}

/// Population linear CKA: `tr(D C Dᵀ A) / (√tr(A²) √tr(C²))`.
pub fn cka_expectation(a: &SymmetricPsd, b: &DMatrix<f64>, c: &SymmetricPsd) -> Result<f64> {
    let d = population_alignment(a, b, c)?;
    let num = (&d * c.data() * d.transpose() * a.data()).trace();
    let den = (a.data() * a.data()).trace().sqrt() * (c.data() * c.data()).trace().sqrt();
    if den == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(num / den)
}

/// Objective of the representative-set supremum in singular coordinates.
///
/// `beta` has length `p`; `beta2` has length `p + 1`, its last entry holding
/// the total weight on the `p′ − p` directions that `D` does not reach.
fn repset_objective(sigma: &[f64], beta: &[f64], beta2: &[f64]) -> f64 {
    let p = sigma.len();
    let mut f = 0.0;
    for j in 0..p {
        let s = sigma[j];
        f += (1.0 - s * s) * (beta[j] * beta[j] + beta2[j] * beta2[j] + 2.0 * s * beta[j] * beta2[j]);
    }
    f + beta2[p] * beta2[p]
}

fn project_ball(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub const REPSET_STARTS: usize = 32;
const REPSET_SEED: u64 = 0x7D_5EED;

/// Multi-start projected gradient ascent of the representative-set objective
/// when `p < p′`. Starts are seeded and reduced best-of in start order.
pub fn repset_numeric(sigma: &[f64], p2: usize) -> f64 {
    let p = sigma.len();
    let has_extra = p2 > p;
    let base = RngStream::new(REPSET_SEED, 0);
    let mut best = f64::NEG_INFINITY;
    for start in 0..REPSET_STARTS {
        let mut rng = base.child(start as u64);
        let mut beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut beta2: Vec<f64> = (0..=p).map(|_| rng.random_range(-1.0..1.0)).collect();
        if !has_extra {
            beta2[p] = 0.0;
        }
        project_ball(&mut beta);
        project_ball(&mut beta2);
        let step = 0.1;
        let mut value = repset_objective(sigma, &beta, &beta2);
        for _ in 0..200_000 {
            let mut g = vec![0.0; p];
            let mut g2 = vec![0.0; p + 1];
            for j in 0..p {
                let s = sigma[j];
                let w = 1.0 - s * s;
                g[j] = 2.0 * w * (beta[j] + s * beta2[j]);
                g2[j] = 2.0 * w * (beta2[j] + s * beta[j]);
            }
            if has_extra {
                g2[p] = 2.0 * beta2[p];
            }
            for j in 0..p {
                beta[j] += step * g[j];
            }
            for j in 0..=p {
                beta2[j] += step * g2[j];
            }
            project_ball(&mut beta);
            project_ball(&mut beta2);
            let next = repset_objective(sigma, &beta, &beta2);
            let done = (next - value).abs() <= 1e-10 * value.abs().max(1.0) * 1e-3;
            value = next;
            if done {
                break;
            }
        }
        if value > best {
            best = value;
        }
    }
    best
}

/// Per-coordinate candidate for the `p < p′` supremum: coordinate `i` with
/// `β_i = 1`, `β′_i = t` and the rest of `β′` on the unreached directions.
/// The optimum is `t = 1` when `σ² + σ ≤ 1` and `t = (1 − σ²)/σ` otherwise.
pub fn repset_candidate(sigma: &[f64]) -> f64 {
    sigma
        .iter()
        .map(|&s| {
            if s * s + s >= 1.0 {
                1.0 + (1.0 - s * s) * (2.0 - s * s)
            } else {
                repset_term(s)
            }
        })
        .fold(1.0, f64::max)
}
