//! Pairwise representation-difference metrics.
//!
//! Representation arguments are `p × n` feature matrices sharing the sample
//! axis. Uncentered inputs are row-centered on the fly and flagged with
//! `aux["auto_centered"] = 1`.

use std::borrow::Cow;
use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::fmat::{FeatureMatrix, TaskVector};
use crate::linalg::{center_rows, orthonormal_rows, InvSqrtOptions};

/// Absolute slack on squared residuals in max-match admission, mirrored in
/// [`max_match_bound`] so the bound keeps dominating the greedy count.
pub const MATCH_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub aux: BTreeMap<String, f64>,
}

impl MetricValue {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            aux: BTreeMap::new(),
        }
    }

    pub fn with_aux(mut self, key: &str, value: f64) -> Self {
        self.aux.insert(key.to_string(), value);
        self
    }

    pub fn auto_centered(&self) -> bool {
        self.aux.get("auto_centered").is_some_and(|&v| v != 0.0)
    }
}

pub(crate) fn ensure_centered(z: &FeatureMatrix) -> (Cow<'_, FeatureMatrix>, bool) {
    if z.rows_are_centered() {
        (Cow::Borrowed(z), false)
    } else {
        warn!(
            "feature matrix {:?} is not row-centered; centering it",
            z.name()
        );
        (Cow::Owned(center_rows(z)), true)
    }
}

fn check_same_n(z: &FeatureMatrix, z2: &FeatureMatrix) -> Result<()> {
    if z.n() != z2.n() {
        return Err(shape_err(format!(
            "sample counts differ: {} vs {}",
            z.n(),
            z2.n()
        )));
    }
    Ok(())
}

/// Precomputed orthonormal row bases of a representation pair, so the
/// closed-form linear TD can be evaluated for many tasks at `O(n·(p+p′))`
/// each instead of forming `n × n` projectors.
#[derive(Debug, Clone)]
pub struct LinearTdPlan {
    basis_a: DMatrix<f64>,
    basis_b: DMatrix<f64>,
    auto_centered: bool,
}

impl LinearTdPlan {
    pub fn new(z: &FeatureMatrix, z2: &FeatureMatrix) -> Result<Self> {
        Self::with_options(z, z2, InvSqrtOptions::default())
    }

    pub fn with_options(z: &FeatureMatrix, z2: &FeatureMatrix, opts: InvSqrtOptions) -> Result<Self> {
        check_same_n(z, z2)?;
        let n = z.n();
        if n <= z.p().max(z2.p()) {
            return Err(shape_err(format!(
                "linear TD needs n > max(p, p'), got p={} p'={} n={n}",
                z.p(),
                z2.p()
            )));
        }
        let (za, ca) = ensure_centered(z);
        let (zb, cb) = ensure_centered(z2);
        Ok(Self {
            basis_a: orthonormal_rows(za.data(), opts)?,
            basis_b: orthonormal_rows(zb.data(), opts)?,
            auto_centered: ca || cb,
        })
    }

    pub fn n(&self) -> usize {
        self.basis_a.ncols()
    }

    /// `(1/n) ‖Y (P − P′)‖²` for a centered task vector.
    pub fn td(&self, y: &DVector<f64>) -> Result<f64> {
        if y.len() != self.n() {
            return Err(shape_err(format!(
                "task length {} does not match n={}",
                y.len(),
                self.n()
            )));
        }
        let ca = &self.basis_a * y;
        let cb = &self.basis_b * y;
        let diff = self.basis_a.tr_mul(&ca) - self.basis_b.tr_mul(&cb);
        Ok(diff.norm_squared() / self.n() as f64)
    }
}

/// Closed-form transferred discrepancy under linear probing with squared loss.
pub fn td_linear(z: &FeatureMatrix, z2: &FeatureMatrix, y: &TaskVector) -> Result<MetricValue> {
    td_linear_with(z, z2, y, InvSqrtOptions::default())
}

pub fn td_linear_with(
    z: &FeatureMatrix,
    z2: &FeatureMatrix,
    y: &TaskVector,
    opts: InvSqrtOptions,
) -> Result<MetricValue> {
    let plan = LinearTdPlan::with_options(z, z2, opts)?;
    let (yv, y_centered) = if y.centered() {
        (Cow::Borrowed(y.values()), false)
    } else {
        warn!("task vector is not centered; centering it");
        (Cow::Owned(y.centered_copy().values().clone()), true)
    };
    let value = plan.td(&yv)?;
    let mut m = MetricValue::new("td", value);
    if plan.auto_centered || y_centered {
        m = m.with_aux("auto_centered", 1.0);
    }
    Ok(m)
}

/// Fraction of samples on which two prediction vectors disagree.
pub fn td_cls(preds_a: &[u32], preds_b: &[u32]) -> Result<f64> {
    if preds_a.len() != preds_b.len() || preds_a.is_empty() {
        return Err(shape_err(format!(
            "prediction vectors must be non-empty and equal length ({} vs {})",
            preds_a.len(),
            preds_b.len()
        )));
    }
    let differ = preds_a.iter().zip(preds_b).filter(|(a, b)| a != b).count();
    Ok(differ as f64 / preds_a.len() as f64)
}

/// Mean over samples of half the ℓ1 distance between probability columns.
pub fn td_soft(probs_a: &DMatrix<f64>, probs_b: &DMatrix<f64>) -> Result<f64> {
    if probs_a.shape() != probs_b.shape() || probs_a.ncols() == 0 {
        return Err(shape_err(format!(
            "probability matrices differ in shape: {:?} vs {:?}",
            probs_a.shape(),
            probs_b.shape()
        )));
    }
    for probs in [probs_a, probs_b] {
        for (column, col) in probs.column_iter().enumerate() {
            let sum = col.sum();
            if (sum - 1.0).abs() > 1e-6 || col.iter().any(|&v| v < -1e-12) {
                return Err(Error::NotAProbability { column, sum });
            }
        }
    }
    let total: f64 = probs_a
        .column_iter()
        .zip(probs_b.column_iter())
        .map(|(a, b)| 0.5 * (a - b).lp_norm(1))
        .sum();
    Ok((total / probs_a.ncols() as f64).clamp(0.0, 1.0))
}

/// Orthonormal bases for both sides, with the narrower one first.
struct WhitenedPair {
    narrow: DMatrix<f64>,
    wide: DMatrix<f64>,
    swapped: bool,
    auto_centered: bool,
}

fn whitened_pair(z: &FeatureMatrix, z2: &FeatureMatrix) -> Result<WhitenedPair> {
    check_same_n(z, z2)?;
    let (za, ca) = ensure_centered(z);
    let (zb, cb) = ensure_centered(z2);
    let opts = InvSqrtOptions::default();
    let a = orthonormal_rows(za.data(), opts)?;
    let b = orthonormal_rows(zb.data(), opts)?;
    let swapped = a.nrows() > b.nrows();
    let (narrow, wide) = if swapped { (b, a) } else { (a, b) };
    Ok(WhitenedPair {
        narrow,
        wide,
        swapped,
        auto_centered: ca || cb,
    })
}

/// `1 − R²_CCA` with `R² = ‖Q′ᵀQ‖²_F / min(p, p′)`.
pub fn d_cca(z: &FeatureMatrix, z2: &FeatureMatrix) -> Result<MetricValue> {
    let pair = whitened_pair(z, z2)?;
    let cross = &pair.wide * pair.narrow.transpose();
    let r2 = cross.norm_squared() / pair.narrow.nrows() as f64;
    let mut m = MetricValue::new("cca", 1.0 - r2)
        .with_aux("r2", r2)
        .with_aux("swapped", f64::from(u8::from(pair.swapped)));
    if pair.auto_centered {
        m = m.with_aux("auto_centered", 1.0);
    }
    Ok(m)
}

/// `1 − ‖Z Z′ᵀ‖²_F / (‖Z Zᵀ‖_F ‖Z′ Z′ᵀ‖_F)` (linear CKA distance).
pub fn d_cka(z: &FeatureMatrix, z2: &FeatureMatrix) -> Result<MetricValue> {
    check_same_n(z, z2)?;
    let (za, ca) = ensure_centered(z);
    let (zb, cb) = ensure_centered(z2);
    let (a, b) = (za.data(), zb.data());
    let gram_a = (a * a.transpose()).norm();
    let gram_b = (b * b.transpose()).norm();
    if gram_a == 0.0 || gram_b == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let cross = (a * b.transpose()).norm_squared();
    let s = cross / (gram_a * gram_b);
    let mut m = MetricValue::new("cka", (1.0 - s).max(0.0)).with_aux("s_cka", s);
    if ca || cb {
        m = m.with_aux("auto_centered", 1.0);
    }
    Ok(m)
}

/// Greedy maximum-match similarity at closeness `eps`.
///
/// Rows are whitened so each has norm `√n`. Starting from all rows on both
/// sides, the admitted row with the largest residual against the span of
/// the other side's admitted rows is dropped (lower side, then lower index,
/// on ties) until every remaining residual is within `√n·eps`. Returns
/// `(|kept| + |kept′|) / (p + p′)`.
pub fn max_match_greedy(z: &FeatureMatrix, z2: &FeatureMatrix, eps: f64) -> Result<MetricValue> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be >= 0, got {eps}")));
    }
    check_same_n(z, z2)?;
    let (za, ca) = ensure_centered(z);
    let (zb, cb) = ensure_centered(z2);
    let opts = InvSqrtOptions::default();
    let a = orthonormal_rows(za.data(), opts)?;
    let b = orthonormal_rows(zb.data(), opts)?;
    let (p, p2) = (a.nrows(), b.nrows());
    // squared inner products between unit rows of the two sides
    let sq = (&a * b.transpose()).map(|v| v * v);
    let mut keep_a = vec![true; p];
    let mut keep_b = vec![true; p2];
    let limit = eps * eps + MATCH_SLACK;

    loop {
        // (side, index, squared residual / n)
        let mut worst: Option<(usize, usize, f64)> = None;
        for i in (0..p).filter(|&i| keep_a[i]) {
            let captured: f64 = (0..p2).filter(|&j| keep_b[j]).map(|j| sq[(i, j)]).sum();
            let resid = 1.0 - captured;
            if resid > limit && worst.is_none_or(|(_, _, w)| resid > w) {
                worst = Some((0, i, resid));
            }
        }
        for j in (0..p2).filter(|&j| keep_b[j]) {
            let captured: f64 = (0..p).filter(|&i| keep_a[i]).map(|i| sq[(i, j)]).sum();
            let resid = 1.0 - captured;
            if resid > limit && worst.is_none_or(|(_, _, w)| resid > w) {
                worst = Some((1, j, resid));
            }
        }
        match worst {
            Some((0, i, _)) => keep_a[i] = false,
            Some((_, j, _)) => keep_b[j] = false,
            None => break,
        }
    }

    let kept_a = keep_a.iter().filter(|&&k| k).count();
    let kept_b = keep_b.iter().filter(|&&k| k).count();
    let s = (kept_a + kept_b) as f64 / (p + p2) as f64;
    let mut m = MetricValue::new("maxmatch", s)
        .with_aux("eps", eps)
        .with_aux("matched_a", kept_a as f64)
        .with_aux("matched_b", kept_b as f64);
    if ca || cb {
        m = m.with_aux("auto_centered", 1.0);
    }
    Ok(m)
}

/// Largest `k` with `σ₁² + … + σ_k² ≥ k(1 − ε²)`; zero when none.
pub fn max_match_k(sigma: &[f64], eps: f64) -> Result<usize> {
    validate_sigma(sigma)?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be >= 0, got {eps}")));
    }
    let mut k = 0;
    let mut acc = 0.0;
    for (idx, s) in sigma.iter().enumerate() {
        acc += s * s;
        let m = (idx + 1) as f64;
        if acc >= m * (1.0 - eps * eps) - m * MATCH_SLACK {
            k = idx + 1;
        }
    }
    Ok(k)
}

/// Upper bound `2k / (p + p′)` on the expected maximum-match similarity.
pub fn max_match_bound(sigma: &[f64], eps: f64, p: usize, p2: usize) -> Result<f64> {
    if p + p2 == 0 || sigma.len() > p.min(p2) {
        return Err(shape_err(format!(
            "{} singular values do not fit p={p}, p'={p2}",
            sigma.len()
        )));
    }
    let k = max_match_k(sigma, eps)?;
    Ok(2.0 * k as f64 / (p + p2) as f64)
}

pub(crate) fn validate_sigma(sigma: &[f64]) -> Result<()> {
    if let Some(&bad) = sigma.iter().find(|&&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::SigmaOutOfRange { value: bad });
    }
    if sigma.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::UnsortedSigma);
    }
    Ok(())
}
