//! Output heads fitted on frozen features.
//!
//! Linear heads use the closed-form least-squares solution. Logistic heads
//! are trained by deterministic full-batch gradient descent from zero.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::fmat::{ClassLabels, FeatureMatrix, Labels, TaskVector};
use crate::linalg::{psd_power, InvSqrtOptions, SymmetricPsd};
use crate::metrics::{td_cls, td_soft};

/// `h(z) = W·z + b` for a scalar target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearHead {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearHead {
    pub fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }
}

fn row_means(z: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(z.nrows(), z.row_iter().map(|r| r.mean()))
}

/// Least-squares head: `W = Y Zᵀ (Z Zᵀ)⁻¹`, with the intercept absorbing
/// any residual means (zero for centered inputs).
pub fn fit_linear_head(z: &FeatureMatrix, y: &TaskVector) -> Result<LinearHead> {
    fit_linear_head_with(z, y, InvSqrtOptions::default())
}

pub fn fit_linear_head_with(
    z: &FeatureMatrix,
    y: &TaskVector,
    opts: InvSqrtOptions,
) -> Result<LinearHead> {
    if y.len() != z.n() {
        return Err(shape_err(format!(
            "task length {} does not match n={}",
            y.len(),
            z.n()
        )));
    }
    if z.n() <= z.p() {
        return Err(shape_err(format!(
            "linear head needs n > p, got p={} n={}",
            z.p(),
            z.n()
        )));
    }
    let data = z.data();
    let (zc, mu) = if z.rows_are_centered() {
        (data.clone(), DVector::zeros(z.p()))
    } else {
        let mu = row_means(data);
        let mut zc = data.clone();
        for (mut row, m) in zc.row_iter_mut().zip(mu.iter()) {
            row.add_scalar_mut(-m);
        }
        (zc, mu)
    };
    let y_mean = y.values().mean();
    let yc = if y.centered() {
        y.values().clone()
    } else {
        y.values().add_scalar(-y_mean)
    };
    let gram = SymmetricPsd::new(&zc * zc.transpose())?;
    let gram_inv = psd_power(&gram, -1.0, opts)?;
    let cross = &zc * &yc;
    let w = gram_inv * cross;
    let b = if y.centered() && mu.iter().all(|&m| m == 0.0) {
        0.0
    } else {
        y_mean - w.dot(&mu)
    };
    Ok(LinearHead {
        w: w.iter().copied().collect(),
        b,
    })
}

pub fn predict_linear(h: &LinearHead, z: &FeatureMatrix) -> Result<DVector<f64>> {
    if h.w.len() != z.p() {
        return Err(shape_err(format!(
            "head expects p={}, features have p={}",
            h.w.len(),
            z.p()
        )));
    }
    let preds = z.data().tr_mul(&h.weights());
    Ok(preds.add_scalar(h.b))
}

/// Full-batch gradient descent settings for [`fit_logistic_head`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the max-norm of the gradient falls to this value.
    pub grad_tol: f64,
    pub l2: f64,
    /// Keep the per-iteration training loss.
    #[serde(skip)]
    pub track_loss: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iters: 2000,
            grad_tol: 1e-6,
            l2: 0.0,
            track_loss: false,
        }
    }
}

/// Multinomial logistic head: `softmax(W z + b)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticHead {
    /// `K × p`, row-major.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub config: LogisticConfig,
    pub converged: bool,
    pub iterations: usize,
    pub final_grad_norm: f64,
    #[serde(skip)]
    pub loss_history: Vec<f64>,
}

impl LogisticHead {
    pub fn num_classes(&self) -> usize {
        self.b.len()
    }

    pub fn p(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_classes(), self.p(), |k, j| self.w[k][j])
    }
}

/// Column-wise softmax with a max shift, in place.
fn softmax_columns(logits: &mut DMatrix<f64>) {
    for mut col in logits.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
}

fn cross_entropy(probs: &DMatrix<f64>, labels: &[u32]) -> f64 {
    let n = labels.len() as f64;
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[(y as usize, i)].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n
}

pub fn fit_logistic_head(
    z: &FeatureMatrix,
    labels: &ClassLabels,
    cfg: LogisticConfig,
) -> Result<LogisticHead> {
    let (p, n) = (z.p(), z.n());
    let k = labels.num_classes() as usize;
    if labels.len() != n {
        return Err(shape_err(format!(
            "label count {} does not match n={n}",
            labels.len()
        )));
    }
    if n < k {
        return Err(shape_err(format!("need n >= K, got n={n} K={k}")));
    }
    if labels.distinct_count() < 2 {
        return Err(shape_err("at least two distinct classes must be present"));
    }
    if !(cfg.learning_rate > 0.0) || cfg.grad_tol < 0.0 || cfg.l2 < 0.0 {
        return Err(Error::InvalidArgument(format!("bad logistic config {cfg:?}")));
    }

    // standardize rows; the affine map is folded back into W, b at the end
    let data = z.data();
    let mu = row_means(data);
    let mut scale = DVector::from_element(p, 1.0);
    let mut x = data.clone();
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row.add_scalar_mut(-mu[i]);
        let sd = (row.norm_squared() / n as f64).sqrt();
        if sd > 0.0 {
            scale[i] = sd;
            row /= sd;
        }
    }

    let mut onehot = DMatrix::<f64>::zeros(k, n);
    for (i, &y) in labels.labels().iter().enumerate() {
        onehot[(y as usize, i)] = 1.0;
    }

    let mut w = DMatrix::<f64>::zeros(k, p);
    let mut b = DVector::<f64>::zeros(k);
    let mut loss_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let inv_n = 1.0 / n as f64;

    let grad_norm = loop {
        let mut probs = &w * &x;
        for mut col in probs.column_iter_mut() {
            col += &b;
        }
        softmax_columns(&mut probs);
        if cfg.track_loss {
            let penalty = 0.5 * cfg.l2 * w.norm_squared();
            loss_history.push(cross_entropy(&probs, labels.labels()) + penalty);
        }
        let resid = (probs - &onehot) * inv_n;
        let grad_w = &resid * x.transpose() + &w * cfg.l2;
        let grad_b = resid.column_sum();
        let grad_norm = grad_w.amax().max(grad_b.amax());
        if grad_norm <= cfg.grad_tol {
            converged = true;
            break grad_norm;
        }
        if iterations == cfg.max_iters {
            break grad_norm;
        }
        w -= grad_w * cfg.learning_rate;
        b -= grad_b * cfg.learning_rate;
        iterations += 1;
    };

    for (j, mut col) in w.column_iter_mut().enumerate() {
        col /= scale[j];
    }
    let b = b - &w * mu;

    Ok(LogisticHead {
        w: w.row_iter().map(|r| r.iter().copied().collect()).collect(),
        b: b.iter().copied().collect(),
        config: cfg,
        converged,
        iterations,
        final_grad_norm: grad_norm,
        loss_history,
    })
}

/// `K × n` matrix whose column `i` is `softmax(W z_i + b)`.
pub fn predict_proba(h: &LogisticHead, z: &FeatureMatrix) -> Result<DMatrix<f64>> {
    if h.p() != z.p() {
        return Err(shape_err(format!(
            "head expects p={}, features have p={}",
            h.p(),
            z.p()
        )));
    }
    let mut logits = h.weight_matrix() * z.data();
    let b = DVector::from_column_slice(&h.b);
    for mut col in logits.column_iter_mut() {
        col += &b;
    }
    softmax_columns(&mut logits);
    Ok(logits)
}

/// Argmax of each column; ties go to the lowest class index.
pub fn argmax_columns(probs: &DMatrix<f64>) -> Vec<u32> {
    probs
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for k in 1..col.len() {
                if col[k] > col[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

pub fn predict_classes(h: &LogisticHead, z: &FeatureMatrix) -> Result<Vec<u32>> {
    Ok(argmax_columns(&predict_proba(h, z)?))
}

pub fn accuracy(predicted: &[u32], labels: &ClassLabels) -> f64 {
    let hits = predicted
        .iter()
        .zip(labels.labels())
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadKind {
    Linear,
    Logistic(LogisticConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    /// `(h − h′)²`, regression.
    Squared,
    /// Argmax disagreement.
    Hard,
    /// Half ℓ1 between softmax outputs.
    Soft,
}

/// Transferred discrepancy with a fitted head per representation.
///
/// Heads are fitted on `(z, z2, target)`. When `eval` is given the
/// discrepancy is averaged over those held-out features instead.
pub fn td_generic(
    z: &FeatureMatrix,
    z2: &FeatureMatrix,
    target: &Labels,
    eval: Option<(&FeatureMatrix, &FeatureMatrix)>,
    head: HeadKind,
    distance: DistanceKind,
) -> Result<f64> {
    if z.n() != z2.n() || target.len() != z.n() {
        return Err(shape_err(format!(
            "sample counts disagree: {} / {} / {}",
            z.n(),
            z2.n(),
            target.len()
        )));
    }
    let (ez, ez2) = eval.unwrap_or((z, z2));
    if ez.n() != ez2.n() {
        return Err(shape_err("evaluation splits have different sample counts"));
    }
    match (head, target, distance) {
        (HeadKind::Linear, Labels::Regression(y), DistanceKind::Squared) => {
            let h = fit_linear_head(z, y)?;
            let h2 = fit_linear_head(z2, y)?;
            let a = predict_linear(&h, ez)?;
            let b = predict_linear(&h2, ez2)?;
            Ok((a - b).norm_squared() / ez.n() as f64)
        }
        (HeadKind::Logistic(cfg), Labels::Classes(c), DistanceKind::Hard | DistanceKind::Soft) => {
            let h = fit_logistic_head(z, c, cfg)?;
            let h2 = fit_logistic_head(z2, c, cfg)?;
            let pa = predict_proba(&h, ez)?;
            let pb = predict_proba(&h2, ez2)?;
            if distance == DistanceKind::Hard {
                td_cls(&argmax_columns(&pa), &argmax_columns(&pb))
            } else {
                td_soft(&pa, &pb)
            }
        }
        (head, target, distance) => Err(Error::InvalidArgument(format!(
            "unsupported combination: {head:?} head, {} target, {distance:?} distance",
            match target {
                Labels::Regression(_) => "regression",
                Labels::Classes(_) => "class",
            }
        ))),
    }
}
