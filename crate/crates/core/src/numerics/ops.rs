//! Activations and losses with their hand-written derivatives.

use super::tensor::Tensor2;
use crate::error::{M3vError, Result};

/// Probabilities below this are clamped before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Added to the L2 norm before dividing, so zero vectors map to zero.
pub const NORM_EPS: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log Σ exp(xᵢ)` computed stably. Terms are summed in sorted order, so the
/// result does not depend on the order of `xs`.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + sorted_sum(xs.map(|x| (x - max).exp()).collect()).ln()
}

/// Order-independent sum: adds the values in ascending order.
pub fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Mean of `−ln p[label]` over rows.
pub fn cross_entropy(probs: &Tensor2, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(LOG_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of the mean softmax cross-entropy with respect to the logits:
/// `(p − onehot(y)) / N`, scaled by `weight`.
pub fn cross_entropy_logit_grad(probs: &Tensor2, labels: &[usize], weight: f64) -> Result<Tensor2> {
    check_labels(probs, labels)?;
    let n = labels.len() as f64;
    let mut g = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let row = g.row_mut(i);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= weight / n);
    }
    Ok(g)
}

fn check_labels(probs: &Tensor2, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(M3vError::shape(
            "cross_entropy",
            probs.shape(),
            (labels.len(), 1),
        ));
    }
    if labels.is_empty() {
        return Err(M3vError::Input("cross_entropy on an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(M3vError::Input(format!(
            "label {bad} outside {{0..{}}}",
            probs.cols() - 1
        )));
    }
    Ok(())
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    x.map(|v| v.max(0.0))
}

/// Backward through ReLU given the pre-activation.
pub fn relu_backward(pre: &Tensor2, dout: &Tensor2) -> Tensor2 {
    let mut g = dout.clone();
    for (g, &p) in g.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    g
}

pub fn tanh(x: &Tensor2) -> Tensor2 {
    x.map(f64::tanh)
}

/// Backward through tanh given its output `y`: `dout · (1 − y²)`.
pub fn tanh_backward(y: &Tensor2, dout: &Tensor2) -> Tensor2 {
    let mut g = dout.clone();
    for (g, &y) in g.data_mut().iter_mut().zip(y.data()) {
        *g *= 1.0 - y * y;
    }
    g
}

/// Row-wise `u / (‖u‖ + ε)`. Returns the normalized rows and the row norms.
pub fn l2_normalize(u: &Tensor2) -> (Tensor2, Vec<f64>) {
    let mut z = u.clone();
    let mut norms = Vec::with_capacity(u.rows());
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm + NORM_EPS;
        row.iter_mut().for_each(|v| *v /= denom);
        norms.push(norm);
    }
    (z, norms)
}

/// Backward through [`l2_normalize`]:
/// `du = g/(r+ε) − u (u·g) / (r (r+ε)²)`.
pub fn l2_normalize_backward(u: &Tensor2, norms: &[f64], dz: &Tensor2) -> Tensor2 {
    let mut du = Tensor2::zeros(u.rows(), u.cols());
    for r in 0..u.rows() {
        let ur = u.row(r);
        let gr = dz.row(r);
        let norm = norms[r];
        let denom = norm + NORM_EPS;
        let ug: f64 = ur.iter().zip(gr).map(|(a, b)| a * b).sum();
        let coeff = if norm > 0.0 {
            ug / (norm * denom * denom)
        } else {
            0.0
        };
        for ((d, &u), &g) in du.row_mut(r).iter_mut().zip(ur).zip(gr) {
            *d = g / denom - u * coeff;
        }
    }
    du
}
