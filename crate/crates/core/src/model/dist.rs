use crate::error::{Error, Result};

/// Floor applied to `q` before the log ratio.
pub const KL_Q_FLOOR: f64 = 1e-12;

/// Numerically stable softmax in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&x| (x as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `Σ pᵢ·ln(pᵢ/qᵢ)` with `0·ln(0/q) = 0` and `q` floored at [`KL_Q_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(KL_Q_FLOOR)).ln())
        .sum();
    // rounding can push an exact match slightly below zero
    Ok(kl.max(0.0))
}
