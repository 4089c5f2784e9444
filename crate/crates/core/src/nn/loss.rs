use super::tensor::Tensor;
use crate::error::Result;

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.ensure_same_shape(target, "mse")?;
    let count = pred.len().max(1) as f64;
    let mut sum = 0.0;
    let grad: Vec<f64> = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| {
            let d = p - t;
            sum += d * d;
            2.0 * d / count
        })
        .collect();
    let (h, w, c) = pred.shape();
    Ok((sum / count, Tensor::from_vec(h, w, c, grad)?))
}
