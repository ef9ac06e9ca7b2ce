use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Real, Tensor};

/// Mean softmax cross-entropy over the batch, and its gradient
/// `(softmax − onehot) / batch`. Uses max-subtraction for stability.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (rows, classes) = logits.shape().rows_cols();
    if labels.len() != rows {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {rows} logit rows",
            labels.len()
        )));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::InvalidLabel { row, label, classes });
    }
    let z = logits.data();
    let inv_batch = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for (r, &label) in labels.iter().enumerate() {
        let row = &z[r * classes..(r + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|&v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() - (row[label].as_f64() - max);
        for (k, e) in exps.iter().enumerate() {
            let p = e / sum;
            let onehot = if k == label { 1.0 } else { 0.0 };
            grad.push(T::of((p - onehot) * inv_batch));
        }
    }
    Ok((loss * inv_batch, Tensor::from_vec(logits.shape(), grad)?))
}

/// `gamma · Σ(pred − target)²`, summed within a sample and averaged over the
/// batch. Only `pred` receives a gradient; `target` is a constant.
pub fn weighted_l2_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, gamma: f64) -> Result<(f64, Tensor<T>)> {
    ensure_same_shape("weighted_l2_loss", pred, target)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("loss weight must be finite and >= 0, got {gamma}")));
    }
    let batch = pred.dims()[0] as f64;
    let raw = crate::tensor::sum_sq_diff(pred, target)?;
    let scale = 2.0 * gamma / batch;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        *g = T::of(scale * (p.as_f64() - t.as_f64()));
    }
    Ok((gamma * raw / batch, grad))
}
