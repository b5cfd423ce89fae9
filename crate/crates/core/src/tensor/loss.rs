use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of an `n x classes` logit matrix, max-shifted.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (n, k) = logits.dims2();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k.max(1)).take(n) {
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean binary cross-entropy over a batch of two-class logits.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax - onehot) / n`. Labels are 1 for object, 0 for background.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(T, Tensor<T>)> {
    let (n, k) = logits.dims2();
    if k != 2 {
        return Err(Error::Dimension(format!(
            "softmax_xent expects 2 classes, got {k}"
        )));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Label(bad));
    }
    if n == 0 {
        return Ok((T::ZERO, logits.clone()));
    }
    let inv_n = T::ONE / T::from_f64(n as f64);
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = T::ZERO;
    for (i, (row, &label)) in logits.data().chunks(2).zip(labels).enumerate() {
        let m = if row[0] > row[1] { row[0] } else { row[1] };
        let e0 = (row[0] - m).exp();
        let e1 = (row[1] - m).exp();
        let sum = e0 + e1;
        let log_sum = sum.ln();
        let target = label as usize;
        // -log p_target = log(sum) - (z_target - m)
        total += log_sum - (row[target] - m);
        let g = &mut grad.data_mut()[2 * i..2 * i + 2];
        g[0] = e0 / sum * inv_n;
        g[1] = e1 / sum * inv_n;
        g[target] -= inv_n;
    }
    Ok((total * inv_n, grad))
}
