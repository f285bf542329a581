use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Max-subtracted softmax over the last axis of `batch x classes` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let k = *logits.shape().last().expect("tensor has rank >= 1");
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        softmax_row(row);
    }
    out
}

fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Cross-entropy of one logit vector against a class index.
///
/// Returns `(-log softmax(logits)[label], softmax(logits) - onehot(label))`.
pub fn softmax_xent<T: Real>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Data(format!(
            "label {} out of range for {} classes",
            label,
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_z = logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    let loss = log_z - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&v| (v - log_z).exp()).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}
