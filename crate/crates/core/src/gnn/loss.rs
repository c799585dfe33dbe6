use super::model::check_targets;
use super::tape::softmax_cross_entropy;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy of `N × q` logits against `targets`, and its
/// gradient `(softmax − onehot) / N`. Targets are plain class indices; a
/// [`LabelMap`](crate::cloud::LabelMap) converts with `labels()`.
pub fn cross_entropy_loss<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!("logits must be N×q, got {:?}", logits.shape())));
    }
    let (n, q) = (logits.rows(), logits.cols());
    check_targets(targets, n, q)?;
    let (loss, mut grad) = softmax_cross_entropy(logits.data(), q, targets);
    let inv = T::one() / T::from_f64(n as f64);
    for (i, &t) in targets.iter().enumerate() {
        grad[i * q + t] -= T::one();
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss, Tensor::matrix(n, q, grad)?))
}
