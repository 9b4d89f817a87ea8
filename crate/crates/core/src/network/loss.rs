//! Masked softmax cross-entropy over the shared class head.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean cross-entropy over the batch, restricted to classes where `mask` is
/// true. Returns the loss and its gradient w.r.t. `logits` (zero on masked-out
/// classes).
///
/// `logits` is `batch x classes`, row-major.
pub fn task_loss<F: Scalar>(logits: &[F], labels: &[usize], mask: &[bool]) -> Result<(F, Vec<F>)> {
    let classes = mask.len();
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(Error::Shape(format!(
            "{} logits for {} labels over {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("no active classes".into()));
    }
    let batch = F::from_usize(labels.len()).expect("batch size fits");
    let mut grad = vec![F::zero(); logits.len()];
    let mut total = F::zero();
    for ((row, g), &label) in logits.chunks_exact(classes).zip(grad.chunks_exact_mut(classes)).zip(labels) {
        if label >= classes || !mask[label] {
            return Err(Error::InactiveLabel { label });
        }
        let max = row.iter().zip(mask).filter(|(_, &m)| m).map(|(&z, _)| z).fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for ((&z, gi), &m) in row.iter().zip(g.iter_mut()).zip(mask) {
            if m {
                *gi = (z - max).exp();
                sum += *gi;
            }
        }
        total += max + sum.ln() - row[label];
        for (gi, &m) in g.iter_mut().zip(mask) {
            if m {
                *gi = *gi / sum / batch;
            }
        }
        g[label] -= F::one() / batch;
    }
    Ok((total / batch, grad))
}

/// Argmax over active classes; ties go to the lowest index.
pub fn predict<F: Scalar>(row: &[F], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, F)> = None;
    for (c, (&z, &m)) in row.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|(_, b)| z > b) {
            best = Some((c, z));
        }
    }
    best.map(|(c, _)| c)
}
