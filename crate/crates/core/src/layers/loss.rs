use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of `B×C` logits, stabilized by subtracting the row max.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c] = *logits.shape() else {
        return Err(shape_err!("softmax expects B×C logits, got {:?}", logits.shape()));
    };
    let mut p = logits.clone();
    for row in p.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(p)
}

/// Mean negative log-likelihood of `labels` and its gradient
/// `(softmax − onehot)/B` with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[u32]) -> Result<(T, Tensor<T>)> {
    let [b, c] = *logits.shape() else {
        return Err(shape_err!("expected B×C logits, got {:?}", logits.shape()));
    };
    if labels.len() != b {
        return Err(shape_err!("{} labels for a batch of {b}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::Label { label: bad as usize, classes: c });
    }
    let inv_b = T::one() / T::lit(b as f64);
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (row, &label) in grad.data_mut().chunks_exact_mut(c).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_z = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += log_z - row[label as usize];
        for v in row.iter_mut() {
            *v = (*v - log_z).exp() * inv_b;
        }
        row[label as usize] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}

/// Index of the largest logit in each row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<u32> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}
