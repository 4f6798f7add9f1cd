use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Concatenates NCHW tensors along the channel axis, preserving input order.
pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or_else(|| shape_err!("concat of an empty list"))?;
    let (b, _, h, w) = first.dims4()?;
    let mut total = 0;
    for t in inputs {
        let (tb, tc, th, tw) = t.dims4()?;
        if (tb, th, tw) != (b, h, w) {
            return Err(shape_err!(
                "concat extents differ: {:?} vs {:?}",
                first.shape(),
                t.shape()
            ));
        }
        total += tc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(b * total * plane);
    for n in 0..b {
        for t in inputs {
            let c = t.shape()[1];
            data.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    Tensor::new(&[b, total, h, w], data)
}

/// Backward of [`concat_channels`]: splits `grad` into consecutive channel
/// groups of the given sizes.
pub fn split_channels<T: Real>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (b, c, h, w) = grad.dims4()?;
    if channels.iter().sum::<usize>() != c || channels.contains(&0) {
        return Err(shape_err!("cannot split {c} channels into {:?}", channels));
    }
    let plane = h * w;
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&k| Vec::with_capacity(b * k * plane)).collect();
    for n in 0..b {
        let mut off = n * c * plane;
        for (part, &k) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[off..off + k * plane]);
            off += k * plane;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &k)| Tensor::new(&[b, k, h, w], d))
        .collect()
}
