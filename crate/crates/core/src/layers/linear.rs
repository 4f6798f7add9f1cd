use alloc::vec;

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Real, Tensor};

fn flat_features<T: Real>(x: &Tensor<T>) -> (usize, usize) {
    let b = x.shape()[0];
    (b, x.numel() / b)
}

/// `y = x·Wᵀ + b` with `x` flattened to `B×F` and `weight` shaped `O×F`.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, f) = flat_features(x);
    let [o, wf] = *weight.shape() else {
        return Err(shape_err!("linear weight must be rank 2, got {:?}", weight.shape()));
    };
    if wf != f || bias.numel() != o {
        return Err(shape_err!(
            "linear weight {:?} / bias {:?} do not fit {f} input features",
            weight.shape(),
            bias.shape()
        ));
    }
    let mut y = vec![T::zero(); b * o];
    for row in y.chunks_exact_mut(o) {
        row.copy_from_slice(bias.data());
    }
    gemm(b, f, o, x.data(), false, weight.data(), true, &mut y, true);
    Tensor::new(&[b, o], y)
}

/// Returns `(dx, dweight, dbias)`; `dx` has the (unflattened) shape of `x`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, f) = flat_features(x);
    let o = weight.shape()[0];
    if dy.shape() != [b, o] || weight.numel() != o * f {
        return Err(shape_err!("linear grad {:?} for weight {:?}", dy.shape(), weight.shape()));
    }
    let mut dw = vec![T::zero(); o * f];
    gemm(o, b, f, dy.data(), true, x.data(), false, &mut dw, false);
    let mut db = vec![T::zero(); o];
    for row in dy.data().chunks_exact(o) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let mut dx = vec![T::zero(); b * f];
    gemm(b, o, f, dy.data(), false, weight.data(), false, &mut dx, false);
    Ok((Tensor::new(x.shape(), dx)?, Tensor::new(weight.shape(), dw)?, Tensor::new(&[o], db)?))
}
