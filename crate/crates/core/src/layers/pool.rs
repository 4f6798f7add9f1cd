use alloc::vec;

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// 2×2 average pooling with stride 2. Odd trailing rows/columns are dropped,
/// so 9×38 becomes 4×19.
pub fn avgpool2d<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(shape_err!("2x2 average pool needs extents >= 2, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); b * c * oh * ow];
    let xs = x.data();
    for plane in 0..b * c {
        let src = &xs[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..ow {
                dst[oy * ow + ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

/// Spreads each output gradient as `g/4` over its window; dropped
/// rows/columns receive zero.
pub fn avgpool2d_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = *input_shape else {
        return Err(shape_err!("avgpool input shape {:?} is not rank 4", input_shape));
    };
    let (oh, ow) = (h / 2, w / 2);
    if dy.shape() != [b, c, oh, ow] {
        return Err(shape_err!("avgpool grad {:?} for input {:?}", dy.shape(), input_shape));
    }
    let quarter = T::lit(0.25);
    let mut dx = vec![T::zero(); b * c * h * w];
    for plane in 0..b * c {
        let g = &dy.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[oy * ow + ox] * quarter;
                dst[2 * oy * w + 2 * ox] = v;
                dst[2 * oy * w + 2 * ox + 1] = v;
                dst[(2 * oy + 1) * w + 2 * ox] = v;
                dst[(2 * oy + 1) * w + 2 * ox + 1] = v;
            }
        }
    }
    Tensor::new(input_shape, dx)
}

/// Mean over all spatial positions: `B×C×H×W → B×C×1×1`.
pub fn global_avgpool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let plane = h * w;
    let inv = T::one() / T::lit(plane as f64);
    let out = x
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(&[b, c, 1, 1], out)
}

pub fn global_avgpool_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = *input_shape else {
        return Err(shape_err!("global pool input shape {:?} is not rank 4", input_shape));
    };
    if dy.numel() != b * c {
        return Err(shape_err!("global pool grad {:?} for input {:?}", dy.shape(), input_shape));
    }
    let plane = h * w;
    let inv = T::one() / T::lit(plane as f64);
    let mut dx = vec![T::zero(); b * c * plane];
    for (dst, &g) in dx.chunks_exact_mut(plane).zip(dy.data()) {
        dst.fill(g * inv);
    }
    Tensor::new(input_shape, dx)
}
