//! Bias-free 2-D convolution via im2col and a matrix product.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Real, Tensor};

/// `⌊(extent + 2·pad − kernel)/stride⌋ + 1`, or `None` if the kernel does not fit.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<(usize, usize, Self)> {
        let (b, c, h, w) = x.dims4()?;
        let (o, wc, kh, kw) = weight.dims4()?;
        if wc != c {
            return Err(shape_err!(
                "conv kernel expects {wc} input channels, input has {c}"
            ));
        }
        let oh = conv_output_extent(h, kh, stride, pad);
        let ow = conv_output_extent(w, kw, stride, pad);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(shape_err!(
                "{kh}x{kw} kernel (stride {stride}, pad {pad}) does not fit {h}x{w} input"
            ));
        };
        Ok((b, o, Geometry { c, h, w, kh, kw, oh, ow, stride, pad }))
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one sample (`c×h×w`) into a `(c·kh·kw) × (oh·ow)` matrix.
    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let p = self.positions();
        for ch in 0..self.c {
            let plane = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ch * self.kh + i) * self.kw + j;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters-and-adds columns back into `dx`.
    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let p = self.positions();
        for ch in 0..self.c {
            let plane = &mut dx[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ch * self.kh + i) * self.kw + j;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolves `x` (`B×C×H×W`) with `weight` (`O×C×kh×kw`). There is no bias
/// term; every convolution in the network feeds a batch normalization.
pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let (b, o, g) = Geometry::new(x, weight, stride, pad)?;
    let (ck, p) = (g.col_rows(), g.positions());
    let in_sz = g.c * g.h * g.w;
    let mut out = vec![T::zero(); b * o * p];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); ck * p] };
    for n in 0..b {
        let xs = &x.data()[n * in_sz..(n + 1) * in_sz];
        let cols: &[T] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut col);
            &col
        };
        gemm(o, ck, p, weight.data(), false, cols, false, &mut out[n * o * p..(n + 1) * o * p], false);
    }
    Tensor::new(&[b, o, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to its input and kernel.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, o, g) = Geometry::new(x, weight, stride, pad)?;
    if dy.shape() != [b, o, g.oh, g.ow] {
        return Err(shape_err!(
            "conv output grad {:?}, expected {:?}",
            dy.shape(),
            [b, o, g.oh, g.ow]
        ));
    }
    let (ck, p) = (g.col_rows(), g.positions());
    let in_sz = g.c * g.h * g.w;
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); weight.numel()];
    let pointwise = g.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); ck * p] };
    let mut dcol = if pointwise { Vec::new() } else { vec![T::zero(); ck * p] };
    for n in 0..b {
        let xs = &x.data()[n * in_sz..(n + 1) * in_sz];
        let dys = &dy.data()[n * o * p..(n + 1) * o * p];
        let cols: &[T] = if pointwise {
            xs
        } else {
            g.im2col(xs, &mut col);
            &col
        };
        // dW (o×ck) += dY (o×p) · colᵀ
        gemm(o, p, ck, dys, false, cols, true, &mut dw, true);
        // dcol (ck×p) = Wᵀ · dY
        let dxs = &mut dx[n * in_sz..(n + 1) * in_sz];
        if pointwise {
            gemm(ck, o, p, weight.data(), true, dys, false, dxs, false);
        } else {
            gemm(ck, o, p, weight.data(), true, dys, false, &mut dcol, false);
            g.col2im(&dcol, dxs);
        }
    }
    Ok((Tensor::new(x.shape(), dx)?, Tensor::new(weight.shape(), dw)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_3x3_shrinks_by_two() {
        let x = Tensor::<f32>::zeros(&[1, 3, 11, 40]);
        let w = Tensor::<f32>::zeros(&[16, 3, 3, 3]);
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap().shape(), &[1, 16, 9, 38]);
    }

    #[test]
    fn same_3x3_keeps_size() {
        let x = Tensor::<f32>::zeros(&[2, 5, 9, 38]);
        let w = Tensor::<f32>::zeros(&[12, 5, 3, 3]);
        assert_eq!(conv2d(&x, &w, 1, 1).unwrap().shape(), &[2, 12, 9, 38]);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn(&[2, 1, 3, 4], |i| i as f32 - 5.0);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &w, 1, 0).unwrap().data(), x.data());
    }

    #[test]
    fn direct_summation() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(&[1, 1, 2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn padded_matches_naive_loop() {
        // Naive direct convolution oracle, stride 2 and pad 1.
        let x = Tensor::<f64>::from_fn(&[2, 2, 5, 6], |i| ((i * 7919) % 13) as f64 - 6.0);
        let w = Tensor::<f64>::from_fn(&[3, 2, 3, 3], |i| ((i * 104729) % 11) as f64 - 5.0);
        let y = conv2d(&x, &w, 2, 1).unwrap();
        let (oh, ow) = (3, 3);
        assert_eq!(y.shape(), &[2, 3, oh, ow]);
        for n in 0..2 {
            for o in 0..3 {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for c in 0..2 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    let iy = (oy * 2 + i) as isize - 1;
                                    let ix = (ox * 2 + j) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                        continue;
                                    }
                                    s += x.data()[((n * 2 + c) * 5 + iy as usize) * 6 + ix as usize]
                                        * w.data()[((o * 2 + c) * 3 + i) * 3 + j];
                                }
                            }
                        }
                        assert_eq!(y.data()[((n * 3 + o) * oh + oy) * ow + ox], s);
                    }
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(conv2d(&x, &w, 1, 1).is_err());
    }

    #[test]
    fn backward_shapes() {
        let x = Tensor::<f32>::zeros(&[2, 4, 5, 5]);
        let w = Tensor::<f32>::zeros(&[6, 4, 3, 3]);
        let dy = Tensor::<f32>::zeros(&[2, 6, 5, 5]);
        let (dx, dw) = conv2d_backward(&x, &w, &dy, 1, 1).unwrap();
        assert_eq!(dx.shape(), x.shape());
        assert_eq!(dw.shape(), w.shape());
    }
}
