//! Per-channel batch normalization over batch and spatial positions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Variance floor added inside the square root.
pub const BN_EPS: f64 = 1e-5;

/// Weight of the old running statistic: `new = 0.9·old + 0.1·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

/// Batch statistics (biased variance) from a train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

fn channel_layout<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c] => Ok((b, c, 1)),
        [b, c, h, w] => Ok((b, c, h * w)),
        _ => Err(shape_err!("batchnorm expects rank 2 or 4, got {:?}", x.shape())),
    }
}

fn check_params<T: Real>(c: usize, params: &[&[T]]) -> Result<()> {
    for p in params {
        if p.len() != c {
            return Err(shape_err!("batchnorm parameter has {} entries for {c} channels", p.len()));
        }
    }
    Ok(())
}

/// Train-mode forward: normalizes with the batch statistics, which are also
/// returned so the caller can fold them into the running averages.
pub fn batchnorm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, BnCache<T>, BnStats<T>)> {
    let (b, c, plane) = channel_layout(x)?;
    check_params(c, &[gamma, beta])?;
    let count = b * plane;
    if count < 2 {
        return Err(Error::DegenerateBatch(alloc::format!(
            "train-mode batchnorm needs at least 2 values per channel, got {count}"
        )));
    }
    let inv_n = T::one() / T::lit(count as f64);
    let xs = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for n in 0..b {
        for (ch, m) in mean.iter_mut().enumerate() {
            let base = (n * c + ch) * plane;
            *m += xs[base..base + plane].iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_n);
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            let m = mean[ch];
            var[ch] += xs[base..base + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v *= inv_n);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = vec![T::zero(); xs.len()];
    let mut y = vec![T::zero(); xs.len()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            let (m, s, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in base..base + plane {
                let h = (xs[i] - m) * s;
                xhat[i] = h;
                y[i] = g * h + bt;
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), y)?,
        BnCache { xhat: Tensor::new(x.shape(), xhat)?, inv_std },
        BnStats { mean, var },
    ))
}

/// Infer-mode forward using running statistics.
pub fn batchnorm_infer<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let (b, c, plane) = channel_layout(x)?;
    check_params(c, &[gamma, beta, running_mean, running_var])?;
    let mut y = x.clone();
    let ys = y.data_mut();
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + eps).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for n in 0..b {
            let base = (n * c + ch) * plane;
            ys[base..base + plane].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    Ok(y)
}

/// Returns `(dx, dgamma, dbeta)` for a train-mode forward pass.
pub fn batchnorm_backward<T: Real>(
    dy: &Tensor<T>,
    gamma: &[T],
    cache: &BnCache<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if dy.shape() != cache.xhat.shape() {
        return Err(shape_err!("batchnorm grad {:?} vs {:?}", dy.shape(), cache.xhat.shape()));
    }
    let (b, c, plane) = channel_layout(dy)?;
    check_params(c, &[gamma])?;
    let (dys, xh) = (dy.data(), cache.xhat.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            for i in base..base + plane {
                dbeta[ch] += dys[i];
                dgamma[ch] += dys[i] * xh[i];
            }
        }
    }
    // dx = γ/(σ·N) · (N·dy − Σdy − x̂·Σ(dy·x̂))
    let count = T::lit((b * plane) as f64);
    let mut dx = vec![T::zero(); dys.len()];
    for ch in 0..c {
        let k = gamma[ch] * cache.inv_std[ch] / count;
        let (sb, sg) = (dbeta[ch], dgamma[ch]);
        for n in 0..b {
            let base = (n * c + ch) * plane;
            for i in base..base + plane {
                dx[i] = k * (count * dys[i] - sb - xh[i] * sg);
            }
        }
    }
    Ok((Tensor::new(dy.shape(), dx)?, dgamma, dbeta))
}

/// `running = momentum·running + (1 − momentum)·batch`.
pub fn update_running_stats<T: Real>(
    running_mean: &mut [T],
    running_var: &mut [T],
    stats: &BnStats<T>,
    momentum: T,
) {
    let keep = momentum;
    let take = T::one() - momentum;
    for (r, &m) in running_mean.iter_mut().zip(&stats.mean) {
        *r = keep * *r + take * m;
    }
    for (r, &v) in running_var.iter_mut().zip(&stats.var) {
        *r = keep * *r + take * v;
    }
}

/// Self-contained batch normalization layer (scale, shift and running
/// statistics) for callers that do not go through a [`crate::Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    /// Batch-statistics forward; updates the running averages.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (y, cache, stats) = batchnorm_train(x, &self.gamma, &self.beta, T::lit(BN_EPS))?;
        update_running_stats(&mut self.running_mean, &mut self.running_var, &stats, T::lit(BN_MOMENTUM));
        Ok((y, cache))
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        batchnorm_infer(x, &self.gamma, &self.beta, &self.running_mean, &self.running_var, T::lit(BN_EPS))
    }
}
