//! Central finite-difference verification of analytic gradients.
//!
//! All checks run in `f64`. Each layer is reduced to a scalar by projecting
//! its output onto a fixed random tensor, so every output element
//! contributes to the gradient being checked.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::arch::{DenseNetConfig, Variant};
use crate::error::{Error, Result};
use crate::layers::{
    avgpool2d, avgpool2d_backward, batchnorm_backward, batchnorm_train, concat_channels, conv2d,
    conv2d_backward, global_avgpool, global_avgpool_backward, linear, linear_backward, relu, relu_backward,
    softmax_cross_entropy, split_channels, BN_EPS,
};
use crate::model::Model;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Step for functions linear in the perturbed argument. Central differences
/// have no truncation error there, so the largest step minimizes roundoff.
const LINEAR_EPS: f64 = 1e-4;

/// Step for smooth nonlinear functions, balancing roundoff against the
/// third-order truncation term.
const SMOOTH_EPS: f64 = 1e-5;

/// Step for the whole network, paired with Richardson extrapolation. Kink
/// crossings are detected and skipped, so the step can stay large enough
/// that roundoff is negligible even on tiny gradient entries.
const NETWORK_EPS: f64 = 1e-4;

/// Threshold a layer must stay under to pass.
pub const TOLERANCE: f64 = 1e-4;

/// Compares `analytic` against central differences of the scalar function
/// `f` around `x`, returning the largest elementwise relative error
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor<f64>, analytic: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    Ok(piecewise_diff_check(|x| Ok((f(x)?, ())), x, analytic, eps, DiffScheme::Central)?.max_rel_err)
}

/// Error summary from [`piecewise_diff_check`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiffStats {
    pub max_rel_err: f64,
    /// Elements compared.
    pub probes: usize,
    /// Elements skipped because the two probes landed on different pieces.
    pub skipped: usize,
}

impl DiffStats {
    fn merge(self, other: DiffStats) -> DiffStats {
        DiffStats {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            probes: self.probes + other.probes,
            skipped: self.skipped + other.skipped,
        }
    }
}

/// How the numeric derivative is formed from function values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffScheme {
    /// `(f(x+ε) − f(x−ε)) / 2ε`, truncation error O(ε²).
    Central,
    /// `(4·D(ε/2) − D(ε)) / 3` over two central differences `D`, which
    /// cancels the ε² term. Lets a large ε keep roundoff small.
    Richardson,
}

/// Like [`finite_diff_check`] for piecewise-smooth functions. `f` also
/// returns a key identifying the smooth piece it evaluated on (for a network,
/// its ReLU activation pattern). Elements where any probe lands on a
/// different piece than `x` itself straddle a kink and are skipped rather
/// than compared.
pub fn piecewise_diff_check<F, P>(
    mut f: F,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    scheme: DiffScheme,
) -> Result<DiffStats>
where
    F: FnMut(&Tensor<f64>) -> Result<(f64, P)>,
    P: PartialEq,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Input(format!("finite-difference step {eps} is outside [1e-7, 1e-4]")));
    }
    if x.shape() != analytic.shape() {
        return Err(Error::Shape(format!(
            "analytic gradient {:?} does not match input {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    analytic.check_finite("analytic gradient")?;
    let (_, centre) = f(x)?;
    let mut probe = x.clone();
    let mut stats = DiffStats::default();
    // Returns the central difference at step `h`, or `None` on a kink.
    let mut central = |probe: &mut Tensor<f64>, i: usize, h: f64| -> Result<Option<f64>> {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let (up, up_piece) = f(probe)?;
        probe.data_mut()[i] = orig - h;
        let (down, down_piece) = f(probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value near element {i}")));
        }
        let same = up_piece == centre && down_piece == centre;
        Ok(same.then(|| (up - down) / (2.0 * h)))
    };
    for i in 0..x.numel() {
        stats.probes += 1;
        let numeric = match scheme {
            DiffScheme::Central => central(&mut probe, i, eps)?,
            DiffScheme::Richardson => match (central(&mut probe, i, eps)?, central(&mut probe, i, eps / 2.0)?) {
                (Some(full), Some(half)) => Some((4.0 * half - full) / 3.0),
                _ => None,
            },
        };
        let Some(numeric) = numeric else {
            stats.skipped += 1;
            continue;
        };
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        stats.max_rel_err = stats.max_rel_err.max(rel);
    }
    Ok(stats)
}

/// Outcome for one layer primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub probes: usize,
    /// Probes straddling a ReLU kink; only the whole-network check has any.
    pub skipped: usize,
}

impl LayerCheck {
    /// Under [`TOLERANCE`] with at most a tenth of the probes skipped.
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE && self.skipped * 10 <= self.probes
    }
}

/// [`piecewise_diff_check`] for functions without kinks.
fn smooth<F>(mut f: F, x: &Tensor<f64>, analytic: &Tensor<f64>, eps: f64) -> Result<DiffStats>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    piecewise_diff_check(|x| Ok((f(x)?, ())), x, analytic, eps, DiffScheme::Central)
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn conv_case(rng: &mut ChaCha8Rng, kernel: usize, instance: usize) -> Result<DiffStats> {
    let (pad, stride) = match (kernel, instance % 3) {
        (1, _) => (0, 1),
        (_, 0) => (1, 1),
        (_, 1) => (0, 1),
        _ => (1, 2),
    };
    let x = normal(rng, &[2, 3, 5, 5]);
    let w = normal(rng, &[4, 3, kernel, kernel]);
    let y = conv2d(&x, &w, stride, pad)?;
    let proj = normal(rng, y.shape());
    let (dx, dw) = conv2d_backward(&x, &w, &proj, stride, pad)?;
    let ex = smooth(|x| Ok(dot(&conv2d(x, &w, stride, pad)?, &proj)), &x, &dx, LINEAR_EPS)?;
    let ew = smooth(|w| Ok(dot(&conv2d(&x, w, stride, pad)?, &proj)), &w, &dw, LINEAR_EPS)?;
    Ok(ex.merge(ew))
}

fn batchnorm_case(rng: &mut ChaCha8Rng) -> Result<DiffStats> {
    let x = normal(rng, &[8, 3, 2, 2]);
    let gamma = Tensor::from_fn(&[3], |_| 1.0 + 0.3 * rng.random::<f64>());
    let beta = normal(rng, &[3]);
    let (y, cache, _) = batchnorm_train(&x, gamma.data(), beta.data(), BN_EPS)?;
    let proj = normal(rng, y.shape());
    let (dx, dg, db) = batchnorm_backward(&proj, gamma.data(), &cache)?;
    let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| -> Result<f64> {
        Ok(dot(&batchnorm_train(x, g.data(), b.data(), BN_EPS)?.0, &proj))
    };
    let ex = smooth(|x| f(x, &gamma, &beta), &x, &dx, SMOOTH_EPS)?;
    let eg = smooth(|g| f(&x, g, &beta), &gamma, &Tensor::new(&[3], dg)?, SMOOTH_EPS)?;
    let eb = smooth(|b| f(&x, &gamma, b), &beta, &Tensor::new(&[3], db)?, SMOOTH_EPS)?;
    Ok(ex.merge(eg).merge(eb))
}

fn relu_case(rng: &mut ChaCha8Rng) -> Result<DiffStats> {
    // Keep every point at least 0.1 away from the kink.
    let x = Tensor::from_fn(&[2, 3, 4, 4], |_| {
        let m = 0.1 + rng.random::<f64>();
        if rng.random::<bool>() { m } else { -m }
    });
    let proj = normal(rng, x.shape());
    let dx = relu_backward(&x, &proj)?;
    smooth(|x| Ok(dot(&relu(x), &proj)), &x, &dx, LINEAR_EPS)
}

fn avgpool_case(rng: &mut ChaCha8Rng) -> Result<DiffStats> {
    let x = normal(rng, &[2, 2, 5, 7]);
    let y = avgpool2d(&x)?;
    let proj = normal(rng, y.shape());
    let dx = avgpool2d_backward(x.shape(), &proj)?;
    smooth(|x| Ok(dot(&avgpool2d(x)?, &proj)), &x, &dx, LINEAR_EPS)
}

fn global_pool_case(rng: &mut ChaCha8Rng) -> Result<DiffStats> {
    let x = normal(rng, &[2, 3, 2, 9]);
    let proj = normal(rng, &[2, 3, 1, 1]);
    let dx = global_avgpool_backward(x.shape(), &proj)?;
    smooth(|x| Ok(dot(&global_avgpool(x)?, &proj)), &x, &dx, LINEAR_EPS)
}

fn linear_case(rng: &mut ChaCha8Rng) -> Result<DiffStats> {
    let x = normal(rng, &[3, 6]);
    let w = normal(rng, &[4, 6]);
    let b = normal(rng, &[4]);
    let proj = normal(rng, &[3, 4]);
    let (dx, dw, db) = linear_backward(&x, &w, &proj)?;
    let ex = smooth(|x| Ok(dot(&linear(x, &w, &b)?, &proj)), &x, &dx, LINEAR_EPS)?;
    let ew = smooth(|w| Ok(dot(&linear(&x, w, &b)?, &proj)), &w, &dw, LINEAR_EPS)?;
    let eb = smooth(|b| Ok(dot(&linear(&x, &w, b)?, &proj)), &b, &db, LINEAR_EPS)?;
    Ok(ex.merge(ew).merge(eb))
}

fn softmax_case(rng: &mut ChaCha8Rng) -> Result<DiffStats> {
    let logits = normal(rng, &[4, 4]);
    let labels: Vec<u32> = (0..4).map(|_| rng.random_range(0..4)).collect();
    let (_, grad) = softmax_cross_entropy(&logits, &labels)?;
    smooth(|l| Ok(softmax_cross_entropy(l, &labels)?.0), &logits, &grad, SMOOTH_EPS)
}

fn concat_case(rng: &mut ChaCha8Rng) -> Result<DiffStats> {
    let a = normal(rng, &[2, 3, 2, 2]);
    let b = normal(rng, &[2, 5, 2, 2]);
    let proj = normal(rng, &[2, 8, 2, 2]);
    let parts = split_channels(&proj, &[3, 5])?;
    let ea = smooth(|a| Ok(dot(&concat_channels(&[a, &b])?, &proj)), &a, &parts[0], LINEAR_EPS)?;
    let eb = smooth(|b| Ok(dot(&concat_channels(&[&a, b])?, &proj)), &b, &parts[1], LINEAR_EPS)?;
    Ok(ea.merge(eb))
}

/// A small network per variant, checked end to end with respect to its input
/// and to a sample of parameters from every stage.
fn model_case(rng: &mut ChaCha8Rng, instance: usize) -> Result<DiffStats> {
    let variant = [Variant::Plain, Variant::C, Variant::BC][instance % 3];
    let cfg = DenseNetConfig {
        variant,
        depth: if variant == Variant::BC { 11 } else { 7 },
        blocks: 2,
        growth_rate: 2,
        compression: if variant == Variant::Plain { 1.0 } else { 0.5 },
        input_channels: 2,
        input_height: 6,
        input_width: 6,
        num_classes: 3,
        first_conv_channels: 3,
    };
    let model = Model::<f64>::build(&cfg, rng.random())?;
    let x = normal(rng, &[4, 2, 6, 6]);
    let labels = [0, 1, 2, 1];
    let loss = |m: &Model<f64>, x: &Tensor<f64>| -> Result<(f64, Vec<bool>)> {
        let (logits, tape) = m.clone().forward_train(x)?;
        Ok((softmax_cross_entropy(&logits, &labels)?.0, tape.activation_pattern()))
    };
    let mut m = model.clone();
    let (logits, tape) = m.forward_train(&x)?;
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
    let grads = m.backward(tape, &dlogits)?;

    let mut stats = piecewise_diff_check(|x| loss(&model, x), &x, &grads.input, NETWORK_EPS, DiffScheme::Richardson)?;
    for (i, p) in model.params().iter().enumerate() {
        let Some(g) = &grads.params[i] else { continue };
        // Every third tensor keeps the check fast while touching every stage.
        if i % 3 != 0 && !p.name.starts_with("head") {
            continue;
        }
        let s = piecewise_diff_check(
            |t| {
                let mut probe = model.clone();
                *probe.params_mut().tensor_mut(i) = t.clone();
                loss(&probe, &x)
            },
            &p.tensor,
            g,
            NETWORK_EPS,
            DiffScheme::Richardson,
        )?;
        stats = stats.merge(s);
    }
    Ok(stats)
}

/// Names of the primitives covered by [`check_layers`], in report order.
pub const LAYERS: [&str; 10] = [
    "conv3x3",
    "conv1x1",
    "batchnorm",
    "relu",
    "avgpool2d",
    "global_avgpool",
    "linear",
    "softmax_cross_entropy",
    "concat_channels",
    "densenet",
];

/// Runs `instances` randomized finite-difference checks for every layer
/// primitive plus a whole small network.
pub fn check_layers(seed: u64, instances: usize) -> Result<Vec<LayerCheck>> {
    let mut out = Vec::with_capacity(LAYERS.len());
    for (li, &layer) in LAYERS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((li as u64 + 1) << 32));
        let mut stats = DiffStats::default();
        for i in 0..instances {
            let s = match layer {
                "conv3x3" => conv_case(&mut rng, 3, i)?,
                "conv1x1" => conv_case(&mut rng, 1, i)?,
                "batchnorm" => batchnorm_case(&mut rng)?,
                "relu" => relu_case(&mut rng)?,
                "avgpool2d" => avgpool_case(&mut rng)?,
                "global_avgpool" => global_pool_case(&mut rng)?,
                "linear" => linear_case(&mut rng)?,
                "softmax_cross_entropy" => softmax_case(&mut rng)?,
                "concat_channels" => concat_case(&mut rng)?,
                _ => model_case(&mut rng, i)?,
            };
            stats = stats.merge(s);
        }
        out.push(LayerCheck {
            layer,
            instances,
            max_rel_err: stats.max_rel_err,
            probes: stats.probes,
            skipped: stats.skipped,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_linear_function() {
        let x = Tensor::new(&[3], alloc::vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::new(&[3], alloc::vec![2.0, 3.0, -1.0]).unwrap();
        let err = finite_diff_check(|x| Ok(dot(x, &g)), &x, &g, 1e-6).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::new(&[2], alloc::vec![1.0, 2.0]).unwrap();
        let wrong = Tensor::new(&[2], alloc::vec![2.0, 4.5]).unwrap();
        let err = finite_diff_check(|x| Ok(x.data().iter().map(|v| v * v).sum()), &x, &wrong, 1e-6).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        let x = Tensor::new(&[1], alloc::vec![1.0]).unwrap();
        assert!(finite_diff_check(|_| Ok(0.0), &x, &x, 1e-2).is_err());
        let e = finite_diff_check(|_| Ok(f64::NAN), &x, &x, 1e-6).unwrap_err();
        assert!(matches!(e, Error::Numeric(_)));
    }

    #[test]
    fn relu_is_exact_off_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert!(relu_case(&mut rng).unwrap().max_rel_err < 1e-7);
    }

    #[test]
    fn conv3x3_single_channel_5x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = normal(&mut rng, &[1, 1, 5, 5]);
        let w = normal(&mut rng, &[2, 1, 3, 3]);
        let proj = normal(&mut rng, &[1, 2, 3, 3]);
        let (dx, dw) = conv2d_backward(&x, &w, &proj, 1, 0).unwrap();
        let ex = finite_diff_check(|x| Ok(dot(&conv2d(x, &w, 1, 0)?, &proj)), &x, &dx, 1e-6).unwrap();
        let ew = finite_diff_check(|w| Ok(dot(&conv2d(&x, w, 1, 0)?, &proj)), &w, &dw, 1e-6).unwrap();
        assert!(ex < 1e-5 && ew < 1e-5, "{ex} {ew}");
    }

    #[test]
    fn softmax_ce_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let e = softmax_case(&mut rng).unwrap().max_rel_err;
            assert!(e < 1e-6, "{e}");
        }
        // Relative error is dominated by tiny entries; absolute error must be tight.
        let logits = normal(&mut rng, &[4, 4]);
        let labels = [0, 3, 1, 2];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut probe = logits.clone();
        for i in 0..16 {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + 1e-6;
            let up = softmax_cross_entropy(&probe, &labels).unwrap().0;
            probe.data_mut()[i] = orig - 1e-6;
            let down = softmax_cross_entropy(&probe, &labels).unwrap().0;
            probe.data_mut()[i] = orig;
            assert!(((up - down) / 2e-6 - grad.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn all_layers_pass_two_instances() {
        for c in check_layers(42, 2).unwrap() {
            assert!(c.passed(), "{} failed with {}", c.layer, c.max_rel_err);
        }
    }
}
