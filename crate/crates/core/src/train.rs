//! Minibatch SGD, the learning-rate schedule and frame-level evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::features::FrameSet;
use crate::layers::{argmax_rows, softmax_cross_entropy};
use crate::model::{Gradients, Model, ParamStore};
use crate::tensor::{Real, Tensor};

/// `velocity = momentum·velocity − lr·grad; param += velocity`.
pub fn sgd_update<T: Real>(param: &mut [T], velocity: &mut [T], grad: &[T], lr: T, momentum: T) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(shape_err!(
            "sgd update over {} params, {} grads, {} velocities",
            param.len(),
            grad.len(),
            velocity.len()
        ));
    }
    for ((p, v), &g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

/// Momentum SGD over every trainable tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let velocity = params
            .iter()
            .map(|p| p.trainable.then(|| vec![T::zero(); p.tensor.numel()]))
            .collect();
        Sgd { velocity }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64, momentum: f64) -> Result<()> {
        if grads.params.len() != params.len() || self.velocity.len() != params.len() {
            return Err(shape_err!(
                "{} gradients and {} velocities for {} parameters",
                grads.params.len(),
                self.velocity.len(),
                params.len()
            ));
        }
        let (lr, momentum) = (T::lit(lr), T::lit(momentum));
        for ((p, g), v) in params.iter_mut().zip(&grads.params).zip(&mut self.velocity) {
            if let (Some(g), Some(v)) = (g, v) {
                sgd_update(p.tensor.data_mut(), v, g.data(), lr, momentum)?;
            }
        }
        Ok(())
    }
}

/// Parameters of the improvement-gated halving schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub halving_factor: f64,
    /// Minimum relative decrease of the validation loss that counts as progress.
    pub improvement_threshold: f64,
    pub min_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { halving_factor: 0.5, improvement_threshold: 0.002, min_lr: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub momentum: f64,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.01,
            batch_size: 256,
            max_epochs: 20,
            momentum: 0.9,
            schedule: ScheduleConfig::default(),
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::config("initial_lr", format!("{} must be positive", self.initial_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", format!("{} is not in [0, 1)", self.momentum)));
        }
        let s = &self.schedule;
        if !(s.halving_factor > 0.0 && s.halving_factor < 1.0) {
            return Err(Error::config("halving_factor", format!("{} is not in (0, 1)", s.halving_factor)));
        }
        if !(s.improvement_threshold.is_finite() && s.improvement_threshold >= 0.0) {
            return Err(Error::config("improvement_threshold", "must be a non-negative number"));
        }
        if !(s.min_lr.is_finite() && s.min_lr >= 0.0) {
            return Err(Error::config("min_lr", "must be a non-negative number"));
        }
        Ok(())
    }
}

/// Why training ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Progress stalled again after halving had started.
    Converged,
    LrFloor,
    EpochBudget,
}

/// Learning-rate state carried between epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub lr: f64,
    /// Lowest validation loss seen so far.
    pub best: Option<f64>,
    pub epochs_since_improvement: usize,
    pub halving: bool,
    pub epoch: usize,
}

/// Outcome of one [`ScheduleState::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleDecision {
    /// The loss is a new best; callers keep this epoch's parameters.
    pub improved: bool,
    pub stop: Option<StopReason>,
}

impl ScheduleState {
    pub fn new(initial_lr: f64) -> Self {
        ScheduleState { lr: initial_lr, best: None, epochs_since_improvement: 0, halving: false, epoch: 0 }
    }

    /// Records the validation loss of the epoch just finished and sets the
    /// learning rate for the next one. Progress is the relative decrease
    /// against the best loss so far; the first epoch always counts.
    pub fn step(&mut self, val_loss: f64, cfg: &ScheduleConfig, max_epochs: usize) -> ScheduleDecision {
        self.epoch += 1;
        let progress = match self.best {
            None => f64::INFINITY,
            Some(best) if best.abs() > 0.0 => (best - val_loss) / best.abs(),
            Some(best) => if val_loss < best { f64::INFINITY } else { 0.0 },
        };
        let improved = self.best.is_none_or(|b| val_loss < b);
        if improved {
            self.best = Some(val_loss);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        let mut stop = None;
        if progress < cfg.improvement_threshold {
            if self.halving {
                stop = Some(StopReason::Converged);
            }
            self.halving = true;
        }
        if stop.is_none() && self.halving {
            self.lr *= cfg.halving_factor;
            if self.lr < cfg.min_lr {
                stop = Some(StopReason::LrFloor);
            }
        }
        if stop.is_none() && self.epoch >= max_epochs {
            stop = Some(StopReason::EpochBudget);
        }
        ScheduleDecision { improved, stop }
    }
}

/// Per-epoch record, one line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    /// Filled in by callers that have a clock.
    pub seconds: f64,
}

/// Mean loss and accuracy accumulated over one training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    pub batches: usize,
}

/// Batch boundaries for `n` frames. A lone trailing frame joins the previous
/// batch, since train-mode batch statistics need more than one sample.
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch).map(|s| (s, (s + batch).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s == 1) {
        let (_, end) = out.pop().unwrap();
        out.last_mut().unwrap().1 = end;
    }
    out
}

/// Frame order for `epoch`: a shuffle driven by its own ChaCha stream, so
/// every epoch is reproducible from the seed alone.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass over `data` in shuffled minibatches with a train-mode forward,
/// backward and SGD step per batch.
pub fn train_epoch<T: Real>(
    model: &mut Model<T>,
    opt: &mut Sgd<T>,
    data: &FrameSet,
    cfg: &TrainConfig,
    lr: f64,
    epoch: usize,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    check_geometry(model, data)?;
    let order = epoch_order(data.len(), cfg.seed, epoch);
    let (mut loss_sum, mut correct) = (0.0f64, 0usize);
    let ranges = batch_ranges(order.len(), cfg.batch_size);
    for (bi, &(s, e)) in ranges.iter().enumerate() {
        let (x, labels) = data.gather(&order[s..e])?;
        let labels = labels.ok_or_else(|| Error::Input("training frames need labels".into()))?;
        let x: Tensor<T> = x.cast();
        // Non-finite activations mean the weights have already blown up.
        let (logits, tape) = model.forward_train(&x).map_err(|e| match e {
            Error::Numeric(_) => Error::Divergence { batch: bi, loss: f64::NAN },
            e => e,
        })?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Divergence { batch: bi, loss });
        }
        correct += argmax_rows(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count();
        loss_sum += loss * (e - s) as f64;
        let grads = model.backward(tape, &dlogits)?;
        opt.step(model.params_mut(), &grads, lr, cfg.momentum)?;
    }
    let n = data.len() as f64;
    Ok(EpochStats { loss: loss_sum / n, accuracy: correct as f64 / n, batches: ranges.len() })
}

fn check_geometry<T: Real>(model: &Model<T>, data: &FrameSet) -> Result<()> {
    let c = model.config();
    let want = [c.input_channels, c.input_height, c.input_width];
    if data.input_shape() != want {
        return Err(shape_err!("frames are {:?}, model expects {:?}", data.input_shape(), want));
    }
    Ok(())
}

/// Infer-mode loss, accuracy and confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub classes: usize,
    /// Row-major `classes × classes`; row is the reference label, column the
    /// prediction.
    pub confusion: Vec<u64>,
}

impl Evaluation {
    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.confusion[truth * self.classes + predicted]
    }

    pub fn error_rate(&self) -> f64 {
        1.0 - self.accuracy
    }
}

/// Evaluates `model` on every frame of `data` in chunks of `batch_size`.
/// Running statistics are read, never updated.
pub fn evaluate<T: Real>(model: &Model<T>, data: &FrameSet, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    if !data.is_labeled() {
        return Err(Error::Input("evaluation needs labeled frames".into()));
    }
    check_geometry(model, data)?;
    let classes = model.config().num_classes;
    let mut confusion = vec![0u64; classes * classes];
    let (mut loss_sum, mut correct) = (0.0f64, 0usize);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.gather(chunk)?;
        let labels = labels.ok_or_else(|| Error::Input("evaluation needs labeled frames".into()))?;
        let logits = model.infer(&x.cast())?;
        let (loss, _) = softmax_cross_entropy(&logits, &labels)?;
        loss_sum += loss.as_f64() * chunk.len() as f64;
        for (p, &l) in argmax_rows(&logits).into_iter().zip(&labels) {
            confusion[l as usize * classes + p as usize] += 1;
            correct += usize::from(p == l);
        }
    }
    let total = data.len();
    Ok(Evaluation {
        loss: loss_sum / total as f64,
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        classes,
        confusion,
    })
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub epochs: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub reason: StopReason,
    pub history: Vec<Metrics>,
}

/// Trains until the schedule stops. After each epoch `observer` receives the
/// epoch's metrics, the model and whether this epoch is the best so far.
/// The schedule follows the validation loss when `valid` is given and the
/// training loss otherwise.
pub fn fit<T, F>(
    model: &mut Model<T>,
    train: &FrameSet,
    valid: Option<&FrameSet>,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<FitSummary>
where
    T: Real,
    F: FnMut(&Metrics, &Model<T>, bool) -> Result<()>,
{
    cfg.validate()?;
    let mut opt = Sgd::new(model.params());
    let mut sched = ScheduleState::new(cfg.initial_lr);
    let mut history = Vec::new();
    let mut best_epoch = 0;
    loop {
        let epoch = sched.epoch + 1;
        let lr = sched.lr;
        let stats = train_epoch(model, &mut opt, train, cfg, lr, epoch)?;
        let val = valid.filter(|v| !v.is_empty()).map(|v| evaluate(model, v, cfg.batch_size)).transpose()?;
        let metrics = Metrics {
            epoch,
            lr,
            train_loss: stats.loss,
            train_acc: stats.accuracy,
            val_loss: val.as_ref().map(|v| v.loss),
            val_acc: val.as_ref().map(|v| v.accuracy),
            seconds: 0.0,
        };
        let decision = sched.step(metrics.val_loss.unwrap_or(stats.loss), &cfg.schedule, cfg.max_epochs);
        if decision.improved {
            best_epoch = epoch;
        }
        observer(&metrics, model, decision.improved)?;
        history.push(metrics);
        if let Some(reason) = decision.stop {
            return Ok(FitSummary {
                epochs: epoch,
                best_loss: sched.best.unwrap_or(f64::NAN),
                best_epoch,
                reason,
                history,
            });
        }
    }
}
