//! Frame-level acoustic features: deltas, corpus normalization and context
//! splicing into the `channels × window × bins` network input.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Half-width of the delta regression window.
pub const DELTA_WINDOW: usize = 2;

/// Variance floor applied to normalization statistics.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// One utterance: `T × channels × bins` values, row-major, plus optional
/// per-frame class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    id: String,
    frames: Vec<f32>,
    num_frames: usize,
    channels: usize,
    bins: usize,
    labels: Option<Vec<u32>>,
}

impl UtteranceFeatures {
    pub fn new(
        id: impl Into<String>,
        frames: Vec<f32>,
        num_frames: usize,
        channels: usize,
        bins: usize,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let id = id.into();
        if channels == 0 || bins == 0 {
            return Err(shape_err!("utterance {id}: channels and bins must be positive"));
        }
        if frames.len() != num_frames * channels * bins {
            return Err(shape_err!(
                "utterance {id}: {} values for {num_frames}x{channels}x{bins}",
                frames.len()
            ));
        }
        if let Some(l) = &labels {
            if l.len() != num_frames {
                return Err(Error::Input(format!(
                    "utterance {id}: {} labels for {num_frames} frames",
                    l.len()
                )));
            }
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("utterance {id}: non-finite value at index {i}")));
        }
        Ok(UtteranceFeatures { id, frames, num_frames, channels, bins, labels })
    }

    /// Single-channel features from a `T × bins` matrix.
    pub fn from_static(id: impl Into<String>, frames: Vec<f32>, bins: usize) -> Result<Self> {
        let t = frames.len().checked_div(bins).unwrap_or(0);
        Self::new(id, frames, t, 1, bins, None)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.bins
    }

    pub fn values(&self) -> &[f32] {
        &self.frames
    }

    /// `channels × bins` values of frame `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.num_frames {
            return Err(Error::Input(format!(
                "utterance {}: {} labels for {} frames",
                self.id,
                labels.len(),
                self.num_frames
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }
}

/// Regression delta over time with edge replication, applied independently
/// to each of `dim` coefficients of a `T × dim` sequence.
pub fn delta(seq: &[f32], num_frames: usize, dim: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; seq.len()];
    let denom: f32 = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f32).sum::<f32>();
    let last = num_frames.saturating_sub(1);
    for t in 0..num_frames {
        let row = &mut out[t * dim..(t + 1) * dim];
        for n in 1..=DELTA_WINDOW {
            let fwd = (t + n).min(last);
            let back = t.saturating_sub(n);
            let (f, b) = (&seq[fwd * dim..(fwd + 1) * dim], &seq[back * dim..(back + 1) * dim]);
            for (o, (&p, &q)) in row.iter_mut().zip(f.iter().zip(b)) {
                *o += n as f32 * (p - q);
            }
        }
        row.iter_mut().for_each(|v| *v /= denom);
    }
    out
}

/// Expands single-channel features to `{static, Δ, ΔΔ}`; ΔΔ is the delta
/// operator applied to Δ.
pub fn append_deltas(feat: &UtteranceFeatures) -> Result<UtteranceFeatures> {
    if feat.channels != 1 {
        return Err(shape_err!(
            "append_deltas expects static features, {} has {} channels",
            feat.id,
            feat.channels
        ));
    }
    let (t, bins) = (feat.num_frames, feat.bins);
    let d1 = delta(&feat.frames, t, bins);
    let d2 = delta(&d1, t, bins);
    let mut frames = Vec::with_capacity(3 * feat.frames.len());
    for i in 0..t {
        let r = i * bins..(i + 1) * bins;
        frames.extend_from_slice(&feat.frames[r.clone()]);
        frames.extend_from_slice(&d1[r.clone()]);
        frames.extend_from_slice(&d2[r]);
    }
    UtteranceFeatures::new(feat.id.clone(), frames, t, 3, bins, feat.labels.clone())
}

/// Global per-coefficient normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CmvnStats {
    pub channels: usize,
    pub bins: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl CmvnStats {
    /// Statistics that leave features unchanged.
    pub fn identity(channels: usize, bins: usize) -> Self {
        let n = channels * bins;
        CmvnStats { channels, bins, mean: vec![0.0; n], var: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.channels * self.bins
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || self.mean.len() != n || self.var.len() != n {
            return Err(shape_err!(
                "cmvn stats for {}x{} hold {} means and {} variances",
                self.channels,
                self.bins,
                self.mean.len(),
                self.var.len()
            ));
        }
        if self.mean.iter().any(|v| !v.is_finite()) || self.var.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Numeric("cmvn stats must be finite with positive variance".into()));
        }
        Ok(())
    }
}

/// Mean and biased variance of every `(channel, bin)` coefficient over all
/// frames of `corpus`, accumulated in `f64`; variances are floored at
/// [`VARIANCE_FLOOR`].
pub fn compute_cmvn_stats(corpus: &[UtteranceFeatures]) -> Result<CmvnStats> {
    let first = corpus.first().ok_or_else(|| Error::Input("cmvn statistics need a non-empty corpus".into()))?;
    let (channels, bins) = (first.channels, first.bins);
    let dim = channels * bins;
    let mut count = 0usize;
    let mut mean = vec![0.0f64; dim];
    for u in corpus {
        if (u.channels, u.bins) != (channels, bins) {
            return Err(shape_err!(
                "utterance {} is {}x{}, corpus is {channels}x{bins}",
                u.id,
                u.channels,
                u.bins
            ));
        }
        count += u.num_frames;
        for row in u.frames.chunks_exact(dim) {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64);
        }
    }
    if count < 2 {
        return Err(Error::Input(format!("cmvn statistics need at least 2 frames, corpus has {count}")));
    }
    let n = count as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    // Second pass around the mean avoids cancellation in E[x²] − E[x]².
    let mut var = vec![0.0f64; dim];
    for u in corpus {
        for row in u.frames.chunks_exact(dim) {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
    }
    var.iter_mut().for_each(|v| *v = (*v / n).max(VARIANCE_FLOOR));
    Ok(CmvnStats { channels, bins, mean, var })
}

/// `(x − mean)/√var` per coefficient. Not idempotent: a second application
/// renormalizes again.
pub fn apply_cmvn(feat: &UtteranceFeatures, stats: &CmvnStats) -> Result<UtteranceFeatures> {
    stats.validate()?;
    if (feat.channels, feat.bins) != (stats.channels, stats.bins) {
        return Err(shape_err!(
            "utterance {} is {}x{}, cmvn stats are {}x{}",
            feat.id,
            feat.channels,
            feat.bins,
            stats.channels,
            stats.bins
        ));
    }
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut out = feat.clone();
    for row in out.frames.chunks_exact_mut(stats.dim()) {
        for ((x, &m), &s) in row.iter_mut().zip(&stats.mean).zip(&inv_std) {
            *x = ((*x as f64 - m) * s) as f32;
        }
    }
    Ok(out)
}

/// Writes the context window of frame `t` into `out`, laid out
/// `channels × (left+1+right) × bins`. Frames beyond either utterance edge
/// repeat the edge frame.
pub fn splice_frame(feat: &UtteranceFeatures, t: usize, left: usize, right: usize, out: &mut [f32]) {
    let (c, bins) = (feat.channels, feat.bins);
    let height = left + 1 + right;
    debug_assert_eq!(out.len(), c * height * bins);
    let last = feat.num_frames - 1;
    for row in 0..height {
        let src_t = (t + row).saturating_sub(left).min(last);
        let src = feat.frame(src_t);
        for ch in 0..c {
            let dst = (ch * height + row) * bins;
            out[dst..dst + bins].copy_from_slice(&src[ch * bins..(ch + 1) * bins]);
        }
    }
}

/// Every frame of `feat` with its context window: `T × channels × (left+1+right) × bins`.
pub fn splice_context(feat: &UtteranceFeatures, left: usize, right: usize) -> Result<Tensor<f32>> {
    if feat.num_frames == 0 {
        return Err(Error::Input(format!("utterance {} has no frames to splice", feat.id)));
    }
    let height = left + 1 + right;
    let per = feat.channels * height * feat.bins;
    let mut data = vec![0.0f32; feat.num_frames * per];
    for (t, out) in data.chunks_exact_mut(per).enumerate() {
        splice_frame(feat, t, left, right, out);
    }
    Tensor::new(&[feat.num_frames, feat.channels, height, feat.bins], data)
}

/// A corpus addressed frame by frame. Context windows are spliced when a
/// batch is gathered, so memory stays proportional to the raw features.
#[derive(Debug, Clone)]
pub struct FrameSet {
    utterances: Vec<UtteranceFeatures>,
    index: Vec<(u32, u32)>,
    left: usize,
    right: usize,
    channels: usize,
    bins: usize,
    labeled: bool,
}

impl FrameSet {
    pub fn new(utterances: Vec<UtteranceFeatures>, left: usize, right: usize) -> Result<Self> {
        let (channels, bins) = utterances.first().map_or((0, 0), |u| (u.channels, u.bins));
        let labeled = utterances.iter().all(|u| u.labels.is_some());
        let mut index = Vec::new();
        for (ui, u) in utterances.iter().enumerate() {
            if (u.channels, u.bins) != (channels, bins) {
                return Err(shape_err!(
                    "utterance {} is {}x{}, corpus is {channels}x{bins}",
                    u.id,
                    u.channels,
                    u.bins
                ));
            }
            index.extend((0..u.num_frames as u32).map(|t| (ui as u32, t)));
        }
        Ok(FrameSet { utterances, index, left, right, channels, bins, labeled })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn utterances(&self) -> &[UtteranceFeatures] {
        &self.utterances
    }

    pub fn into_utterances(self) -> Vec<UtteranceFeatures> {
        self.utterances
    }

    /// True when every utterance carries labels.
    pub fn is_labeled(&self) -> bool {
        self.labeled && !self.utterances.is_empty()
    }

    pub fn context(&self) -> (usize, usize) {
        (self.left, self.right)
    }

    /// Per-frame input shape `[channels, left+1+right, bins]`.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.left + 1 + self.right, self.bins]
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        let (u, t) = self.index[i];
        self.utterances[u as usize].labels.as_ref().map(|l| l[t as usize])
    }

    /// All labels in frame order, or an input error if any are missing.
    pub fn labels(&self) -> Result<Vec<u32>> {
        (0..self.len()).map(|i| self.label(i).ok_or_else(|| self.unlabeled())).collect()
    }

    fn unlabeled(&self) -> Error {
        Error::Input("frame set has utterances without labels".into())
    }

    /// Spliced inputs `B × channels × height × bins` for the frames at
    /// `indices`, with their labels when the set is labeled.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f32>, Option<Vec<u32>>)> {
        if indices.is_empty() {
            return Err(Error::Input("cannot gather an empty batch".into()));
        }
        let [c, h, w] = self.input_shape();
        let per = c * h * w;
        let mut data = vec![0.0f32; indices.len() * per];
        let mut labels = self.is_labeled().then(|| Vec::with_capacity(indices.len()));
        for (out, &i) in data.chunks_exact_mut(per).zip(indices) {
            let &(u, t) = self
                .index
                .get(i)
                .ok_or_else(|| Error::Input(format!("frame {i} out of range for {} frames", self.len())))?;
            let utt = &self.utterances[u as usize];
            splice_frame(utt, t as usize, self.left, self.right, out);
            if let Some(l) = labels.as_mut() {
                l.push(utt.labels.as_ref().ok_or_else(|| self.unlabeled())?[t as usize]);
            }
        }
        Ok((Tensor::new(&[indices.len(), c, h, w], data)?, labels))
    }

    /// Splits whole utterances into `(rest, held_out)`, holding out every
    /// utterance whose position in a seeded shuffle falls in the first
    /// `fraction` of the corpus. At least one utterance stays on each side
    /// when there are two or more.
    pub fn split_utterances(self, fraction: f64, seed: u64) -> Result<(FrameSet, FrameSet)> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::config("holdout_fraction", format!("{fraction} is not in [0, 1)")));
        }
        let n = self.utterances.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let mut held = ((n as f64) * fraction).round() as usize;
        if fraction > 0.0 && n >= 2 {
            held = held.clamp(1, n - 1);
        }
        let mut is_held = vec![false; n];
        order[..held].iter().for_each(|&i| is_held[i] = true);
        let (left, right) = (self.left, self.right);
        let (mut rest, mut out) = (Vec::new(), Vec::new());
        for (i, u) in self.utterances.into_iter().enumerate() {
            if is_held[i] { out.push(u) } else { rest.push(u) }
        }
        Ok((FrameSet::new(rest, left, right)?, FrameSet::new(out, left, right)?))
    }
}
