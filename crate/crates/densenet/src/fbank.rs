//! Log-Mel filterbank front end.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    pub num_filters: usize,
    pub low_freq: f64,
    pub high_freq: f64,
    pub pre_emphasis: f64,
    pub log_floor: f64,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        FilterbankConfig {
            sample_rate: 16000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            fft_size: 512,
            num_filters: 40,
            low_freq: 20.0,
            high_freq: 8000.0,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

impl FilterbankConfig {
    pub fn frame_samples(&self) -> usize {
        (self.sample_rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    /// `1 + ⌊(n − frame)/shift⌋`, or 0 when the signal is shorter than a frame.
    pub fn num_frames(&self, n: usize) -> usize {
        let frame = self.frame_samples();
        if n < frame { 0 } else { 1 + (n - frame) / self.shift_samples() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if self.frame_samples() == 0 {
            return Err(Error::config("frame_length_ms", "frame holds no samples"));
        }
        if self.shift_samples() == 0 {
            return Err(Error::config("frame_shift_ms", "shift holds no samples"));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.frame_samples() {
            return Err(Error::config(
                "fft_size",
                format!("{} must be a power of two of at least {} samples", self.fft_size, self.frame_samples()),
            ));
        }
        if self.num_filters == 0 {
            return Err(Error::config("num_filters", "must be positive"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.low_freq >= 0.0 && self.low_freq < self.high_freq) {
            return Err(Error::config("low_freq", format!("need 0 <= {} < high_freq {}", self.low_freq, self.high_freq)));
        }
        if self.high_freq > nyquist {
            return Err(Error::config("high_freq", format!("{} exceeds the Nyquist frequency {nyquist}", self.high_freq)));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::config("pre_emphasis", format!("{} is not in [0, 1)", self.pre_emphasis)));
        }
        if !(self.log_floor.is_finite() && self.log_floor > 0.0) {
            return Err(Error::config("log_floor", "must be a small positive number"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale, stored sparsely per filter.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `(first_bin, weights)` for each filter.
    filters: Vec<(usize, Vec<f64>)>,
    /// Left edge, centre and right edge of every filter in Hz.
    edges: Vec<[f64; 3]>,
}

impl MelFilterbank {
    pub fn new(cfg: &FilterbankConfig) -> Self {
        let (lo, hi) = (hz_to_mel(cfg.low_freq), hz_to_mel(cfg.high_freq));
        let n = cfg.num_filters;
        let step = (hi - lo) / (n + 1) as f64;
        let bins = cfg.fft_size / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let mut filters = Vec::with_capacity(n);
        let mut edges = Vec::with_capacity(n);
        for m in 0..n {
            let (left, centre, right) = (lo + m as f64 * step, lo + (m + 1) as f64 * step, lo + (m + 2) as f64 * step);
            edges.push([mel_to_hz(left), mel_to_hz(centre), mel_to_hz(right)]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..bins {
                let mel = hz_to_mel(k as f64 * bin_hz);
                let w = if mel > left && mel <= centre {
                    (mel - left) / (centre - left)
                } else if mel > centre && mel < right {
                    (right - mel) / (right - centre)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        MelFilterbank { filters, edges }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// `[left, centre, right]` of filter `m` in Hz.
    pub fn edges_hz(&self, m: usize) -> [f64; 3] {
        self.edges[m]
    }

    /// Weight of FFT bin `k` in filter `m`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (first, w) = &self.filters[m];
        k.checked_sub(*first).and_then(|i| w.get(i)).copied().unwrap_or(0.0)
    }

    pub fn apply(&self, spectrum: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&spectrum[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Reusable log-Mel extractor: FFT plan, window and filters.
pub struct LogMel {
    cfg: FilterbankConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: MelFilterbank,
}

impl LogMel {
    pub fn new(cfg: &FilterbankConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let n = cfg.frame_samples();
        let window = (0..n)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1).max(1) as f64).cos())
            .collect();
        Ok(LogMel { cfg: cfg.clone(), fft, window, bank: MelFilterbank::new(cfg) })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// `T × num_filters` natural-log filterbank energies, row-major:
    /// pre-emphasis over the whole signal, Hamming-windowed frames, FFT
    /// magnitude, triangular mel filters, `ln(max(e, floor))`.
    pub fn compute(&self, wave: &[f32]) -> Result<Vec<f32>> {
        let cfg = &self.cfg;
        let t = cfg.num_frames(wave.len());
        if t == 0 {
            return Err(Error::Input(format!(
                "signal of {} samples is shorter than one {}-sample frame",
                wave.len(),
                cfg.frame_samples()
            )));
        }
        let emph: Vec<f64> = (0..wave.len())
            .map(|i| {
                let prev = if i == 0 { 0.0 } else { wave[i - 1] as f64 };
                wave[i] as f64 - cfg.pre_emphasis * prev
            })
            .collect();
        let (len, shift, nf) = (cfg.frame_samples(), cfg.shift_samples(), cfg.num_filters);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut mag = vec![0.0f64; cfg.fft_size / 2 + 1];
        let mut energies = vec![0.0f64; nf];
        let mut out = Vec::with_capacity(t * nf);
        let floor = cfg.log_floor;
        for f in 0..t {
            let frame = &emph[f * shift..f * shift + len];
            for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(s * w, 0.0);
            }
            buf[len..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
            self.fft.process(&mut buf);
            mag.iter_mut().zip(&buf).for_each(|(m, c)| *m = c.norm());
            self.bank.apply(&mag, &mut energies);
            out.extend(energies.iter().map(|&e| e.max(floor).ln() as f32));
        }
        Ok(out)
    }
}

/// One-shot convenience wrapper around [`LogMel`].
pub fn compute_logmel(wave: &[f32], cfg: &FilterbankConfig) -> Result<Vec<f32>> {
    LogMel::new(cfg)?.compute(wave)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_is_98_frames() {
        let cfg = FilterbankConfig::default();
        assert_eq!((cfg.frame_samples(), cfg.shift_samples()), (400, 160));
        let out = compute_logmel(&vec![0.0; 16000], &cfg).unwrap();
        assert_eq!(out.len(), 98 * 40);
    }

    #[test]
    fn silence_is_log_floor() {
        let cfg = FilterbankConfig::default();
        let out = compute_logmel(&vec![0.0; 800], &cfg).unwrap();
        let want = (1e-10f64).ln() as f32;
        assert!(out.iter().all(|&v| v == want));
    }

    #[test]
    fn short_signal_is_input_error() {
        assert!(matches!(compute_logmel(&[0.0; 399], &FilterbankConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn sine_peaks_in_its_band() {
        let cfg = FilterbankConfig::default();
        let wave: Vec<f32> =
            (0..16000).map(|i| (10000.0 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin()) as f32).collect();
        let lm = LogMel::new(&cfg).unwrap();
        let out = lm.compute(&wave).unwrap();
        for row in out.chunks_exact(40).skip(1).take(90) {
            let best = (0..40).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            let [l, _, r] = lm.filterbank().edges_hz(best);
            assert!(l < 1000.0 && 1000.0 < r, "filter {best} spans {l}..{r}");
        }
    }

    #[test]
    fn filters_cover_the_band() {
        let cfg = FilterbankConfig::default();
        let bank = MelFilterbank::new(&cfg);
        let centres: Vec<f64> = (0..40).map(|m| bank.edges_hz(m)[1]).collect();
        assert!(centres.windows(2).all(|w| w[0] < w[1]));
        let bin_hz = 16000.0 / 512.0;
        for k in 0..=256 {
            let f = k as f64 * bin_hz;
            let total: f64 = (0..40).map(|m| bank.weight(m, k)).sum();
            assert!(total >= 0.0);
            if f > cfg.low_freq && f < cfg.high_freq {
                assert!(total > 0.0, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn mel_round_trip() {
        for f in [0.0, 20.0, 700.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.5);
    }

    #[test]
    fn config_checks() {
        let bad = FilterbankConfig { fft_size: 256, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "fft_size"));
        let bad = FilterbankConfig { high_freq: 9000.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "high_freq"));
    }

    proptest::proptest! {
        #[test]
        fn frame_count_formula(n in 400usize..20000) {
            let cfg = FilterbankConfig::default();
            let out = compute_logmel(&vec![1.0; n], &cfg).unwrap();
            proptest::prop_assert_eq!(out.len() / 40, 1 + (n - 400) / 160);
        }
    }
}
