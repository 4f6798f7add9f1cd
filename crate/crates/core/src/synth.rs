//! Class-conditional Gaussian frames for desk-scale training checks.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::UtteranceFeatures;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub frames_per_class: usize,
    /// Per-coefficient distance between class means, in units of the noise
    /// standard deviation.
    pub separation: f64,
    pub channels: usize,
    pub bins: usize,
    /// Frames per utterance; the last utterance of a class may be shorter.
    pub utterance_frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 10,
            frames_per_class: 100,
            separation: 5.0,
            channels: 3,
            bins: 40,
            utterance_frames: 20,
            seed: 0,
        }
    }
}

/// Draws `frames_per_class` frames for every class from `N(μ_c, I)`, where
/// each coefficient of `μ_c` is `±separation/2` with a seeded random sign.
/// Any two classes therefore differ by `separation` in about half of their
/// coefficients. Utterances hold frames of a single class, so every spliced
/// context window is class-conditional too.
pub fn make_synthetic_dataset(cfg: &SynthConfig) -> Result<Vec<UtteranceFeatures>> {
    if cfg.num_classes < 2 {
        return Err(Error::config("synth_classes", format!("{} is below 2", cfg.num_classes)));
    }
    if !(cfg.separation.is_finite() && cfg.separation >= 0.0) {
        return Err(Error::config("synth_separation", "must be a non-negative number"));
    }
    if cfg.frames_per_class == 0 {
        return Err(Error::config("synth_frames_per_class", "must be at least 1"));
    }
    if cfg.utterance_frames == 0 {
        return Err(Error::config("synth_utterance_frames", "must be at least 1"));
    }
    if cfg.channels == 0 || cfg.bins == 0 {
        return Err(Error::config("input_channels", "synthetic frames need channels and bins"));
    }
    let dim = cfg.channels * cfg.bins;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.separation / 2.0;
    let means: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| (0..dim).map(|_| if rng.random::<bool>() { half } else { -half }).collect())
        .collect();
    let mut out = Vec::new();
    for (class, mean) in means.iter().enumerate() {
        let mut remaining = cfg.frames_per_class;
        let mut part = 0;
        while remaining > 0 {
            let t = remaining.min(cfg.utterance_frames);
            let mut values = Vec::with_capacity(t * dim);
            for _ in 0..t {
                for &m in mean {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    values.push((m + noise) as f32);
                }
            }
            let id = format!("synth-c{class:04}-{part:04}");
            let labels = alloc::vec![class as u32; t];
            out.push(UtteranceFeatures::new(id, values, t, cfg.channels, cfg.bins, Some(labels))?);
            remaining -= t;
            part += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(separation: f64) -> SynthConfig {
        SynthConfig { num_classes: 4, frames_per_class: 50, separation, bins: 10, utterance_frames: 16, seed: 1, ..Default::default() }
    }

    #[test]
    fn counts_labels_and_determinism() {
        let d = make_synthetic_dataset(&cfg(3.0)).unwrap();
        assert_eq!(d.len(), 4 * 4);
        assert_eq!(d.iter().map(|u| u.num_frames()).sum::<usize>(), 200);
        assert!(d.iter().all(|u| u.channels() == 3 && u.bins() == 10));
        assert!(d.iter().all(|u| u.labels().unwrap().iter().all(|&l| l == u.labels().unwrap()[0])));
        assert_eq!(d, make_synthetic_dataset(&cfg(3.0)).unwrap());
        assert_ne!(d, make_synthetic_dataset(&SynthConfig { seed: 2, ..cfg(3.0) }).unwrap());
    }

    /// Classifies each frame by its nearest empirical class mean.
    fn nearest_mean_accuracy(d: &[UtteranceFeatures], classes: usize) -> f64 {
        let dim = d[0].frame_len();
        let mut sums = alloc::vec![alloc::vec![0.0f64; dim]; classes];
        let mut counts = alloc::vec![0usize; classes];
        for u in d {
            for t in 0..u.num_frames() {
                let c = u.labels().unwrap()[t] as usize;
                counts[c] += 1;
                sums[c].iter_mut().zip(u.frame(t)).for_each(|(s, &v)| *s += v as f64);
            }
        }
        let means: Vec<Vec<f64>> = sums.iter().zip(&counts).map(|(s, &n)| s.iter().map(|v| v / n as f64).collect()).collect();
        let (mut hit, mut total) = (0, 0);
        for u in d {
            for t in 0..u.num_frames() {
                let dist = |m: &Vec<f64>| m.iter().zip(u.frame(t)).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>();
                let best = (0..classes).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap();
                hit += usize::from(best as u32 == u.labels().unwrap()[t]);
                total += 1;
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn large_separation_is_linearly_separable() {
        assert!(nearest_mean_accuracy(&make_synthetic_dataset(&cfg(5.0)).unwrap(), 4) > 0.99);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(make_synthetic_dataset(&SynthConfig { num_classes: 1, ..cfg(1.0) }).is_err());
        assert!(make_synthetic_dataset(&SynthConfig { separation: -1.0, ..cfg(1.0) }).is_err());
    }
}
