use std::time::Instant;

use crate::error::Result;
use crate::model::{infer, ForwardOptions, HimosaWeights, ModelConfig};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Wall-clock statistics over timed repeats (warm-up excluded).
#[derive(Clone, Debug, PartialEq)]
pub struct TimingStats {
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub threads: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TimingStats {
    pub fn from_samples(samples_ms: Vec<f64>, threads: usize) -> Self {
        let mut s = samples_ms.clone();
        s.sort_by(f64::total_cmp);
        let (median_ms, iqr_ms) =
            if s.is_empty() { (f64::NAN, f64::NAN) } else { (quantile(&s, 0.5), quantile(&s, 0.75) - quantile(&s, 0.25)) };
        TimingStats { samples_ms, median_ms, iqr_ms, threads }
    }
}

/// Times `repeats` inference passes on a deterministic `h×w` input after
/// one untimed warm-up. Returns the last output with the statistics.
pub fn time_inference<T: Real>(
    cfg: &ModelConfig,
    weights: &HimosaWeights<T>,
    h: usize,
    w: usize,
    repeats: usize,
) -> Result<(TimingStats, Tensor<T>)> {
    let input = Tensor::from_fn(&[3, h, w], |i| T::from_f64c(((i * 7919) % 256) as f64 / 255.0));
    let opts = ForwardOptions::default();
    let (mut out, _) = infer(cfg, weights, &input, &opts)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        out = infer(cfg, weights, &input, &opts)?.0;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok((TimingStats::from_samples(samples, par::threads()), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_is_median() {
        let s = TimingStats::from_samples(vec![4.5], 1);
        assert_eq!((s.median_ms, s.iqr_ms), (4.5, 0.0));
    }

    #[test]
    fn quartiles_interpolate() {
        let s = TimingStats::from_samples(vec![4.0, 1.0, 3.0, 2.0, 5.0], 1);
        assert_eq!((s.median_ms, s.iqr_ms), (3.0, 2.0));
    }

    #[test]
    fn repeated_runs_are_deterministic() {
        let cfg = ModelConfig::tiny();
        let w = HimosaWeights::<f32>::init(&cfg, 1).unwrap();
        let (s, a) = time_inference(&cfg, &w, 8, 8, 2).unwrap();
        let (_, b) = time_inference(&cfg, &w, 8, 8, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.samples_ms.len(), 2);
        assert_eq!(a.shape(), &[3, 16, 16]);
    }
}
