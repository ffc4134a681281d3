use std::f64::consts::PI;

use super::{AudioError, StftConfig, Waveform};

/// Periodic Hann window `0.5 * (1 - cos(2 pi i / n))`.
pub fn hann_window(n: usize) -> Vec<f64> {
    assert!(n >= 2, "hann window needs n >= 2");
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Linear-interpolation resampling to `target_hz`.
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::InvalidConfig("target rate must be positive".into()));
    }
    if target_hz == w.sample_rate {
        return Ok(w.clone());
    }
    let ratio = w.sample_rate as f64 / target_hz as f64;
    let out_len = ((w.samples.len() as f64 / ratio).round() as usize).max(1);
    let last = w.samples.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let t = i as f64 * ratio;
            let lo = (t.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = t - lo as f64;
            w.samples[lo] + (w.samples[hi] - w.samples[lo]) * frac.min(1.0)
        })
        .collect();
    Waveform::new(samples, target_hz)
}

/// Drop hop-sized frames whose peak is strictly below a quarter of the
/// recording's peak; survivors are concatenated in order.
pub fn trim_silence(w: &Waveform, cfg: &StftConfig) -> Result<Waveform, AudioError> {
    let peak = w.peak();
    if peak == 0.0 {
        return Err(AudioError::EmptyAfterTrim);
    }
    let threshold = peak / 4.0;
    let kept: Vec<f64> = w
        .samples
        .chunks(cfg.hop())
        .filter(|frame| frame.iter().any(|s| s.abs() >= threshold))
        .flatten()
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(AudioError::EmptyAfterTrim);
    }
    Waveform::new(kept, w.sample_rate)
}

/// Non-overlapping fixed-length segments. A trailing remainder of at least
/// half a segment is zero-padded; anything shorter is dropped.
pub fn segment(w: &Waveform, cfg: &StftConfig) -> Vec<Waveform> {
    let len = ((cfg.segment_seconds * w.sample_rate as f64).round() as usize).max(1);
    w.samples
        .chunks(len)
        .filter(|chunk| chunk.len() == len || 2 * chunk.len() >= len)
        .map(|chunk| {
            let mut samples = chunk.to_vec();
            samples.resize(len, 0.0);
            Waveform {
                samples,
                sample_rate: w.sample_rate,
            }
        })
        .collect()
}
