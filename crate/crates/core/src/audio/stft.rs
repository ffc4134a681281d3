use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::dsp::hann_window;
use super::{AudioError, StftConfig, Waveform};

/// Magnitudes laid out `[freq_bins][time_frames]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramMatrix {
    pub freq_bins: usize,
    pub frames: usize,
    pub magnitudes: Vec<f64>,
    /// Width of one frequency bin in Hz.
    pub bin_hz: f64,
    pub hop: usize,
    pub window_size: usize,
    pub sample_rate: u32,
}

impl SpectrogramMatrix {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.magnitudes[bin * self.frames + frame]
    }

    /// Bin index of the largest magnitude in one frame (lowest on ties).
    pub fn column_argmax(&self, frame: usize) -> usize {
        let col: Vec<f64> = (0..self.freq_bins).map(|k| self.get(k, frame)).collect();
        crate::autograd::argmax(&col)
    }
}

/// Hann-windowed magnitude STFT keeping bins `0..=window/2`.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<SpectrogramMatrix, AudioError> {
    cfg.validate()?;
    let n = cfg.window_size;
    if w.samples.len() < n {
        return Err(AudioError::TooShort {
            len: w.samples.len(),
            window: n,
        });
    }
    let hop = cfg.hop();
    let frames = (w.samples.len() - n) / hop + 1;
    let bins = n / 2 + 1;
    let window = hann_window(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut magnitudes = vec![0.0; bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..frames {
        let frame = &w.samples[f * hop..f * hop + n];
        for ((b, &s), &h) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(s * h, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(bins).enumerate() {
            magnitudes[k * frames + f] = c.norm();
        }
    }
    Ok(SpectrogramMatrix {
        freq_bins: bins,
        frames,
        magnitudes,
        bin_hz: w.sample_rate as f64 / n as f64,
        hop,
        window_size: n,
        sample_rate: w.sample_rate,
    })
}

/// Keep bins `k` with `k * bin_hz <= band_high_hz`.
pub fn crop_band(s: &SpectrogramMatrix, cfg: &StftConfig) -> Result<SpectrogramMatrix, AudioError> {
    let nyquist = s.sample_rate as f64 / 2.0;
    if cfg.band_high_hz > nyquist {
        return Err(AudioError::BandAboveNyquist {
            high_hz: cfg.band_high_hz,
            nyquist_hz: nyquist,
        });
    }
    // k * sr / n <= high  <=>  k * sr <= high * n, exact for integer inputs
    let keep = (0..s.freq_bins)
        .take_while(|&k| (k as f64) * s.sample_rate as f64 <= cfg.band_high_hz * s.window_size as f64)
        .count();
    Ok(SpectrogramMatrix {
        freq_bins: keep,
        magnitudes: s.magnitudes[..keep * s.frames].to_vec(),
        ..s.clone()
    })
}
