//! Recording to spectrogram image: decode, resample, trim, segment, STFT,
//! band crop, render.

mod colormap;
mod dsp;
mod render;
mod stft;
mod wav;

use thiserror::Error;

pub use colormap::COLORMAP;
pub use dsp::{hann_window, resample, segment, trim_silence};
pub use render::{render, RenderedSpectrogram, RENDER_SIZE};
pub use stft::{crop_band, stft, SpectrogramMatrix};
pub use wav::{decode_wav, encode_wav_f32, encode_wav_pcm16};

/// Canonical internal sample rate; Nyquist 11025 Hz covers the 10 kHz band.
pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("malformed WAV data: {0}")]
    MalformedData(String),
    #[error("unsupported WAV codec: {0}")]
    UnsupportedCodec(String),
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("empty after trim")]
    EmptyAfterTrim,
    #[error("input has {len} samples, shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("band top {high_hz} Hz exceeds Nyquist {nyquist_hz} Hz")]
    BandAboveNyquist { high_hz: f64, nyquist_hz: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::EmptyWaveform);
        }
        if sample_rate == 0 {
            return Err(AudioError::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// STFT and segmentation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub window_size: usize,
    /// Fraction of a window shared by consecutive frames, in `[0, 1)`.
    pub overlap: f64,
    pub segment_seconds: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 512,
            overlap: 0.5,
            segment_seconds: 10.0,
            band_low_hz: 0.0,
            band_high_hz: 10_000.0,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        if !self.window_size.is_power_of_two() || self.window_size < 2 {
            return Err(AudioError::InvalidConfig(format!(
                "window size {} is not a power of two >= 2",
                self.window_size
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(AudioError::InvalidConfig(format!("overlap {} not in [0, 1)", self.overlap)));
        }
        if !(self.segment_seconds > 0.0) {
            return Err(AudioError::InvalidConfig("segment length must be positive".into()));
        }
        if !(self.band_high_hz >= self.band_low_hz) || self.band_low_hz < 0.0 {
            return Err(AudioError::InvalidConfig("band must satisfy 0 <= low <= high".into()));
        }
        Ok(())
    }

    /// Frame advance in samples, `window * (1 - overlap)`, at least 1.
    pub fn hop(&self) -> usize {
        ((self.window_size as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

/// Full recording-to-images pipeline. Returns one image per kept segment;
/// an empty list means the recording was shorter than half a segment after
/// trimming.
pub fn spectrogram_images(
    wav_bytes: &[u8],
    cfg: &StftConfig,
    sample_rate: u32,
) -> Result<Vec<RenderedSpectrogram>, AudioError> {
    cfg.validate()?;
    let decoded = decode_wav(wav_bytes)?;
    let resampled = resample(&decoded, sample_rate)?;
    let trimmed = trim_silence(&resampled, cfg)?;
    segment(&trimmed, cfg)
        .iter()
        .map(|seg| {
            let spec = stft(seg, cfg)?;
            let cropped = crop_band(&spec, cfg)?;
            Ok(render(&cropped))
        })
        .collect()
}
