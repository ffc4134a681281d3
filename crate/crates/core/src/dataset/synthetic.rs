use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, DatasetError, PairedSample, Split};
use crate::audio::COLORMAP;
use crate::autograd::{init, Scalar, Tensor};

/// Noise level at which a desk-scale unimodal stream lands near the
/// one-factor ceiling of `1 / B` while joint models stay near 1.
pub const DEFAULT_NOISE_SIGMA: f64 = 1.0;

/// Factorial benchmark: class `(a, b)` has label `a * audio_factors + b`.
/// Images show pattern `a`, spectrogram surrogates show pattern `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub image_factors: usize,
    pub audio_factors: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub hw: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn class_count(&self) -> usize {
        self.image_factors * self.audio_factors
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.image_factors < 2 || self.audio_factors < 2 {
            return Err(DatasetError::Spec("both factor counts must be at least 2".into()));
        }
        if self.hw < 4 {
            return Err(DatasetError::Spec("hw must be at least 4".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DatasetError::Spec("noise_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Image pattern `a` of `count`: a colored grating whose orientation and
/// tint both depend on `a`. Values lie in `[0, 1]`, layout `[3, hw, hw]`.
pub fn image_template(a: usize, count: usize, hw: usize) -> Vec<f64> {
    let theta = std::f64::consts::PI * a as f64 / count as f64;
    let (s, c) = theta.sin_cos();
    let freq = 3.0 / hw as f64;
    let hue = a as f64 / count as f64;
    let tint = [
        0.5 + 0.5 * (std::f64::consts::TAU * hue).cos(),
        0.5 + 0.5 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).cos(),
        0.5 + 0.5 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).cos(),
    ];
    let mut out = vec![0.0; 3 * hw * hw];
    for y in 0..hw {
        for x in 0..hw {
            let phase = std::f64::consts::TAU * freq * (x as f64 * c + y as f64 * s);
            let v = 0.5 + 0.5 * phase.sin();
            for (ch, t) in tint.iter().enumerate() {
                out[(ch * hw + y) * hw + x] = v * (0.25 + 0.75 * t);
            }
        }
    }
    out
}

/// Spectrogram surrogate `b` of `count`: a tone-like horizontal band whose
/// height depends on `b`, with a weaker harmonic, rendered through the
/// spectrogram colormap. Values lie in `[0, 1]`, layout `[3, hw, hw]`.
pub fn spectrogram_template(b: usize, count: usize, hw: usize) -> Vec<f64> {
    let center = (b as f64 + 0.5) / count as f64;
    let width = 0.35 / count as f64;
    let mut out = vec![0.0; 3 * hw * hw];
    for y in 0..hw {
        // row 0 is the highest frequency
        let f = 1.0 - (y as f64 + 0.5) / hw as f64;
        let band = (-((f - center) / width).powi(2)).exp();
        let harmonic = 0.5 * (-((f - 0.5 * center) / width).powi(2)).exp();
        let level = band.max(harmonic).clamp(0.0, 1.0);
        let rgb = COLORMAP[(level * 255.0).round() as usize];
        for x in 0..hw {
            for ch in 0..3 {
                out[(ch * hw + y) * hw + x] = rgb[ch] as f64 / 255.0;
            }
        }
    }
    out
}

fn noisy<T: Scalar>(template: &[f64], sigma: f64, hw: usize, rng: &mut impl Rng) -> Tensor<T> {
    let data = template
        .iter()
        .map(|&v| {
            let n: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            T::from_f64(v + sigma * n)
        })
        .collect();
    Tensor::new(&[3, hw, hw], data).expect("template size matches shape")
}

/// Generates `samples_per_class` samples for every class in label order,
/// split per class: the first `ceil(n/2)` train, the rest test.
pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<Dataset<T>, DatasetError> {
    spec.validate()?;
    let (na, nb, hw) = (spec.image_factors, spec.audio_factors, spec.hw);
    let images: Vec<Vec<f64>> = (0..na).map(|a| image_template(a, na, hw)).collect();
    let spectra: Vec<Vec<f64>> = (0..nb).map(|b| spectrogram_template(b, nb, hw)).collect();
    // two independent noise sources so that neither modality leaks the other's factor
    let mut img_rng = init::rng(spec.seed);
    let mut aud_rng = init::rng(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let classes = (0..na)
        .flat_map(|a| (0..nb).map(move |b| format!("a{a}-b{b}")))
        .collect();
    let mut ds = Dataset::new(classes);
    let n_train = spec.samples_per_class.div_ceil(2);
    for a in 0..na {
        for b in 0..nb {
            let label = a * nb + b;
            for i in 0..spec.samples_per_class {
                ds.samples.push(PairedSample {
                    image: noisy(&images[a], spec.noise_sigma, hw, &mut img_rng),
                    spectrogram: noisy(&spectra[b], spec.noise_sigma, hw, &mut aud_rng),
                    label,
                    image_id: format!("img-{label}-{i}"),
                    audio_id: format!("aud-{label}-{i}"),
                    split: if i < n_train { Split::Train } else { Split::Test },
                });
            }
        }
    }
    Ok(ds)
}
