//! Paired image/spectrogram datasets: manifests, pairing, splitting, the
//! synthetic factorial benchmark and the FZDS container.

mod container;
mod manifest;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::autograd::{Scalar, Tensor};

pub use container::{
    container_precision, decode_container, encode_container, load_container, pack_container, save_container, ContainerError,
    CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use manifest::{
    load_manifest_samples, pair_modalities, read_image_tensor, split_halves, DatasetManifest, ManifestRow,
    PairingReport, SplitWarning,
};
pub use synthetic::{gen_synthetic, DEFAULT_NOISE_SIGMA, image_template, spectrogram_template, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{path}: cannot decode image: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("no class has both images and spectrograms")]
    NoOverlap,
    #[error("dataset is empty")]
    Empty,
    #[error("sample {index} has shape {actual:?}, expected {expected:?}")]
    Shape {
        index: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("split must be `train` or `test`, got `{s}`")),
        }
    }
}

/// One (image, spectrogram, label) triple. Both tensors are `[3, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample<T> {
    pub image: Tensor<T>,
    pub spectrogram: Tensor<T>,
    pub label: usize,
    pub image_id: String,
    pub audio_id: String,
    pub split: Split,
}

/// A class table plus samples in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub classes: Vec<String>,
    pub samples: Vec<PairedSample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(classes: Vec<String>) -> Self {
        Self {
            classes,
            samples: Vec::new(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[C, H, W]` shared by every sample, or `None` when empty.
    pub fn sample_shape(&self) -> Option<[usize; 3]> {
        self.samples.first().map(|s| {
            let d = s.image.shape();
            [d[0], d[1], d[2]]
        })
    }

    /// Checks that every tensor is `[C, H, W]` of one shape and labels fit.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let Some(want) = self.sample_shape() else {
            return Ok(());
        };
        for (index, s) in self.samples.iter().enumerate() {
            for t in [&s.image, &s.spectrogram] {
                if t.shape() != want {
                    return Err(DatasetError::Shape {
                        index,
                        expected: want.to_vec(),
                        actual: t.shape().to_vec(),
                    });
                }
            }
            if s.label >= self.classes.len() {
                return Err(DatasetError::Manifest {
                    line: index,
                    reason: format!("label {} outside {} classes", s.label, self.classes.len()),
                });
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Dataset<T> {
        Dataset {
            classes: self.classes.clone(),
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
        }
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            classes: self.classes.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| PairedSample {
                    image: s.image.cast(),
                    spectrogram: s.spectrogram.cast(),
                    label: s.label,
                    image_id: s.image_id.clone(),
                    audio_id: s.audio_id.clone(),
                    split: s.split,
                })
                .collect(),
        }
    }

    /// Stacks the given samples into `[N, C, H, W]` image and spectrogram
    /// batches plus their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Tensor<T>, Vec<usize>) {
        let [c, h, w] = self.sample_shape().unwrap_or([0, 0, 0]);
        let per = c * h * w;
        let mut img = Vec::with_capacity(indices.len() * per);
        let mut spec = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            img.extend_from_slice(s.image.data());
            spec.extend_from_slice(s.spectrogram.data());
            labels.push(s.label);
        }
        let shape = [indices.len(), c, h, w];
        (
            Tensor::new(&shape, img).expect("validated sample shapes"),
            Tensor::new(&shape, spec).expect("validated sample shapes"),
            labels,
        )
    }
}
