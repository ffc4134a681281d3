//! Image + audio fusion networks.
//!
//! * [`autograd`]: tensors, kernels and the reverse-mode tape.
//! * [`audio`]: WAV decoding through to rendered spectrogram images.
//! * [`zoo`]: the unimodal stream and the fusion networks built on it.
//! * [`dataset`]: modality pairing, splitting, the synthetic factorial set
//!   and the `FZDS` container.
//! * [`train`]: SGD training, two-stage fine-tuning, evaluation and
//!   strategy comparison.
//! * [`viz`]: filter grids and PNG export.

pub mod autograd;
pub mod audio;
pub mod kv;
pub mod zoo;
pub mod dataset;
pub mod train;
pub mod viz;
