//! Unimodal and joint training, evaluation, two-stage fine-tuning and the
//! strategy comparison.

mod compare;
mod config;
mod finetune;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::autograd::{argmax, init, Checkpoint, CheckpointError, Graph, Scalar, Sgd, TensorError};
use crate::dataset::{Dataset, DatasetError, Split};
use crate::kv::KvError;
use crate::zoo::{ModelError, Network, OutputKind};

pub use compare::{compare_strategies, CompareConfig, CompareReport, CompareRow};
pub use config::{config_hash, Precision, TrainConfig, DESK_BATCH, DESK_LR, DESK_MOMENTUM};
pub use finetune::{two_stage_finetune, StageSchedule, TwoStageOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset has no {0} samples")]
    EmptySplit(Split),
    #[error("dataset samples are {actual:?} but the network expects {expected:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("dataset has {actual} classes but the network outputs {expected}")]
    ClassCount { expected: usize, actual: usize },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("cannot transplant `{name}`: {reason}")]
    Transplant { name: String, reason: String },
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Test-split accuracy after the epoch, `None` without test samples.
    pub test_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,loss,test_accuracy";

/// CSV with header `epoch,loss,test_accuracy`; a missing accuracy is empty.
pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let acc = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", r.epoch, r.loss, acc).expect("string write");
    }
    out
}

/// Result of a training run: metric rows plus a checkpoint of the final
/// parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub metrics: Vec<EpochMetrics>,
    pub checkpoint: Checkpoint<T>,
}

pub(crate) fn check_compat<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<(), TrainError> {
    data.validate()?;
    if data.class_count() != net.cfg.class_count() {
        return Err(TrainError::ClassCount {
            expected: net.cfg.class_count(),
            actual: data.class_count(),
        });
    }
    if let Some(shape) = data.sample_shape() {
        if shape != net.input_shape() {
            return Err(TrainError::Shape {
                expected: net.input_shape().to_vec(),
                actual: shape.to_vec(),
            });
        }
    }
    Ok(())
}

/// Salt separating the shuffle stream from the initialization stream.
const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4521;

/// Minibatch SGD over the train split; accuracy on the test split is
/// recorded after every epoch. Frozen parameters are never touched.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    check_compat(net, data)?;
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].split == Split::Train).collect();
    if train_idx.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let test = data.split(Split::Test);
    let mut rng = init::rng(cfg.seed ^ SHUFFLE_SALT);
    let mut opt = Sgd::new(cfg.lr)
        .with_momentum(cfg.momentum)
        .with_weight_decay(cfg.weight_decay);
    let mut order = train_idx;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (img, spec, labels) = data.batch(chunk);
            let (loss, grads) = {
                let mut g = Graph::new();
                let i = g.input(img)?;
                let s = g.input(spec)?;
                let out = net.forward(&mut g, i, s)?;
                let loss = net.loss(&mut g, &out, &labels)?;
                let value = g.value(loss).data()[0].to_f64_lossless();
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch, loss: value });
                }
                g.backward(loss)?;
                (value, g.param_grads())
            };
            net.params.zero_grad();
            net.params.accumulate(&grads)?;
            opt.step(&mut net.params)?;
            total += loss * chunk.len() as f64;
        }
        let test_accuracy = if test.is_empty() {
            None
        } else {
            Some(evaluate(net, &test)?.accuracy)
        };
        log::debug!("epoch {epoch}: loss {:.5} acc {test_accuracy:?}", total / order.len() as f64);
        metrics.push(EpochMetrics {
            epoch,
            loss: total / order.len() as f64,
            test_accuracy,
        });
    }
    net.params.zero_grad();
    let checkpoint = Checkpoint {
        epoch: cfg.epochs as u32,
        config_hash: config_hash(net.kind, &net.cfg, cfg),
        params: net.params.clone(),
    };
    Ok(TrainOutcome { metrics, checkpoint })
}

/// One row of the prediction dump.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub audio_id: String,
    pub label: usize,
    pub predicted: usize,
    /// Class scores as the network emits them (probabilities for score
    /// averaging, pre-softmax scores otherwise).
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub output_kind: OutputKind,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    /// CSV dump: `image_id,audio_id,label,predicted,score_0,...`.
    pub fn dump_csv(&self) -> String {
        let classes = self.predictions.first().map_or(0, |p| p.scores.len());
        let mut out = String::from("image_id,audio_id,label,predicted");
        for c in 0..classes {
            write!(out, ",score_{c}").expect("string write");
        }
        out.push('\n');
        for p in &self.predictions {
            write!(out, "{},{},{},{}", p.image_id, p.audio_id, p.label, p.predicted).expect("string write");
            for s in &p.scores {
                write!(out, ",{s}").expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

const EVAL_BATCH: usize = 64;

/// Accuracy of first-index argmax over every sample in `data`, whatever
/// its split tag.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Dataset(DatasetError::Empty));
    }
    check_compat(net, data)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut predictions = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    let mut kind = OutputKind::Scores;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (img, spec, labels) = data.batch(chunk);
        let mut g = Graph::new();
        let i = g.input(img)?;
        let s = g.input(spec)?;
        let out = net.forward(&mut g, i, s)?;
        kind = out.kind;
        let scores = g.value(out.output);
        let c = scores.shape()[1];
        for (row, (&k, &label)) in chunk.iter().zip(&labels).enumerate() {
            let r = &scores.data()[row * c..(row + 1) * c];
            let predicted = argmax(r);
            correct += usize::from(predicted == label);
            let sample = &data.samples[k];
            predictions.push(Prediction {
                image_id: sample.image_id.clone(),
                audio_id: sample.audio_id.clone(),
                label,
                predicted,
                scores: r.iter().map(|v| v.to_f64_lossless()).collect(),
            });
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        output_kind: kind,
        predictions,
    })
}
