//! Unimodal streams and the early / middle / late fusion networks.
//!
//! Parameter names carry a prefix per part: `img.` and `aud.` for the two
//! modality streams, `early.` for the shared stream of early fusion and
//! `fusion.` for learned fusion heads.

mod config;
mod stream;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::autograd::{Graph, NodeId, Params, Scalar, Tensor, TensorError};

pub use config::{ConvSpec, ScaleProfile, StreamConfig};
pub use stream::{layer_sequence, trace_trunk, trunk_features, Cut, FcHead, LayerKind, Stream, Trunk};

pub const IMAGE_PREFIX: &str = "img.";
pub const AUDIO_PREFIX: &str = "aud.";
pub const EARLY_PREFIX: &str = "early.";
pub const FUSION_PREFIX: &str = "fusion.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("topology error at {layer}: {reason}")]
    Topology { layer: String, reason: String },
    #[error("{modality} input has shape {actual:?}, expected {expected:?}")]
    InputShape {
        modality: Modality,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Image,
    Audio,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Audio => "audio",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionStrategy {
    EarlyConcat,
    MidConcat,
    LateSum,
    LateMul,
    LateFc7Concat,
    LateScoreAvg,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 6] = [
        FusionStrategy::EarlyConcat,
        FusionStrategy::MidConcat,
        FusionStrategy::LateSum,
        FusionStrategy::LateMul,
        FusionStrategy::LateFc7Concat,
        FusionStrategy::LateScoreAvg,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionStrategy::EarlyConcat => "early-concat",
            FusionStrategy::MidConcat => "mid-concat",
            FusionStrategy::LateSum => "late-sum",
            FusionStrategy::LateMul => "late-mul",
            FusionStrategy::LateFc7Concat => "late-fc7-concat",
            FusionStrategy::LateScoreAvg => "late-score-avg",
        }
    }

    /// Whether the fusion step itself owns no parameters.
    pub fn is_parameterless(&self) -> bool {
        matches!(
            self,
            FusionStrategy::LateSum | FusionStrategy::LateMul | FusionStrategy::LateScoreAvg
        )
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionStrategy::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown fusion strategy `{s}`")))
    }
}

/// Everything the trainer can build: a single-modality stream or one of
/// the fusion networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetKind {
    Unimodal(Modality),
    Fusion(FusionStrategy),
}

impl NetKind {
    /// Report order: the two unimodal baselines, then the six fusions.
    pub const ALL: [NetKind; 8] = [
        NetKind::Unimodal(Modality::Image),
        NetKind::Unimodal(Modality::Audio),
        NetKind::Fusion(FusionStrategy::EarlyConcat),
        NetKind::Fusion(FusionStrategy::MidConcat),
        NetKind::Fusion(FusionStrategy::LateSum),
        NetKind::Fusion(FusionStrategy::LateMul),
        NetKind::Fusion(FusionStrategy::LateFc7Concat),
        NetKind::Fusion(FusionStrategy::LateScoreAvg),
    ];

    /// Short name used in reports and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            NetKind::Unimodal(Modality::Image) => "image",
            NetKind::Unimodal(Modality::Audio) => "audio",
            NetKind::Fusion(FusionStrategy::EarlyConcat) => "net1",
            NetKind::Fusion(FusionStrategy::MidConcat) => "net2",
            NetKind::Fusion(FusionStrategy::LateSum) => "net3-sum",
            NetKind::Fusion(FusionStrategy::LateMul) => "net3-mul",
            NetKind::Fusion(FusionStrategy::LateFc7Concat) => "fc7-concat",
            NetKind::Fusion(FusionStrategy::LateScoreAvg) => "score-avg",
        }
    }

    pub fn is_multimodal(&self) -> bool {
        matches!(self, NetKind::Fusion(_))
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetKind {
    type Err = ModelError;

    /// Accepts report names (`net3-sum`) and strategy names (`late-sum`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(k) = NetKind::ALL.into_iter().find(|k| k.name() == s) {
            return Ok(k);
        }
        s.parse::<FusionStrategy>()
            .map(NetKind::Fusion)
            .map_err(|_| ModelError::Config(format!("unknown network `{s}`")))
    }
}

/// Which slice of the parameters a name belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    ImageStream,
    AudioStream,
    FusionHead,
}

/// What the network's output node holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// Pre-softmax class scores.
    Scores,
    /// A probability distribution per row.
    Probabilities,
}

/// Result of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NetOutput {
    pub output: NodeId,
    pub kind: OutputKind,
    /// Per-stream fc8 scores for score averaging, used by its loss.
    stream_logits: Option<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Parts {
    Single { modality: Modality, stream: Stream },
    Early { stream: Stream },
    Mid { image: Trunk, audio: Trunk, head: FcHead },
    Late { image: Stream, audio: Stream, fc7_head: Option<FcHead> },
}

/// A network plus its parameters, partitioned into image-stream,
/// audio-stream and fusion-head name sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub kind: NetKind,
    pub cfg: StreamConfig,
    pub params: Params<T>,
    parts: Parts,
    image_params: BTreeSet<String>,
    audio_params: BTreeSet<String>,
    head_params: BTreeSet<String>,
}

/// Multimodal networks are ordinary [`Network`]s with a fusion kind.
pub type MultimodalNet<T> = Network<T>;

fn names(shapes: &[(String, Vec<usize>, usize)]) -> BTreeSet<String> {
    shapes.iter().map(|(n, _, _)| n.clone()).collect()
}

impl<T: Scalar> Network<T> {
    /// Build and initialize any network kind from a seed.
    pub fn build(kind: NetKind, cfg: &StreamConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = crate::autograd::init::rng(seed);
        Self::build_with_rng(kind, cfg, &mut rng)
    }

    pub fn build_with_rng(kind: NetKind, cfg: &StreamConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let parts = Self::layout(kind, cfg)?;
        let (img, aud, head) = Self::shapes(&parts);
        let mut params = Params::new();
        for group in [&img, &aud, &head] {
            stream::init_params(&mut params, group, rng)?;
        }
        Ok(Self {
            kind,
            cfg: cfg.clone(),
            params,
            parts,
            image_params: names(&img),
            audio_params: names(&aud),
            head_params: names(&head),
        })
    }

    /// Number of parameters `kind` would have, without allocating them.
    pub fn param_count_for(kind: NetKind, cfg: &StreamConfig) -> Result<usize, ModelError> {
        cfg.validate()?;
        let parts = Self::layout(kind, cfg)?;
        let (a, b, c) = Self::shapes(&parts);
        Ok([a, b, c]
            .iter()
            .flatten()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum())
    }

    fn layout(kind: NetKind, cfg: &StreamConfig) -> Result<Parts, ModelError> {
        let hw = cfg.input_hw;
        Ok(match kind {
            NetKind::Unimodal(modality) => {
                let prefix = match modality {
                    Modality::Image => IMAGE_PREFIX,
                    Modality::Audio => AUDIO_PREFIX,
                };
                Parts::Single {
                    modality,
                    stream: Stream::new(prefix, cfg, hw, hw, true)?,
                }
            }
            NetKind::Fusion(FusionStrategy::EarlyConcat) => Parts::Early {
                stream: Stream::new(EARLY_PREFIX, cfg, hw, 2 * hw, true)?,
            },
            NetKind::Fusion(FusionStrategy::MidConcat) => {
                let image = Trunk::new(IMAGE_PREFIX, cfg, hw, hw)?;
                let audio = Trunk::new(AUDIO_PREFIX, cfg, hw, hw)?;
                let head = FcHead {
                    prefix: FUSION_PREFIX.into(),
                    input_width: image.features() + audio.features(),
                    widths: cfg.fc_widths,
                    with_fc8: true,
                };
                Parts::Mid { image, audio, head }
            }
            NetKind::Fusion(FusionStrategy::LateFc7Concat) => {
                let image = Stream::new(IMAGE_PREFIX, cfg, hw, hw, false)?;
                let audio = Stream::new(AUDIO_PREFIX, cfg, hw, hw, false)?;
                // a single classification layer named fusion.fc6
                let fc7_head = FcHead {
                    prefix: FUSION_PREFIX.into(),
                    input_width: cfg.fc_widths[1] * 2,
                    widths: [cfg.class_count(), 0, 0],
                    with_fc8: false,
                };
                Parts::Late {
                    image,
                    audio,
                    fc7_head: Some(fc7_head),
                }
            }
            NetKind::Fusion(_) => Parts::Late {
                image: Stream::new(IMAGE_PREFIX, cfg, hw, hw, true)?,
                audio: Stream::new(AUDIO_PREFIX, cfg, hw, hw, true)?,
                fc7_head: None,
            },
        })
    }

    #[allow(clippy::type_complexity)]
    fn shapes(parts: &Parts) -> (Vec<(String, Vec<usize>, usize)>, Vec<(String, Vec<usize>, usize)>, Vec<(String, Vec<usize>, usize)>) {
        match parts {
            Parts::Single { modality: Modality::Image, stream } => (stream.param_shapes(), vec![], vec![]),
            Parts::Single { modality: Modality::Audio, stream } => (vec![], stream.param_shapes(), vec![]),
            Parts::Early { stream } => (stream.param_shapes(), vec![], vec![]),
            Parts::Mid { image, audio, head } => (image.param_shapes(), audio.param_shapes(), head.param_shapes()),
            Parts::Late { image, audio, fc7_head } => (
                image.param_shapes(),
                audio.param_shapes(),
                fc7_head.as_ref().map(fc7_head_shapes).unwrap_or_default(),
            ),
        }
    }

    pub fn strategy(&self) -> Option<FusionStrategy> {
        match self.kind {
            NetKind::Fusion(s) => Some(s),
            NetKind::Unimodal(_) => None,
        }
    }

    pub fn group_names(&self, group: ParamGroup) -> &BTreeSet<String> {
        match group {
            ParamGroup::ImageStream => &self.image_params,
            ParamGroup::AudioStream => &self.audio_params,
            ParamGroup::FusionHead => &self.head_params,
        }
    }

    pub fn group_of(&self, name: &str) -> Option<ParamGroup> {
        [ParamGroup::ImageStream, ParamGroup::AudioStream, ParamGroup::FusionHead]
            .into_iter()
            .find(|&g| self.group_names(g).contains(name))
    }

    pub fn param_count(&self) -> usize {
        self.params.element_count()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params.trainable_element_count()
    }

    /// Expected `[C, H, W]` of one modality's input.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.cfg.in_channels, self.cfg.input_hw, self.cfg.input_hw]
    }

    /// Shape of the merged early-fusion volume for one sample: width doubles.
    pub fn merged_input_shape(cfg: &StreamConfig) -> [usize; 3] {
        [cfg.in_channels, cfg.input_hw, 2 * cfg.input_hw]
    }

    /// The image and audio streams of a late-fusion or unimodal network.
    pub fn streams(&self) -> (Option<&Stream>, Option<&Stream>) {
        match &self.parts {
            Parts::Single { modality: Modality::Image, stream } => (Some(stream), None),
            Parts::Single { modality: Modality::Audio, stream } => (None, Some(stream)),
            Parts::Late { image, audio, .. } => (Some(image), Some(audio)),
            Parts::Early { .. } | Parts::Mid { .. } => (None, None),
        }
    }

    fn check_input(&self, g: &Graph<'_, T>, x: NodeId, modality: Modality) -> Result<(), ModelError> {
        let shape = g.value(x).shape();
        let want = self.input_shape();
        if shape.len() != 4 || shape[1..] != want {
            let n = shape.first().copied().unwrap_or(0);
            return Err(ModelError::InputShape {
                modality,
                expected: vec![n, want[0], want[1], want[2]],
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass over `[N, C, H, W]` image and spectrogram nodes.
    /// Unimodal networks ignore the other modality.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a, T>,
        image: NodeId,
        spectrogram: NodeId,
    ) -> Result<NetOutput, ModelError> {
        let p = &self.params;
        let scores = |output| NetOutput {
            output,
            kind: OutputKind::Scores,
            stream_logits: None,
        };
        match &self.parts {
            Parts::Single { modality, stream } => {
                let x = match modality {
                    Modality::Image => image,
                    Modality::Audio => spectrogram,
                };
                self.check_input(g, x, *modality)?;
                Ok(scores(stream.forward(g, p, x, Cut::Fc8)?))
            }
            Parts::Early { stream } => {
                self.check_input(g, image, Modality::Image)?;
                self.check_input(g, spectrogram, Modality::Audio)?;
                let merged = g.concat(image, spectrogram, 3)?;
                Ok(scores(stream.forward(g, p, merged, Cut::Fc8)?))
            }
            Parts::Mid { image: ti, audio: ta, head } => {
                self.check_input(g, image, Modality::Image)?;
                self.check_input(g, spectrogram, Modality::Audio)?;
                let fi = ti.forward(g, p, image)?;
                let fa = ta.forward(g, p, spectrogram)?;
                let merged = g.concat(fi, fa, 1)?;
                Ok(scores(head.forward(g, p, merged, Cut::Fc8)?))
            }
            Parts::Late { image: si, audio: sa, fc7_head } => {
                self.check_input(g, image, Modality::Image)?;
                self.check_input(g, spectrogram, Modality::Audio)?;
                let strategy = self.strategy().expect("late parts imply fusion");
                if let Some(head) = fc7_head {
                    let fi = si.forward(g, p, image, Cut::Fc7)?;
                    let fa = sa.forward(g, p, spectrogram, Cut::Fc7)?;
                    let merged = g.concat(fi, fa, 1)?;
                    let w = g.param(p, &format!("{}fc6.weight", head.prefix))?;
                    let b = g.param(p, &format!("{}fc6.bias", head.prefix))?;
                    return Ok(scores(g.fully_connected(merged, w, b)?));
                }
                let li = si.forward(g, p, image, Cut::Fc8)?;
                let la = sa.forward(g, p, spectrogram, Cut::Fc8)?;
                match strategy {
                    FusionStrategy::LateSum => Ok(scores(g.add(li, la)?)),
                    FusionStrategy::LateMul => Ok(scores(g.mul(li, la)?)),
                    FusionStrategy::LateScoreAvg => {
                        let pi = g.softmax(li)?;
                        let pa = g.softmax(la)?;
                        let sum = g.add(pi, pa)?;
                        let avg = g.scale(sum, T::from_f64(0.5))?;
                        Ok(NetOutput {
                            output: avg,
                            kind: OutputKind::Probabilities,
                            stream_logits: Some((li, la)),
                        })
                    }
                    _ => unreachable!("handled above"),
                }
            }
        }
    }

    /// Training loss for a forward output: cross-entropy on the fused
    /// scores, or for score averaging `-ln` of the averaged distribution.
    pub fn loss(&self, g: &mut Graph<'_, T>, out: &NetOutput, labels: &[usize]) -> Result<NodeId, ModelError> {
        Ok(match out.stream_logits {
            Some((a, b)) => g.mixture_nll(a, b, labels)?,
            None => g.cross_entropy(out.output, labels)?,
        })
    }

    /// Inference on tensors; returns `[N, classes]` scores (or averaged
    /// probabilities for score averaging).
    pub fn predict(&self, image: &Tensor<T>, spectrogram: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let i = g.input_ref(image)?;
        let s = g.input_ref(spectrogram)?;
        let out = self.forward(&mut g, i, s)?;
        Ok(g.value(out.output).clone())
    }
}

fn fc7_head_shapes(head: &FcHead) -> Vec<(String, Vec<usize>, usize)> {
    let d = head.input_width;
    let m = head.widths[0];
    vec![
        (format!("{}fc6.weight", head.prefix), vec![m, d], d),
        (format!("{}fc6.bias", head.prefix), vec![m], d),
    ]
}

/// Convenience constructors named after the networks they build.
pub fn build_stream<T: Scalar>(cfg: &StreamConfig, modality: Modality, seed: u64) -> Result<Network<T>, ModelError> {
    Network::build(NetKind::Unimodal(modality), cfg, seed)
}

pub fn build_net1<T: Scalar>(cfg: &StreamConfig, seed: u64) -> Result<Network<T>, ModelError> {
    Network::build(NetKind::Fusion(FusionStrategy::EarlyConcat), cfg, seed)
}

pub fn build_net2<T: Scalar>(cfg: &StreamConfig, seed: u64) -> Result<Network<T>, ModelError> {
    Network::build(NetKind::Fusion(FusionStrategy::MidConcat), cfg, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LateMode {
    Sum,
    Mul,
}

pub fn build_net3<T: Scalar>(cfg: &StreamConfig, mode: LateMode, seed: u64) -> Result<Network<T>, ModelError> {
    let s = match mode {
        LateMode::Sum => FusionStrategy::LateSum,
        LateMode::Mul => FusionStrategy::LateMul,
    };
    Network::build(NetKind::Fusion(s), cfg, seed)
}

pub fn build_fc7_concat<T: Scalar>(cfg: &StreamConfig, seed: u64) -> Result<Network<T>, ModelError> {
    Network::build(NetKind::Fusion(FusionStrategy::LateFc7Concat), cfg, seed)
}

pub fn build_score_avg<T: Scalar>(cfg: &StreamConfig, seed: u64) -> Result<Network<T>, ModelError> {
    Network::build(NetKind::Fusion(FusionStrategy::LateScoreAvg), cfg, seed)
}
