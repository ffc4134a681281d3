use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::TrainError;
use crate::kv::KvMap;
use crate::zoo::{NetKind, ScaleProfile, StreamConfig};

/// Floating-point width used for parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(&self) -> u8 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "32" => Ok(Precision::F32),
            "64" => Ok(Precision::F64),
            _ => Err(format!("precision must be 32 or 64, got `{s}`")),
        }
    }
}

pub const DESK_LR: f64 = 0.003;
pub const DESK_BATCH: usize = 16;
pub const DESK_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub shuffle: bool,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl TrainConfig {
    pub const DEFAULT_EPOCHS: usize = 30;

    /// Single-modality defaults: lr 0.001, batch 32.
    pub fn unimodal() -> Self {
        Self {
            lr: 0.001,
            batch_size: 32,
            epochs: Self::DEFAULT_EPOCHS,
            seed: 0,
            precision: Precision::F32,
            shuffle: true,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    /// Multimodal defaults: lr 0.0001, batch 1.
    pub fn multimodal() -> Self {
        Self {
            lr: 0.0001,
            batch_size: 1,
            ..Self::unimodal()
        }
    }

    pub fn for_kind(kind: NetKind) -> Self {
        if kind.is_multimodal() {
            Self::multimodal()
        } else {
            Self::unimodal()
        }
    }

    /// Defaults for a scale profile. Paper scale keeps the paper's
    /// settings; desk scale trains every network with batch 16 and a
    /// larger step, since the tiny streams start from scratch.
    pub fn for_profile(kind: NetKind, profile: ScaleProfile) -> Self {
        match profile {
            ScaleProfile::Paper227 => Self::for_kind(kind),
            ScaleProfile::Desk32 => Self {
                lr: DESK_LR,
                batch_size: DESK_BATCH,
                momentum: DESK_MOMENTUM,
                ..Self::for_kind(kind)
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        // lr = 0 is allowed: it runs the loop with every parameter frozen
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 8] = [
        "lr",
        "batch_size",
        "epochs",
        "seed",
        "precision",
        "shuffle",
        "momentum",
        "weight_decay",
    ];

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        let entries = [
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("shuffle", self.shuffle.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
        ];
        for (k, v) in entries {
            m.insert(k, v).expect("keys are distinct");
        }
        m
    }

    /// Overrides fields of `self` with whatever keys `m` sets.
    pub fn apply_kv(mut self, m: &KvMap) -> Result<Self, TrainError> {
        m.check_keys(&Self::KEYS)?;
        if let Some(v) = m.parse_value("lr")? {
            self.lr = v;
        }
        if let Some(v) = m.parse_value("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = m.parse_value("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = m.parse_value("seed")? {
            self.seed = v;
        }
        if let Some(v) = m.parse_value("precision")? {
            self.precision = v;
        }
        if let Some(v) = m.parse_value("shuffle")? {
            self.shuffle = v;
        }
        if let Some(v) = m.parse_value("momentum")? {
            self.momentum = v;
        }
        if let Some(v) = m.parse_value("weight_decay")? {
            self.weight_decay = v;
        }
        self.validate()?;
        Ok(self)
    }
}

/// First 8 bytes (little-endian) of SHA-256 over the network kind, stream
/// config and training config in key=value form.
pub fn config_hash(kind: NetKind, stream: &StreamConfig, train: &TrainConfig) -> u64 {
    let mut h = Sha256::new();
    h.update(format!("net = {kind}\n"));
    h.update(stream.to_kv().to_text());
    h.update(train.to_kv().to_text());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
