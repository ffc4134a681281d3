use std::fmt;
use std::str::FromStr;

use crate::autograd::LrnParams;
use crate::kv::{KvError, KvMap};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleProfile {
    /// CaffeNet geometry on 227x227 inputs.
    Paper227,
    /// Same layer sequence, CPU-trainable widths on 32x32 inputs.
    Desk32,
}

impl fmt::Display for ScaleProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleProfile::Paper227 => "paper-227",
            ScaleProfile::Desk32 => "desk-32",
        })
    }
}

impl FromStr for ScaleProfile {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper-227" => Ok(ScaleProfile::Paper227),
            "desk-32" => Ok(ScaleProfile::Desk32),
            other => Err(ModelError::Config(format!("unknown profile `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Geometry of one CaffeNet-style stream: five convolutions (pool after
/// 1, 2, 5; LRN after 1, 2) and three fully connected layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub profile: ScaleProfile,
    pub input_hw: usize,
    pub in_channels: usize,
    pub conv: [ConvSpec; 5],
    pub pool_kernel: usize,
    pub pool_stride: usize,
    /// fc6, fc7, fc8; fc8 is the class count.
    pub fc_widths: [usize; 3],
    pub lrn: LrnParams,
}

const fn conv(channels: usize, kernel: usize, stride: usize, pad: usize) -> ConvSpec {
    ConvSpec {
        channels,
        kernel,
        stride,
        pad,
    }
}

impl StreamConfig {
    pub fn paper_227(class_count: usize) -> Self {
        Self {
            profile: ScaleProfile::Paper227,
            input_hw: 227,
            in_channels: 3,
            conv: [
                conv(96, 11, 4, 0),
                conv(256, 5, 1, 2),
                conv(384, 3, 1, 1),
                conv(384, 3, 1, 1),
                conv(256, 3, 1, 1),
            ],
            pool_kernel: 3,
            pool_stride: 2,
            fc_widths: [4096, 4096, class_count],
            lrn: LrnParams::default(),
        }
    }

    pub fn desk_32(class_count: usize) -> Self {
        Self {
            profile: ScaleProfile::Desk32,
            input_hw: 32,
            in_channels: 3,
            conv: [
                conv(16, 5, 2, 2),
                conv(32, 5, 1, 2),
                conv(48, 3, 1, 1),
                conv(48, 3, 1, 1),
                conv(32, 3, 1, 1),
            ],
            pool_kernel: 3,
            pool_stride: 2,
            fc_widths: [128, 128, class_count],
            lrn: LrnParams::default(),
        }
    }

    pub fn for_profile(profile: ScaleProfile, class_count: usize) -> Self {
        match profile {
            ScaleProfile::Paper227 => Self::paper_227(class_count),
            ScaleProfile::Desk32 => Self::desk_32(class_count),
        }
    }

    pub fn class_count(&self) -> usize {
        self.fc_widths[2]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.input_hw == 0 || self.in_channels == 0 {
            return bad("input size and channels must be positive".into());
        }
        for (i, c) in self.conv.iter().enumerate() {
            if c.channels == 0 || c.kernel == 0 || c.stride == 0 {
                return bad(format!("conv{} has a zero channel/kernel/stride", i + 1));
            }
        }
        if self.pool_kernel == 0 || self.pool_stride == 0 {
            return bad("pool kernel and stride must be positive".into());
        }
        if self.fc_widths.iter().any(|&w| w == 0) {
            return bad("fc widths must be positive".into());
        }
        self.lrn.validate().map_err(|e| ModelError::Config(e.to_string()))
    }

    pub const KEYS: &'static [&'static str] = &[
        "profile",
        "input_hw",
        "in_channels",
        "conv_channels",
        "conv_kernels",
        "conv_strides",
        "conv_pads",
        "pool_kernel",
        "pool_stride",
        "fc_widths",
        "lrn_size",
        "lrn_k",
        "lrn_alpha",
        "lrn_beta",
    ];

    pub fn to_kv(&self) -> KvMap {
        let list = |f: &dyn Fn(&ConvSpec) -> usize| {
            self.conv.iter().map(|c| f(c).to_string()).collect::<Vec<_>>().join(",")
        };
        let mut m = KvMap::new();
        let entries = [
            ("profile", self.profile.to_string()),
            ("input_hw", self.input_hw.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("conv_channels", list(&|c| c.channels)),
            ("conv_kernels", list(&|c| c.kernel)),
            ("conv_strides", list(&|c| c.stride)),
            ("conv_pads", list(&|c| c.pad)),
            ("pool_kernel", self.pool_kernel.to_string()),
            ("pool_stride", self.pool_stride.to_string()),
            (
                "fc_widths",
                self.fc_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("lrn_size", self.lrn.local_size.to_string()),
            ("lrn_k", self.lrn.k.to_string()),
            ("lrn_alpha", self.lrn.alpha.to_string()),
            ("lrn_beta", self.lrn.beta.to_string()),
        ];
        for (k, v) in entries {
            m.insert(k, v).expect("keys are unique");
        }
        m
    }

    /// Start from the named profile's defaults (`desk-32` if absent) and
    /// apply every other key on top. `class_count` fills fc8 when
    /// `fc_widths` is not given.
    pub fn from_kv(m: &KvMap, class_count: usize) -> Result<Self, ModelError> {
        m.check_keys(Self::KEYS)?;
        let profile = match m.get("profile") {
            Some(p) => p.parse()?,
            None => ScaleProfile::Desk32,
        };
        let mut cfg = Self::for_profile(profile, class_count);
        if let Some(v) = m.parse_value("input_hw")? {
            cfg.input_hw = v;
        }
        if let Some(v) = m.parse_value("in_channels")? {
            cfg.in_channels = v;
        }
        let five = |key: &str| -> Result<Option<[usize; 5]>, ModelError> {
            match m.parse_list::<usize>(key)? {
                None => Ok(None),
                Some(v) => v
                    .try_into()
                    .map(Some)
                    .map_err(|_| ModelError::Config(format!("`{key}` needs exactly 5 entries"))),
            }
        };
        if let Some(v) = five("conv_channels")? {
            cfg.conv.iter_mut().zip(v).for_each(|(c, x)| c.channels = x);
        }
        if let Some(v) = five("conv_kernels")? {
            cfg.conv.iter_mut().zip(v).for_each(|(c, x)| c.kernel = x);
        }
        if let Some(v) = five("conv_strides")? {
            cfg.conv.iter_mut().zip(v).for_each(|(c, x)| c.stride = x);
        }
        if let Some(v) = five("conv_pads")? {
            cfg.conv.iter_mut().zip(v).for_each(|(c, x)| c.pad = x);
        }
        if let Some(v) = m.parse_value("pool_kernel")? {
            cfg.pool_kernel = v;
        }
        if let Some(v) = m.parse_value("pool_stride")? {
            cfg.pool_stride = v;
        }
        if let Some(v) = m.parse_list::<usize>("fc_widths")? {
            cfg.fc_widths = v
                .try_into()
                .map_err(|_| ModelError::Config("`fc_widths` needs exactly 3 entries".into()))?;
        }
        if let Some(v) = m.parse_value("lrn_size")? {
            cfg.lrn.local_size = v;
        }
        if let Some(v) = m.parse_value("lrn_k")? {
            cfg.lrn.k = v;
        }
        if let Some(v) = m.parse_value("lrn_alpha")? {
            cfg.lrn.alpha = v;
        }
        if let Some(v) = m.parse_value("lrn_beta")? {
            cfg.lrn.beta = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<KvError> for ModelError {
    fn from(e: KvError) -> Self {
        ModelError::Config(e.to_string())
    }
}
