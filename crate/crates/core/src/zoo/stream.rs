//! The unimodal CaffeNet-style stream, split into a convolutional trunk
//! (conv1..pool5) and a fully connected head (fc6..fc8) so the fusion
//! networks can cut it at pool5, fc7 or fc8.

use rand::Rng;

use crate::autograd::{init, Graph, NodeId, Params, Scalar};

use super::config::StreamConfig;
use super::ModelError;

/// One step of the stream's layer sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(usize),
    Relu,
    Lrn,
    Pool,
    Fc(usize),
}

impl LayerKind {
    pub fn label(&self) -> String {
        match self {
            LayerKind::Conv(i) => format!("conv{i}"),
            LayerKind::Relu => "relu".into(),
            LayerKind::Lrn => "lrn".into(),
            LayerKind::Pool => "pool".into(),
            LayerKind::Fc(i) => format!("fc{i}"),
        }
    }
}

/// The fixed topology: ReLU after every conv/fc except fc8, LRN after
/// conv1 and conv2, pools after conv1, conv2 and conv5.
pub fn layer_sequence() -> Vec<LayerKind> {
    use LayerKind::*;
    vec![
        Conv(1), Relu, Lrn, Pool,
        Conv(2), Relu, Lrn, Pool,
        Conv(3), Relu,
        Conv(4), Relu,
        Conv(5), Relu, Pool,
        Fc(6), Relu,
        Fc(7), Relu,
        Fc(8),
    ]
}

/// Activation shape after each trunk layer, `[C, H, W]`, for an input of
/// `h x w`. Fails with the name of the first layer whose window no longer
/// fits.
pub fn trace_trunk(cfg: &StreamConfig, h: usize, w: usize) -> Result<Vec<(String, [usize; 3])>, ModelError> {
    let mut shape = [cfg.in_channels, h, w];
    let mut out = Vec::new();
    let mut last_conv = 0;
    let mut pool_count = 0;
    for layer in layer_sequence() {
        match layer {
            LayerKind::Conv(i) => {
                let c = cfg.conv[i - 1];
                let (ph, pw) = (shape[1] + 2 * c.pad, shape[2] + 2 * c.pad);
                if c.kernel > ph || c.kernel > pw {
                    return Err(ModelError::Topology {
                        layer: format!("conv{i}"),
                        reason: format!("{}x{} kernel on {}x{} padded input", c.kernel, c.kernel, ph, pw),
                    });
                }
                shape = [c.channels, (ph - c.kernel) / c.stride + 1, (pw - c.kernel) / c.stride + 1];
                last_conv = i;
                out.push((format!("conv{i}"), shape));
            }
            LayerKind::Pool => {
                pool_count += 1;
                let name = format!("pool{}", if pool_count == 3 { 5 } else { last_conv });
                let k = cfg.pool_kernel;
                if k > shape[1] || k > shape[2] {
                    return Err(ModelError::Topology {
                        layer: name,
                        reason: format!("{k}x{k} window on {}x{} input", shape[1], shape[2]),
                    });
                }
                shape = [shape[0], (shape[1] - k) / cfg.pool_stride + 1, (shape[2] - k) / cfg.pool_stride + 1];
                out.push((name, shape));
            }
            LayerKind::Fc(_) => break,
            LayerKind::Relu | LayerKind::Lrn => {}
        }
    }
    Ok(out)
}

/// Flattened pool5 width for an `h x w` input.
pub fn trunk_features(cfg: &StreamConfig, h: usize, w: usize) -> Result<usize, ModelError> {
    let trace = trace_trunk(cfg, h, w)?;
    let [c, ph, pw] = trace.last().expect("trunk has layers").1;
    Ok(c * ph * pw)
}

/// Where a stream forward pass stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cut {
    /// Flattened pool5 activations.
    Pool5,
    /// fc7 after its ReLU.
    Fc7,
    /// fc8 class scores.
    Fc8,
}

/// Convolutional trunk with parameters named `{prefix}conv{i}.{weight,bias}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub prefix: String,
    pub cfg: StreamConfig,
    pub input_h: usize,
    pub input_w: usize,
}

impl Trunk {
    pub fn new(prefix: &str, cfg: &StreamConfig, input_h: usize, input_w: usize) -> Result<Self, ModelError> {
        trace_trunk(cfg, input_h, input_w)?;
        Ok(Self {
            prefix: prefix.to_string(),
            cfg: cfg.clone(),
            input_h,
            input_w,
        })
    }

    pub fn features(&self) -> usize {
        trunk_features(&self.cfg, self.input_h, self.input_w).expect("validated in new")
    }

    /// `(name, shape, fan_in)` for every parameter, in registration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let mut in_c = self.cfg.in_channels;
        for (i, c) in self.cfg.conv.iter().enumerate() {
            let fan_in = in_c * c.kernel * c.kernel;
            let base = format!("{}conv{}", self.prefix, i + 1);
            out.push((format!("{base}.weight"), vec![c.channels, in_c, c.kernel, c.kernel], fan_in));
            out.push((format!("{base}.bias"), vec![c.channels], fan_in));
            in_c = c.channels;
        }
        out
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        params: &'a Params<T>,
        x: NodeId,
    ) -> Result<NodeId, ModelError> {
        let mut h = x;
        let mut conv_index = 0;
        for layer in layer_sequence() {
            h = match layer {
                LayerKind::Conv(i) => {
                    conv_index = i;
                    let c = self.cfg.conv[i - 1];
                    let base = format!("{}conv{i}", self.prefix);
                    let w = g.param(params, &format!("{base}.weight"))?;
                    let b = g.param(params, &format!("{base}.bias"))?;
                    g.conv2d(h, w, b, c.stride, c.pad)?
                }
                LayerKind::Relu => g.relu(h)?,
                LayerKind::Lrn => g.lrn(h, self.cfg.lrn)?,
                LayerKind::Pool => g.maxpool2d(h, self.cfg.pool_kernel, self.cfg.pool_stride)?,
                LayerKind::Fc(_) => break,
            };
        }
        debug_assert_eq!(conv_index, 5);
        Ok(g.flatten(h)?)
    }
}

/// fc6 -> fc7 -> fc8 with parameters `{prefix}fc{i}.{weight,bias}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcHead {
    pub prefix: String,
    pub input_width: usize,
    pub widths: [usize; 3],
    /// Whether fc8 exists (heads cut at fc7 omit it).
    pub with_fc8: bool,
}

impl FcHead {
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let mut d = self.input_width;
        let layers = if self.with_fc8 { 3 } else { 2 };
        for (i, &m) in self.widths.iter().take(layers).enumerate() {
            let base = format!("{}fc{}", self.prefix, i + 6);
            out.push((format!("{base}.weight"), vec![m, d], d));
            out.push((format!("{base}.bias"), vec![m], d));
            d = m;
        }
        out
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        params: &'a Params<T>,
        x: NodeId,
        cut: Cut,
    ) -> Result<NodeId, ModelError> {
        let mut h = x;
        for i in 6..=8 {
            if i == 8 && (cut == Cut::Fc7 || !self.with_fc8) {
                break;
            }
            let base = format!("{}fc{i}", self.prefix);
            let w = g.param(params, &format!("{base}.weight"))?;
            let b = g.param(params, &format!("{base}.bias"))?;
            h = g.fully_connected(h, w, b)?;
            if i < 8 {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// A full stream: trunk plus head.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub trunk: Trunk,
    pub head: FcHead,
}

impl Stream {
    pub fn new(prefix: &str, cfg: &StreamConfig, input_h: usize, input_w: usize, with_fc8: bool) -> Result<Self, ModelError> {
        let trunk = Trunk::new(prefix, cfg, input_h, input_w)?;
        let head = FcHead {
            prefix: prefix.to_string(),
            input_width: trunk.features(),
            widths: cfg.fc_widths,
            with_fc8,
        };
        Ok(Self { trunk, head })
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut v = self.trunk.param_shapes();
        v.extend(self.head.param_shapes());
        v
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        params: &'a Params<T>,
        x: NodeId,
        cut: Cut,
    ) -> Result<NodeId, ModelError> {
        let pool5 = self.trunk.forward(g, params, x)?;
        match cut {
            Cut::Pool5 => Ok(pool5),
            _ => self.head.forward(g, params, pool5, cut),
        }
    }
}

/// Register He-initialized weights and zero biases for every shape.
pub(crate) fn init_params<T: Scalar>(
    params: &mut Params<T>,
    shapes: &[(String, Vec<usize>, usize)],
    rng: &mut impl Rng,
) -> Result<(), ModelError> {
    for (name, shape, fan_in) in shapes {
        let t = if name.ends_with(".bias") {
            crate::autograd::Tensor::zeros(shape)
        } else {
            init::he_uniform(shape, *fan_in, rng)
        };
        params.insert(name.clone(), t)?;
    }
    Ok(())
}
