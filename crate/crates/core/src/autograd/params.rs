use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::error::{Result, TensorError};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// A named, trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Multiplier on the base learning rate; 0 freezes the parameter.
    pub lr_mult: f64,
}

impl<T: Scalar> Param<T> {
    pub fn is_trainable(&self) -> bool {
        self.tensor.requires_grad && self.lr_mult != 0.0
    }
}

/// Insertion-ordered parameter registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

/// Gradients keyed by parameter name, in graph order.
pub type ParamGrads<T> = Vec<(String, Vec<T>)>;

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParameter { name });
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param {
            name,
            tensor: tensor.with_grad(),
            lr_mult: 1.0,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| TensorError::UnknownParameter { name: name.to_string() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(TensorError::UnknownParameter { name: name.to_string() }),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).map(|p| &p.tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|p| p.name.as_str())
    }

    /// Total number of scalar elements across all parameters.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn trainable_element_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.is_trainable())
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Freeze (`false`) or unfreeze (`true`) a parameter.
    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let p = self.get_mut(name)?;
        p.tensor.requires_grad = trainable;
        p.lr_mult = if trainable { 1.0 } else { 0.0 };
        if !trainable {
            p.tensor.grad = None;
        }
        Ok(())
    }

    /// Reset every trainable gradient buffer to zeros.
    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            if p.is_trainable() {
                p.tensor.zero_grad();
            } else {
                p.tensor.grad = None;
            }
        }
    }

    /// Add `grads` onto the stored gradient buffers, in the given order.
    pub fn accumulate(&mut self, grads: &[(String, Vec<T>)]) -> Result<()> {
        for (name, g) in grads {
            let p = self.get_mut(name)?;
            if !p.tensor.requires_grad {
                continue;
            }
            if g.len() != p.tensor.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "accumulate",
                    lhs: p.tensor.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let numel = p.tensor.numel();
            let buf = p.tensor.grad.get_or_insert_with(|| vec![T::zero(); numel]);
            buf.iter_mut().zip(g).for_each(|(b, &v)| *b = *b + v);
        }
        Ok(())
    }

    /// Copy values (not trainability) of every parameter named in `names`
    /// from `source`. Shapes must agree.
    pub fn copy_from<'n>(
        &mut self,
        source: &Params<T>,
        names: impl IntoIterator<Item = &'n str>,
    ) -> Result<()> {
        for name in names {
            let src = source.tensor(name)?;
            let dst = self.get_mut(name)?;
            if src.shape() != dst.tensor.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "copy_from",
                    lhs: dst.tensor.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            dst.tensor.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// SHA-256 of one parameter's shape and little-endian payload, hex encoded.
    pub fn digest(&self, name: &str) -> Result<String> {
        let t = self.tensor(name)?;
        let mut h = Sha256::new();
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        let mut buf = Vec::with_capacity(t.numel() * T::BYTES);
        t.data().iter().for_each(|v| v.write_le(&mut buf));
        h.update(&buf);
        Ok(hex(&h.finalize()))
    }

    /// Per-layer digests, where a layer is the parameter name up to its
    /// last `.` (so `img.conv1.weight` and `img.conv1.bias` hash together).
    pub fn layer_digests(&self) -> BTreeMap<String, String> {
        let mut layers: BTreeMap<String, Sha256> = BTreeMap::new();
        for p in &self.entries {
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l);
            let h = layers.entry(layer.to_string()).or_default();
            h.update(p.name.as_bytes());
            let mut buf = Vec::with_capacity(p.tensor.numel() * T::BYTES);
            p.tensor.data().iter().for_each(|v| v.write_le(&mut buf));
            h.update(&buf);
        }
        layers
            .into_iter()
            .map(|(k, h)| (k, hex(&h.finalize())))
            .collect()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One plain SGD update `p <- p - lr * lr_mult * grad` over every trainable
/// parameter, then zero the gradients. Frozen parameters are untouched.
pub fn sgd_step<T: Scalar>(params: &mut Params<T>, lr: f64) -> Result<()> {
    Sgd::new(lr).step(params)
}

/// SGD with optional momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            velocity: HashMap::new(),
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn step(&mut self, params: &mut Params<T>) -> Result<()> {
        // Validate first so a failure leaves every parameter untouched.
        if let Some(p) = params
            .iter()
            .find(|p| p.is_trainable() && p.tensor.grad.is_none())
        {
            return Err(TensorError::MissingGradient { name: p.name.clone() });
        }
        let momentum = T::from_f64(self.momentum);
        let decay = T::from_f64(self.weight_decay);
        for p in params.iter_mut() {
            if !p.is_trainable() {
                continue;
            }
            let lr = T::from_f64(self.lr * p.lr_mult);
            let mut grad = p.tensor.grad.take().expect("checked above");
            if self.weight_decay != 0.0 {
                grad.iter_mut()
                    .zip(p.tensor.data())
                    .for_each(|(g, &w)| *g = *g + decay * w);
            }
            if self.momentum != 0.0 {
                let v = self
                    .velocity
                    .entry(p.name.clone())
                    .or_insert_with(|| vec![T::zero(); grad.len()]);
                v.iter_mut().zip(&grad).for_each(|(v, &g)| *v = momentum * *v + g);
                grad.copy_from_slice(v);
            }
            p.tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .for_each(|(w, &g)| *w = *w - lr * g);
            grad.iter_mut().for_each(|g| *g = T::zero());
            p.tensor.grad = Some(grad);
        }
        Ok(())
    }
}
