use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::diffcore::{Gradients, Graph, ParamKey, Parameter, Rng, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::spec::{Activation, LayerKind, NetworkSpec, Shape};

static NEXT_OWNER: AtomicU64 = AtomicU64::new(1);

fn fresh_owner() -> u64 {
    NEXT_OWNER.fetch_add(1, Ordering::Relaxed)
}

/// An instantiated [`NetworkSpec`]: parameters plus a forward pass that
/// records onto a [`Graph`].
#[derive(Debug)]
pub struct Network {
    spec: NetworkSpec,
    owner: u64,
    params: Vec<Parameter>,
    /// Index of each layer's weight in `params` (bias follows it).
    slots: Vec<Option<usize>>,
}

impl Clone for Network {
    /// The copy gets its own identity so both can share a graph.
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            owner: fresh_owner(),
            params: self.params.clone(),
            slots: self.slots.clone(),
        }
    }
}

/// Rows per forward chunk in [`Network::predict`].
const PREDICT_CHUNK: usize = 128;

impl Network {
    /// Validates `spec` and draws He-uniform weights; biases start at zero.
    pub fn new(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.infer_shapes()?;
        let (c, h, w) = spec.input;
        let mut prev = Shape::Map { c, h, w };
        let mut params = Vec::new();
        let mut slots = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let cin = match prev {
                Shape::Map { c, .. } => c,
                Shape::Flat(n) => n,
            };
            let (wshape, fan_in) = match layer.kind {
                LayerKind::Conv { out, kernel, .. } => {
                    (vec![out, cin, kernel, kernel], cin * kernel * kernel)
                }
                // A transposed conv of stride s sees about (k/s)^2 taps per output.
                LayerKind::Deconv {
                    out,
                    kernel,
                    stride,
                    ..
                } => {
                    let taps = kernel.div_ceil(stride);
                    (vec![cin, out, kernel, kernel], cin * taps * taps)
                }
                LayerKind::Dense { out } => (vec![out, cin], cin),
                _ => {
                    slots.push(None);
                    prev = shapes[i];
                    continue;
                }
            };
            let out = shapes[i].dims()[0];
            slots.push(Some(params.len()));
            params.push(Parameter::new(
                format!("{}.{i}.weight", spec.name),
                rng.he_uniform(&wshape, fan_in),
            ));
            params.push(Parameter::new(
                format!("{}.{i}.bias", spec.name),
                Tensor::zeros(&[out]),
            ));
            prev = shapes[i];
        }
        Ok(Self {
            spec,
            owner: fresh_owner(),
            params,
            slots,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Identity of this network's parameters inside a [`Graph`].
    pub fn owner(&self) -> u64 {
        self.owner
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_key(&self, index: usize) -> ParamKey {
        ParamKey {
            owner: self.owner,
            index,
        }
    }

    /// Number of scalar parameters.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Freezes everything but the final parameterized layer.
    pub fn freeze_trunk(&mut self) {
        let n = self.params.len();
        for (i, p) in self.params.iter_mut().enumerate() {
            p.trainable = i + 2 >= n;
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).count()
    }

    /// Zeroes the last layer's weight and bias, making the network output zero.
    pub fn zero_final_layer(&mut self) -> Result<()> {
        let n = self.params.len();
        let last = self
            .spec
            .layers
            .last()
            .ok_or_else(|| Error::Spec("no layers".into()))?;
        if n < 2 || !last.has_params() || last.activation != Activation::Linear {
            return Err(Error::Spec(format!(
                "{}: final layer must be a linear parameterized layer",
                self.spec.name
            )));
        }
        for p in &mut self.params[n - 2..] {
            p.reset_to(Tensor::zeros(p.value.shape()));
        }
        Ok(())
    }

    /// Records the forward pass of a `N × C × H × W` batch; trainable
    /// parameters enter the gradient registry.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward_impl(g, x, true)
    }

    /// Like [`Network::forward`] with every parameter recorded as a constant.
    pub fn forward_frozen(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward_impl(g, x, false)
    }

    fn forward_impl(&self, g: &mut Graph, x: Var, track: bool) -> Result<Var> {
        let (c, h, w) = self.spec.input;
        let s = g.value(x).shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::shape(format!(
                "{} expects N x {c} x {h} x {w}, got {:?}",
                self.spec.name,
                g.value(x).shape()
            )));
        }
        let mut y = x;
        for (layer, slot) in self.spec.layers.iter().zip(&self.slots) {
            let wb = slot.map(|i| {
                let w = g.param(
                    self.param_key(i),
                    &self.params[i].value,
                    track && self.params[i].trainable,
                );
                let b = g.param(
                    self.param_key(i + 1),
                    &self.params[i + 1].value,
                    track && self.params[i + 1].trainable,
                );
                (w, b)
            });
            y = match (layer.kind, wb) {
                (
                    LayerKind::Conv {
                        stride, padding, ..
                    },
                    Some((w, b)),
                ) => g.conv2d(y, w, b, stride, padding)?,
                (
                    LayerKind::Deconv {
                        stride, padding, ..
                    },
                    Some((w, b)),
                ) => g.conv_transpose2d(y, w, b, stride, padding)?,
                (LayerKind::Dense { .. }, Some((w, b))) => g.dense(y, w, b)?,
                (LayerKind::AvgPool { k }, None) => g.avg_pool(y, k)?,
                (LayerKind::GlobalAvgPool, None) => {
                    let k = g.value(y).shape()[2];
                    let pooled = g.avg_pool(y, k)?;
                    g.flatten(pooled)?
                }
                (LayerKind::Flatten, None) => g.flatten(y)?,
                _ => unreachable!("slots follow layer kinds"),
            };
            y = match layer.activation {
                Activation::Linear => y,
                Activation::Relu => g.relu(y),
                Activation::Sigmoid => g.sigmoid(y),
            };
        }
        Ok(y)
    }

    /// Forward pass without recording gradients, in chunks.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.batch();
        let mut parts = Vec::with_capacity(n.div_ceil(PREDICT_CHUNK));
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let xv = g.constant(x.slice_batch(start, (start + PREDICT_CHUNK).min(n))?);
            let y = self.forward_frozen(&mut g, xv)?;
            parts.push(g.value(y).clone());
        }
        Tensor::concat_batch(&parts)
    }

    /// Copies each parameter's gradient out of `grads`; trainable parameters
    /// the loss did not reach get zeros.
    pub fn load_gradients(&mut self, grads: &Gradients) {
        let owner = self.owner;
        for (i, p) in self.params.iter_mut().enumerate() {
            p.gradient = match grads.param(ParamKey { owner, index: i }) {
                Some(t) if p.trainable => t.clone(),
                _ => Tensor::zeros(p.value.shape()),
            };
        }
    }

    /// SHA-256 over parameter names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Overwrites parameter values from `src`, matched by position and shape.
    /// Optimizer state restarts.
    pub fn copy_values(&mut self, src: &[Tensor]) -> Result<()> {
        if src.len() > self.params.len() {
            return Err(Error::Spec(format!(
                "{}: {} tensors for {} parameters",
                self.spec.name,
                src.len(),
                self.params.len()
            )));
        }
        for (p, t) in self.params.iter_mut().zip(src) {
            if p.value.shape() != t.shape() {
                return Err(Error::Spec(format!(
                    "{}: shape {:?} does not fit {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.reset_to(t.clone());
        }
        Ok(())
    }

    /// Replaces all parameters, including optimizer state, e.g. from a checkpoint.
    pub fn restore(&mut self, params: Vec<Parameter>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.value.shape() != b.value.shape())
        {
            return Err(Error::Spec(format!(
                "{}: restored parameters do not match the spec",
                self.spec.name
            )));
        }
        self.params = params;
        Ok(())
    }
}
