//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution
//! order. [`Graph::backward`] walks the tape in exact reverse order and
//! returns a [`Gradients`] registry holding one entry per trainable parameter
//! that was recorded, plus the gradients of inputs created with
//! [`Graph::input_with_grad`].

use std::collections::BTreeMap;

use crate::diffcore::kernels;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Identifies a parameter: which network owns it and its slot there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub owner: u64,
    pub index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamKey),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    AvgPool {
        x: Var,
        k: usize,
    },
    Reshape(Var),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Square(Var),
    Log(Var),
    Abs(Var),
    Clamp {
        x: Var,
        lo: f32,
        hi: f32,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: BTreeMap<ParamKey, Tensor>,
    inputs: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, key: ParamKey) -> Option<&Tensor> {
        self.params.get(&key)
    }

    pub fn input(&self, var: Var) -> Option<&Tensor> {
        self.inputs.get(&var)
    }

    pub fn param_keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.params.keys()
    }

    /// Whether any entry belongs to the network with the given owner id.
    pub fn touches(&self, owner: u64) -> bool {
        self.params.keys().any(|k| k.owner == owner)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Graph::backward`].
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a parameter. Only `trainable` parameters enter the registry.
    pub fn param(&mut self, key: ParamKey, value: &Tensor, trainable: bool) -> Var {
        if trainable {
            self.push(value.clone(), Op::Param(key), true)
        } else {
            self.push(value.clone(), Op::Leaf, false)
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let out =
            kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), stride, padding)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = kernels::conv_transpose2d_forward(
            self.value(x),
            self.value(w),
            self.value(b),
            stride,
            padding,
        )?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// `y = x·wᵀ + b` for `x: N×in`, `w: out×in`, `b: out`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[1] {
            return Err(Error::shape(format!(
                "dense: input {:?} incompatible with weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let (n, fan_in, fan_out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
        if bv.shape() != [fan_out] {
            return Err(Error::shape(format!(
                "dense: bias shape {:?}, expected [{fan_out}]",
                bv.shape()
            )));
        }
        let mut out = Vec::with_capacity(n * fan_out);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        kernels::gemm(
            n,
            fan_in,
            fan_out,
            xv.data(),
            false,
            wv.data(),
            true,
            1.0,
            &mut out,
        );
        let out = Tensor::new(vec![n, fan_out], out)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::Dense { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.requires_grad(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.requires_grad(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Non-overlapping `k × k` average pooling over NCHW input.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 || k == 0 || xv.shape()[2] % k != 0 || xv.shape()[3] % k != 0 {
            return Err(Error::shape(format!(
                "avg_pool: window {k} does not tile shape {:?}",
                xv.shape()
            )));
        }
        let s = xv.shape();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let scale = 1.0 / (k * k) as f64;
        let mut out = vec![0.0f32; planes * oh * ow];
        for p in 0..planes {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for dy in 0..k {
                        let row = &src[(oy * k + dy) * w + ox * k..(oy * k + dy) * w + ox * k + k];
                        acc += row.iter().map(|&v| v as f64).sum::<f64>();
                    }
                    out[(p * oh + oy) * ow + ox] = (acc * scale) as f32;
                }
            }
        }
        let out = Tensor::new(vec![s[0], s[1], oh, ow], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::AvgPool { x, k }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = [v.batch(), v.item_len()];
        self.reshape(x, &shape)
    }

    /// Row-wise softmax over an `N × K` matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape(format!(
                "softmax expects N×K, got {:?}",
                xv.shape()
            )));
        }
        let k = xv.shape()[1];
        let mut out = xv.data().to_vec();
        out.chunks_mut(k).for_each(softmax_in_place);
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "softmax_cross_entropy: logits {:?} vs {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        let k = lv.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::shape(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut total = 0.0f64;
        for (row, &label) in lv.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = max
                + row
                    .iter()
                    .map(|&v| (v as f64 - max).exp())
                    .sum::<f64>()
                    .ln();
            total += lse - row[label] as f64;
        }
        let out = Tensor::scalar((total / labels.len() as f64) as f32);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.requires_grad(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        let rg = self.requires_grad(x);
        self.push(out, Op::Square(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        let out = xv.map(f32::ln);
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Log(x), rg))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f32::abs);
        let rg = self.requires_grad(x);
        self.push(out, Op::Abs(x), rg)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.requires_grad(x);
        self.push(out, Op::Clamp { x, lo, hi }, rg)
    }

    /// Sum of all elements as a scalar, accumulated in `f64`.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum() as f32);
        let rg = self.requires_grad(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f32;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.rank() != 0 {
            return Err(Error::contract(
                "diffcore",
                format!("backward needs a scalar loss, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    out.inputs.insert(Var(i), dy);
                }
                Op::Param(key) => match out.params.get_mut(key) {
                    Some(acc) => acc.add_assign(&dy)?,
                    None => {
                        out.params.insert(*key, dy);
                    }
                },
                op => {
                    for (v, g) in self.local_grads(op, &node.value, &dy)? {
                        if !self.requires_grad(v) {
                            continue;
                        }
                        match &mut grads[v.0] {
                            Some(acc) => acc.add_assign(&g)?,
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of one op: `(input, dL/dinput)` pairs.
    fn local_grads(&self, op: &Op, y: &Tensor, dy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let grads = match *op {
            Op::Leaf | Op::Param(_) => unreachable!("leaves handled by caller"),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(x),
                    self.value(w),
                    stride,
                    padding,
                    dy,
                    self.requires_grad(x),
                )?;
                let mut v = vec![(w, dw), (b, db)];
                v.extend(dx.map(|dx| (x, dx)));
                v
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (dx, dw, db) = kernels::conv_transpose2d_backward(
                    self.value(x),
                    self.value(w),
                    stride,
                    padding,
                    dy,
                    self.requires_grad(x),
                )?;
                let mut v = vec![(w, dw), (b, db)];
                v.extend(dx.map(|dx| (x, dx)));
                v
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (n, fan_in, fan_out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                let mut dx = vec![0.0; n * fan_in];
                kernels::gemm(
                    n,
                    fan_out,
                    fan_in,
                    dy.data(),
                    false,
                    wv.data(),
                    false,
                    0.0,
                    &mut dx,
                );
                let mut dw = vec![0.0; fan_out * fan_in];
                kernels::gemm(
                    fan_out,
                    n,
                    fan_in,
                    dy.data(),
                    true,
                    xv.data(),
                    false,
                    0.0,
                    &mut dw,
                );
                let mut db = vec![0.0f64; fan_out];
                for row in dy.data().chunks(fan_out) {
                    db.iter_mut().zip(row).for_each(|(a, &g)| *a += g as f64);
                }
                vec![
                    (x, Tensor::new(xv.shape().to_vec(), dx)?),
                    (w, Tensor::new(wv.shape().to_vec(), dw)?),
                    (
                        b,
                        Tensor::new(vec![fan_out], db.into_iter().map(|v| v as f32).collect())?,
                    ),
                ]
            }
            Op::Relu(x) => vec![(
                x,
                self.value(x)
                    .zip_map(dy, |v, g| if v > 0.0 { g } else { 0.0 })?,
            )],
            Op::Sigmoid(x) => vec![(x, y.zip_map(dy, |s, g| g * s * (1.0 - s))?)],
            Op::AvgPool { x, k } => {
                let xs = self.value(x).shape().to_vec();
                let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
                let (oh, ow) = (h / k, w / k);
                let scale = 1.0 / (k * k) as f32;
                let mut dx = vec![0.0f32; planes * h * w];
                for p in 0..planes {
                    for yy in 0..h {
                        for xx in 0..w {
                            dx[(p * h + yy) * w + xx] =
                                dy.data()[(p * oh + yy / k) * ow + xx / k] * scale;
                        }
                    }
                }
                vec![(x, Tensor::new(xs, dx)?)]
            }
            Op::Reshape(x) => vec![(x, dy.reshape(self.value(x).shape())?)],
            Op::Softmax(x) => {
                let k = y.shape()[1];
                let mut dx = Vec::with_capacity(y.len());
                for (s, g) in y.data().chunks(k).zip(dy.data().chunks(k)) {
                    let dot: f64 = s.iter().zip(g).map(|(&a, &b)| a as f64 * b as f64).sum();
                    dx.extend(s.iter().zip(g).map(|(&si, &gi)| si * (gi - dot as f32)));
                }
                vec![(x, Tensor::new(y.shape().to_vec(), dx)?)]
            }
            Op::SoftmaxCrossEntropy { logits, ref labels } => {
                let lv = self.value(logits);
                let k = lv.shape()[1];
                let scale = dy.item() / labels.len() as f32;
                let mut dx = lv.data().to_vec();
                for (row, &label) in dx.chunks_mut(k).zip(labels) {
                    softmax_in_place(row);
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                vec![(logits, Tensor::new(lv.shape().to_vec(), dx)?)]
            }
            Op::Add(a, b) => vec![(a, dy.clone()), (b, dy.clone())],
            Op::Sub(a, b) => vec![(a, dy.clone()), (b, dy.map(|g| -g))],
            Op::Mul(a, b) => vec![
                (a, dy.zip_map(self.value(b), |g, v| g * v)?),
                (b, dy.zip_map(self.value(a), |g, v| g * v)?),
            ],
            Op::Scale(x, c) => vec![(x, dy.map(|g| g * c))],
            Op::AddScalar(x) => vec![(x, dy.clone())],
            Op::Square(x) => vec![(x, self.value(x).zip_map(dy, |v, g| 2.0 * v * g)?)],
            Op::Log(x) => vec![(x, self.value(x).zip_map(dy, |v, g| g / v)?)],
            Op::Abs(x) => vec![(x, self.value(x).zip_map(dy, |v, g| g * sign(v))?)],
            Op::Clamp { x, lo, hi } => vec![(
                x,
                self.value(x)
                    .zip_map(dy, |v, g| if v >= lo && v <= hi { g } else { 0.0 })?,
            )],
            Op::Sum(x) => vec![(x, Tensor::full(self.value(x).shape(), dy.item()))],
        };
        Ok(grads)
    }
}

/// Numerically stable logistic function, kept strictly inside `(0, 1)`.
pub fn sigmoid(v: f32) -> f32 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
}

/// `sign(0) = 0`, which is also the subgradient used for `|x|` at zero.
pub fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v as f64;
    }
    row.iter_mut().for_each(|v| *v = (*v as f64 / total) as f32);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x =
            g.input_with_grad(Tensor::new(vec![2, 3], vec![1., -2., 3., 0.5, 7., -1.]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.input(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.input_with_grad(Tensor::ones(&[3]));
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
    }

    #[test]
    fn unused_parameter_gets_zero_and_frozen_gets_nothing() {
        let mut g = Graph::new();
        let used = g.param(
            ParamKey { owner: 1, index: 0 },
            &Tensor::from_vec(vec![2.0, 3.0]),
            true,
        );
        let unused = g.param(
            ParamKey { owner: 1, index: 1 },
            &Tensor::from_vec(vec![5.0]),
            true,
        );
        let frozen = g.param(
            ParamKey { owner: 2, index: 0 },
            &Tensor::from_vec(vec![4.0, 4.0]),
            false,
        );
        let _ = unused;
        let prod = g.mul(used, frozen).unwrap();
        let s = g.sum(prod);
        let grads = g.backward(s).unwrap();
        assert_eq!(
            grads.param(ParamKey { owner: 1, index: 0 }).unwrap().data(),
            &[4.0, 4.0]
        );
        assert!(grads.param(ParamKey { owner: 1, index: 1 }).is_none());
        assert!(!grads.touches(2));
    }

    #[test]
    fn activation_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![-3.0, 3.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 3.0]);
        let z = g.constant(Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
        let s = g.softmax(z).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        for v in [-200.0f32, -30.0, -5.0, 0.0, 5.0, 15.0, 40.0, 200.0] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s}");
        }
    }
}
