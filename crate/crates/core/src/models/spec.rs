use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Deconv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Non-overlapping average pooling with a `k × k` window.
    AvgPool {
        k: usize,
    },
    /// Average over the whole spatial extent, then flatten to `N × C`.
    GlobalAvgPool,
    Flatten,
    Dense {
        out: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl Layer {
    pub fn conv(
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::Conv {
                out,
                kernel,
                stride,
                padding,
            },
            activation,
        }
    }

    pub fn deconv(
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::Deconv {
                out,
                kernel,
                stride,
                padding,
            },
            activation,
        }
    }

    pub fn dense(out: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { out },
            activation,
        }
    }

    pub fn pool(k: usize) -> Self {
        Self {
            kind: LayerKind::AvgPool { k },
            activation: Activation::Linear,
        }
    }

    pub fn global_pool() -> Self {
        Self {
            kind: LayerKind::GlobalAvgPool,
            activation: Activation::Linear,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            activation: Activation::Linear,
        }
    }

    /// Whether the layer owns a weight and a bias.
    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv { .. } | LayerKind::Deconv { .. } | LayerKind::Dense { .. }
        )
    }
}

/// What a network produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputKind {
    /// `N × K` class logits.
    Logits(usize),
    /// `N × 1` sigmoid probability.
    Probability,
    /// Same shape as the input.
    Image,
}

/// Per-item activation shape: feature maps or a flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Map { c, h, w } => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Map { c, h, w } => write!(f, "{c}x{h}x{w}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Declarative description of a feed-forward network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    /// `(C, H, W)` of one input item.
    pub input: (usize, usize, usize),
    pub layers: Vec<Layer>,
    pub output: OutputKind,
}

impl NetworkSpec {
    /// Shape after each layer, checking every layer against its input.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(self.err("input shape has a zero dimension"));
        }
        let mut shape = Shape::Map { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = self.step(i, layer, shape)?;
            out.push(shape);
        }
        Ok(out)
    }

    fn step(&self, i: usize, layer: &Layer, shape: Shape) -> Result<Shape> {
        let map = |shape: Shape| match shape {
            Shape::Map { c, h, w } => Ok((c, h, w)),
            Shape::Flat(_) => {
                Err(self.err(format!("layer {i} needs feature maps, got a flat vector")))
            }
        };
        match layer.kind {
            LayerKind::Conv {
                out,
                kernel,
                stride,
                padding,
            } => {
                let (_, h, w) = map(shape)?;
                if out == 0
                    || kernel == 0
                    || stride == 0
                    || h + 2 * padding < kernel
                    || w + 2 * padding < kernel
                {
                    return Err(self.err(format!(
                        "layer {i}: conv {kernel}x{kernel}/{stride} does not fit {shape}"
                    )));
                }
                Ok(Shape::Map {
                    c: out,
                    h: (h + 2 * padding - kernel) / stride + 1,
                    w: (w + 2 * padding - kernel) / stride + 1,
                })
            }
            LayerKind::Deconv {
                out,
                kernel,
                stride,
                padding,
            } => {
                let (_, h, w) = map(shape)?;
                let grow = |n: usize| {
                    ((n - 1) * stride + kernel)
                        .checked_sub(2 * padding)
                        .filter(|&m| m > 0)
                };
                match (out, stride, grow(h), grow(w)) {
                    (1.., 1.., Some(h), Some(w)) => Ok(Shape::Map { c: out, h, w }),
                    _ => Err(self.err(format!(
                        "layer {i}: deconv {kernel}x{kernel}/{stride} does not fit {shape}"
                    ))),
                }
            }
            LayerKind::AvgPool { k } => {
                let (c, h, w) = map(shape)?;
                if k == 0 || h % k != 0 || w % k != 0 {
                    return Err(
                        self.err(format!("layer {i}: pool window {k} does not tile {shape}"))
                    );
                }
                Ok(Shape::Map {
                    c,
                    h: h / k,
                    w: w / k,
                })
            }
            LayerKind::GlobalAvgPool => {
                let (c, h, w) = map(shape)?;
                if h != w {
                    return Err(self.err(format!(
                        "layer {i}: global pooling needs square maps, got {shape}"
                    )));
                }
                Ok(Shape::Flat(c))
            }
            LayerKind::Flatten => Ok(Shape::Flat(shape.len())),
            LayerKind::Dense { out } => match shape {
                Shape::Flat(_) if out > 0 => Ok(Shape::Flat(out)),
                Shape::Flat(_) => Err(self.err(format!("layer {i}: dense layer with zero units"))),
                Shape::Map { .. } => Err(self.err(format!(
                    "layer {i}: dense layer needs a flat input, got {shape}"
                ))),
            },
        }
    }

    /// Product of encoder strides and of decoder strides.
    pub fn resampling_factors(&self) -> (usize, usize) {
        self.layers
            .iter()
            .fold((1, 1), |(down, up), l| match l.kind {
                LayerKind::Conv { stride, .. } => (down * stride, up),
                LayerKind::Deconv { stride, .. } => (down, up * stride),
                LayerKind::AvgPool { k } => (down * k, up),
                _ => (down, up),
            })
    }

    /// Full validation against the output contract.
    pub fn validate(&self) -> Result<Shape> {
        let shapes = self.infer_shapes()?;
        let last = *shapes.last().ok_or_else(|| self.err("no layers"))?;
        let (c, h, w) = self.input;
        match self.output {
            OutputKind::Logits(k) => {
                if last != Shape::Flat(k) {
                    return Err(
                        self.err(format!("classifier must end in {k} logits, ends in {last}"))
                    );
                }
            }
            OutputKind::Probability => {
                let head = self.layers.last().expect("nonempty");
                if head.kind != (LayerKind::Dense { out: 1 })
                    || head.activation != Activation::Sigmoid
                {
                    return Err(self.err("discriminator must end in one dense unit with sigmoid"));
                }
            }
            OutputKind::Image => {
                let (down, up) = self.resampling_factors();
                if down != up {
                    return Err(self.err(format!(
                        "encoder downsamples x{down} but decoder upsamples x{up}"
                    )));
                }
                if last != (Shape::Map { c, h, w }) {
                    return Err(self.err(format!("generator maps {c}x{h}x{w} to {last}")));
                }
            }
        }
        Ok(last)
    }

    fn err(&self, msg: impl fmt::Display) -> Error {
        Error::Spec(format!("{}: {msg}", self.name))
    }
}

use Activation::{Linear, Relu, Sigmoid};

/// Desk classifier: four conv stages on `3×32×32`, then a dense layer to `K` logits.
pub fn desk_classifier(classes: usize) -> NetworkSpec {
    NetworkSpec {
        name: "classifier".into(),
        input: (3, 32, 32),
        layers: vec![
            Layer::conv(16, 3, 1, 1, Relu),
            Layer::pool(2),
            Layer::conv(32, 3, 1, 1, Relu),
            Layer::pool(2),
            Layer::conv(32, 3, 1, 1, Relu),
            Layer::pool(2),
            Layer::conv(64, 3, 1, 1, Relu),
            Layer::flatten(),
            Layer::dense(classes, Linear),
        ],
        output: OutputKind::Logits(classes),
    }
}

/// Desk generator: three stride-2 encoder stages, two three-layer
/// deconvolution blocks and a final stride-2 deconvolution with linear output.
pub fn desk_generator() -> NetworkSpec {
    NetworkSpec {
        name: "generator".into(),
        input: (3, 32, 32),
        layers: vec![
            Layer::conv(16, 4, 2, 1, Relu),
            Layer::conv(32, 4, 2, 1, Relu),
            Layer::conv(64, 4, 2, 1, Relu),
            Layer::deconv(32, 4, 2, 1, Relu),
            Layer::deconv(32, 3, 1, 1, Relu),
            Layer::deconv(32, 3, 1, 1, Relu),
            Layer::deconv(16, 4, 2, 1, Relu),
            Layer::deconv(16, 3, 1, 1, Relu),
            Layer::deconv(16, 3, 1, 1, Relu),
            Layer::deconv(3, 4, 2, 1, Linear),
        ],
        output: OutputKind::Image,
    }
}

/// Stand-alone discriminator for runs that know nothing about the
/// classifier: strided convolutions and one sigmoid unit.
pub fn desk_discriminator() -> NetworkSpec {
    NetworkSpec {
        name: "discriminator".into(),
        input: (3, 32, 32),
        layers: vec![
            Layer::conv(16, 4, 2, 1, Relu),
            Layer::conv(32, 4, 2, 1, Relu),
            Layer::conv(64, 4, 2, 1, Relu),
            Layer::global_pool(),
            Layer::dense(1, Sigmoid),
        ],
        output: OutputKind::Probability,
    }
}

/// Discriminator sharing the classifier's layout: every classifier layer but
/// the logit layer, then one sigmoid unit.
pub fn discriminator_from(classifier: &NetworkSpec) -> Result<NetworkSpec> {
    let OutputKind::Logits(_) = classifier.output else {
        return Err(Error::Spec(format!(
            "{} is not a classifier",
            classifier.name
        )));
    };
    let mut layers = classifier.layers.clone();
    match layers.pop() {
        Some(Layer {
            kind: LayerKind::Dense { .. },
            ..
        }) => {}
        _ => {
            return Err(Error::Spec(format!(
                "{} does not end in a dense logit layer",
                classifier.name
            )))
        }
    }
    layers.push(Layer::dense(1, Sigmoid));
    let spec = NetworkSpec {
        name: "discriminator".into(),
        input: classifier.input,
        layers,
        output: OutputKind::Probability,
    };
    spec.validate()?;
    Ok(spec)
}

/// Full-scale generator: a `×32` stand-in encoder to 2048 channels, four
/// deconvolution blocks (`4×4/2`, `3×3/1`, `3×3/1`) and a final `4×4/2` layer.
/// Only ever shape-checked, never instantiated.
pub fn reference_generator() -> NetworkSpec {
    const DECODER: [usize; 13] = [
        2048, 1024, 512, 512, 256, 256, 256, 128, 128, 128, 64, 64, 3,
    ];
    let mut layers: Vec<Layer> = [64, 256, 512, 1024, 2048]
        .iter()
        .map(|&c| Layer::conv(c, 4, 2, 1, Relu))
        .collect();
    for (i, &c) in DECODER.iter().enumerate() {
        let last = i == DECODER.len() - 1;
        let act = if last { Linear } else { Relu };
        layers.push(match i % 3 {
            0 => Layer::deconv(c, 4, 2, 1, act),
            _ => Layer::deconv(c, 3, 1, 1, act),
        });
    }
    NetworkSpec {
        name: "reference-generator".into(),
        input: (3, 224, 224),
        layers,
        output: OutputKind::Image,
    }
}
