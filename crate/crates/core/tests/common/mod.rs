//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use pgn_core::diffcore::{Graph, Rng, Tensor, Var};

pub fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    rng.uniform_tensor(shape, lo, hi)
}

/// Six-nested-loop convolution, accumulated in f64.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f32; n * o * oh * ow];
    for s in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((s * c + ic) * h + iy as usize) * wd + ix as usize;
                                let wi = ((oc * c + ic) * kh + ky) * kw + kx;
                                acc += x.data()[xi] as f64 * w.data()[wi] as f64;
                            }
                        }
                    }
                    out[((s * o + oc) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

/// Transposed convolution by scattering every input pixel through the kernel.
pub fn naive_conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut acc = vec![0.0f64; n * co * oh * ow];
    for s in 0..n {
        for ic in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = x.data()[((s * ci + ic) * h + iy) * wd + ix] as f64;
                    for oc in 0..co {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xx = (ix * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                let wv = w.data()[((ic * co + oc) * kh + ky) * kw + kx] as f64;
                                acc[((s * co + oc) * oh + y as usize) * ow + xx as usize] +=
                                    xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    for s in 0..n {
        for oc in 0..co {
            for i in 0..oh * ow {
                acc[(s * co + oc) * oh * ow + i] += b.data()[oc] as f64;
            }
        }
    }
    Tensor::new(
        vec![n, co, oh, ow],
        acc.into_iter().map(|v| v as f32).collect(),
    )
    .unwrap()
}

/// Result of comparing analytic against central-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Central finite differences on `f(inputs)` projected onto fixed random
/// weights, compared to the graph's analytic gradient for every coordinate
/// of every input.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)` with `floor` a tenth of
/// the largest gradient magnitude of that input, so coordinates that are
/// numerically zero are judged against the tensor's gradient scale.
pub fn grad_check<F>(inputs: &[Tensor], projection_seed: u64, h: f32, f: F) -> GradCheck
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, &vars);
        g.value(y).shape().to_vec()
    };
    let mut rng = Rng::new(projection_seed, 99);
    let weights = rng.uniform_tensor(&probe, -1.0, 1.0);

    let project = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, &vars);
        g.value(y).dot(&weights).unwrap()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input_with_grad(t.clone()))
        .collect();
    let y = f(&mut g, &vars);
    let wv = g.constant(weights.clone());
    let prod = g.mul(y, wv).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();

    let mut max_rel_err = 0.0f64;
    let mut coords = 0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .input(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let scale = analytic
            .data()
            .iter()
            .fold(0.0f64, |m, &a| m.max(a.abs() as f64));
        let floor = (0.1 * scale).max(1e-6);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            // The realised step, not 2h: x ± h rounds in f32.
            let step = plus[i].data()[j] as f64 - minus[i].data()[j] as f64;
            let numeric = (project(&plus) - project(&minus)) / step;
            let a = analytic.data()[j] as f64;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            max_rel_err = max_rel_err.max(rel);
            coords += 1;
        }
    }
    GradCheck {
        max_rel_err,
        coords,
    }
}

/// Draws values whose magnitude is at least `margin`, keeping finite
/// differences away from kinks at zero.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], margin: f32) -> Tensor {
    let mut t = rng.uniform_tensor(shape, -1.0, 1.0);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 {
                -margin - v.abs()
            } else {
                margin + v.abs()
            };
        }
    }
    t
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// One random instance of a differentiable op: its inputs and how to apply it.
pub struct OpCase {
    pub inputs: Vec<Tensor>,
    pub apply: OpFn,
}

pub const DIFFERENTIABLE_OPS: &[&str] = &[
    "conv2d",
    "conv_transpose2d",
    "dense",
    "relu",
    "sigmoid",
    "avg_pool",
    "flatten",
    "softmax",
    "softmax_cross_entropy",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "square",
    "log",
    "abs",
    "clamp",
    "sum",
    "mean",
];

/// Builds a random small instance of the named op.
pub fn op_case(name: &str, rng: &mut Rng) -> OpCase {
    let small = |rng: &mut Rng| 1 + rng.below(3);
    match name {
        "conv2d" => {
            let (n, c, o) = (small(rng), small(rng), small(rng));
            let k = 1 + rng.below(3);
            let stride = 1 + rng.below(2);
            let pad = rng.below(k);
            let hw = k + rng.below(4);
            OpCase {
                inputs: vec![
                    rng.uniform_tensor(&[n, c, hw, hw], -1.0, 1.0),
                    rng.uniform_tensor(&[o, c, k, k], -1.0, 1.0),
                    rng.uniform_tensor(&[o], -1.0, 1.0),
                ],
                apply: Box::new(move |g, v| g.conv2d(v[0], v[1], v[2], stride, pad).unwrap()),
            }
        }
        "conv_transpose2d" => {
            let (n, c, o) = (small(rng), small(rng), small(rng));
            let k = 1 + rng.below(4);
            let stride = 1 + rng.below(2);
            let pad = rng.below(k.div_ceil(2));
            let hw = 1 + rng.below(4);
            OpCase {
                inputs: vec![
                    rng.uniform_tensor(&[n, c, hw, hw], -1.0, 1.0),
                    rng.uniform_tensor(&[c, o, k, k], -1.0, 1.0),
                    rng.uniform_tensor(&[o], -1.0, 1.0),
                ],
                apply: Box::new(move |g, v| {
                    g.conv_transpose2d(v[0], v[1], v[2], stride, pad).unwrap()
                }),
            }
        }
        "dense" => {
            let (n, i, o) = (small(rng), 1 + rng.below(5), 1 + rng.below(5));
            OpCase {
                inputs: vec![
                    rng.uniform_tensor(&[n, i], -1.0, 1.0),
                    rng.uniform_tensor(&[o, i], -1.0, 1.0),
                    rng.uniform_tensor(&[o], -1.0, 1.0),
                ],
                apply: Box::new(|g, v| g.dense(v[0], v[1], v[2]).unwrap()),
            }
        }
        "relu" | "abs" => {
            let shape = [small(rng), 1 + rng.below(6)];
            let unary: fn(&mut Graph, Var) -> Var = if name == "relu" {
                Graph::relu
            } else {
                Graph::abs
            };
            OpCase {
                inputs: vec![away_from_zero(rng, &shape, 0.05)],
                apply: Box::new(move |g, v| unary(g, v[0])),
            }
        }
        "sigmoid" | "square" => {
            let shape = [small(rng), 1 + rng.below(6)];
            let unary: fn(&mut Graph, Var) -> Var = if name == "sigmoid" {
                Graph::sigmoid
            } else {
                Graph::square
            };
            OpCase {
                inputs: vec![rng.uniform_tensor(&shape, -3.0, 3.0)],
                apply: Box::new(move |g, v| unary(g, v[0])),
            }
        }
        "avg_pool" => {
            let k = 1 + rng.below(3);
            let shape = [
                small(rng),
                small(rng),
                k * (1 + rng.below(3)),
                k * (1 + rng.below(3)),
            ];
            OpCase {
                inputs: vec![rng.uniform_tensor(&shape, -1.0, 1.0)],
                apply: Box::new(move |g, v| g.avg_pool(v[0], k).unwrap()),
            }
        }
        "flatten" => {
            let shape = [small(rng), small(rng), small(rng), small(rng)];
            OpCase {
                inputs: vec![rng.uniform_tensor(&shape, -1.0, 1.0)],
                apply: Box::new(|g, v| g.flatten(v[0]).unwrap()),
            }
        }
        "softmax" => {
            let shape = [small(rng), 2 + rng.below(5)];
            OpCase {
                inputs: vec![rng.uniform_tensor(&shape, -2.0, 2.0)],
                apply: Box::new(|g, v| g.softmax(v[0]).unwrap()),
            }
        }
        "softmax_cross_entropy" => {
            let (n, k) = (small(rng), 2 + rng.below(5));
            let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            OpCase {
                inputs: vec![rng.uniform_tensor(&[n, k], -2.0, 2.0)],
                apply: Box::new(move |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap()),
            }
        }
        "add" | "sub" | "mul" => {
            let shape = [small(rng), 1 + rng.below(5)];
            let binary: fn(&mut Graph, Var, Var) -> pgn_core::Result<Var> = match name {
                "add" => Graph::add,
                "sub" => Graph::sub,
                _ => Graph::mul,
            };
            OpCase {
                inputs: vec![
                    rng.uniform_tensor(&shape, -2.0, 2.0),
                    rng.uniform_tensor(&shape, -2.0, 2.0),
                ],
                apply: Box::new(move |g, v| binary(g, v[0], v[1]).unwrap()),
            }
        }
        "scale" | "add_scalar" => {
            let shape = [small(rng), 1 + rng.below(5)];
            let c = rng.uniform(-3.0, 3.0);
            let is_scale = name == "scale";
            OpCase {
                inputs: vec![rng.uniform_tensor(&shape, -2.0, 2.0)],
                apply: Box::new(move |g, v| {
                    if is_scale {
                        g.scale(v[0], c)
                    } else {
                        g.add_scalar(v[0], c)
                    }
                }),
            }
        }
        "log" => {
            let shape = [small(rng), 1 + rng.below(5)];
            OpCase {
                inputs: vec![rng.uniform_tensor(&shape, 0.5, 3.0)],
                apply: Box::new(|g, v| g.log(v[0]).unwrap()),
            }
        }
        "clamp" => {
            // Values inside and outside the band, but never within 0.05 of an edge.
            let shape = [small(rng), 1 + rng.below(6)];
            let mut t = rng.uniform_tensor(&shape, -2.0, 2.0);
            for v in t.data_mut() {
                for edge in [-1.0f32, 1.0] {
                    if (*v - edge).abs() < 0.05 {
                        *v = edge + 0.1 * (*v - edge).signum().max(0.0)
                            - 0.1 * (edge - *v).signum().max(0.0);
                    }
                }
            }
            OpCase {
                inputs: vec![t],
                apply: Box::new(|g, v| g.clamp(v[0], -1.0, 1.0)),
            }
        }
        "sum" | "mean" => {
            let shape = [small(rng), 1 + rng.below(5)];
            let is_sum = name == "sum";
            OpCase {
                inputs: vec![rng.uniform_tensor(&shape, -2.0, 2.0)],
                apply: Box::new(move |g, v| if is_sum { g.sum(v[0]) } else { g.mean(v[0]) }),
            }
        }
        other => panic!("no gradient case for op `{other}`"),
    }
}

/// Runs `instances` random finite-difference checks of one op and returns
/// the worst relative error seen.
pub fn check_op(name: &str, instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed, 17);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let case = op_case(name, &mut rng);
        let r = grad_check(&case.inputs, seed ^ (i as u64 + 1), 1e-2, |g, v| {
            (case.apply)(g, v)
        });
        worst = worst.max(r.max_rel_err);
    }
    worst
}
