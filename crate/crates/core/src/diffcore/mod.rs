//! Minimal deterministic tensor library: reverse-mode autodiff over NCHW
//! convolutions, dense layers and pointwise ops, plus Adam.

mod adam;
mod graph;
pub mod init;
pub mod kernels;
mod tensor;

pub use adam::{adam_step, Adam, Parameter};
pub use graph::{sigmoid, sign, Gradients, Graph, ParamKey, Var};
pub use init::Rng;
pub use tensor::Tensor;

/// Direct convolution without autodiff bookkeeping.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> crate::Result<Tensor> {
    kernels::conv2d_forward(input, weight, bias, stride, padding)
}

/// Direct transposed convolution; `weight` is laid out `in × out × kh × kw`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> crate::Result<Tensor> {
    kernels::conv_transpose2d_forward(input, weight, bias, stride, padding)
}
