//! Raw convolution and matrix kernels over row-major slices.
//!
//! Convolutions are lowered to GEMM through `im2col`/`col2im`, one sample at
//! a time. Column layout is `(channel, ky, kx)` rows by `(oy, ox)` columns.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Spatial geometry shared by conv2d and its transpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Geometry of a forward convolution over a `channels × height × width` image.
    pub fn conv(
        channels: usize,
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        let padded_h = height + 2 * padding;
        let padded_w = width + 2 * padding;
        if kernel_h > padded_h || kernel_w > padded_w {
            return Err(Error::shape(format!(
                "kernel {kernel_h}x{kernel_w} larger than padded input {padded_h}x{padded_w}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (padded_h - kernel_h) / stride + 1,
            out_w: (padded_w - kernel_w) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, out: usize, k: usize) -> Option<usize> {
        (out * self.stride + k).checked_sub(self.padding)
    }
}

pub fn im2col(img: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.source(oy, ky).filter(|&y| y < g.height) {
                        None => line.fill(0.0),
                        Some(y) => {
                            let src = &plane[y * g.width..(y + 1) * g.width];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.source(ox, kx) {
                                    Some(x) if x < g.width => src[x],
                                    _ => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into an image; the adjoint of [`im2col`].
pub fn col2im(cols: &[f32], g: &ConvGeometry, img: &mut [f32]) {
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let Some(y) = g.source(oy, ky).filter(|&y| y < g.height) else {
                        continue;
                    };
                    let dst = &mut plane[y * g.width..(y + 1) * g.width];
                    for ox in 0..g.out_w {
                        if let Some(x) = g.source(ox, kx).filter(|&x| x < g.width) {
                            dst[x] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m × k` and `op(b)` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: strides describe exactly the extents checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Validates conv2d operands and returns the per-sample geometry.
pub fn conv2d_geometry(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    expect_rank(x, 4, "conv2d input")?;
    expect_rank(w, 4, "conv2d weight")?;
    let (xs, ws) = (x.shape(), w.shape());
    if xs[1] != ws[1] {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels but weight expects {}",
            xs[1], ws[1]
        )));
    }
    if b.shape() != [ws[0]] {
        return Err(Error::shape(format!(
            "conv2d: bias shape {:?}, expected [{}]",
            b.shape(),
            ws[0]
        )));
    }
    ConvGeometry::conv(xs[1], xs[2], xs[3], ws[2], ws[3], stride, padding)
}

pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = conv2d_geometry(x, w, b, stride, padding)?;
    let (n, out_c) = (x.shape()[0], w.shape()[0]);
    let in_len = x.item_len();
    let out_len = out_c * g.col_cols();
    let mut out = vec![0.0f32; n * out_len];
    let mut cols = vec![0.0f32; g.col_rows() * g.col_cols()];
    for s in 0..n {
        im2col(&x.data()[s * in_len..(s + 1) * in_len], &g, &mut cols);
        let y = &mut out[s * out_len..(s + 1) * out_len];
        for (o, chunk) in y.chunks_mut(g.col_cols()).enumerate() {
            chunk.fill(b.data()[o]);
        }
        gemm(
            out_c,
            g.col_rows(),
            g.col_cols(),
            w.data(),
            false,
            &cols,
            false,
            1.0,
            y,
        );
    }
    Tensor::new(vec![n, out_c, g.out_h, g.out_w], out)
}

/// Gradients of conv2d with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: usize,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let bias_shape = Tensor::zeros(&[w.shape()[0]]);
    let g = conv2d_geometry(x, w, &bias_shape, stride, padding)?;
    let (n, out_c) = (x.shape()[0], w.shape()[0]);
    let in_len = x.item_len();
    let ncols = g.col_cols();
    let out_len = out_c * ncols;
    let mut dw = vec![0.0f32; w.len()];
    let mut db = vec![0.0f64; out_c];
    let mut dx = if need_dx {
        vec![0.0f32; x.len()]
    } else {
        Vec::new()
    };
    let mut cols = vec![0.0f32; g.col_rows() * ncols];
    let mut dcols = vec![0.0f32; g.col_rows() * ncols];
    for s in 0..n {
        let dys = &dy.data()[s * out_len..(s + 1) * out_len];
        for (o, chunk) in dys.chunks(ncols).enumerate() {
            db[o] += chunk.iter().map(|&v| v as f64).sum::<f64>();
        }
        im2col(&x.data()[s * in_len..(s + 1) * in_len], &g, &mut cols);
        gemm(
            out_c,
            ncols,
            g.col_rows(),
            dys,
            false,
            &cols,
            true,
            1.0,
            &mut dw,
        );
        if need_dx {
            gemm(
                g.col_rows(),
                out_c,
                ncols,
                w.data(),
                true,
                dys,
                false,
                0.0,
                &mut dcols,
            );
            col2im(&dcols, &g, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    let dx = if need_dx {
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((
        dx,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![out_c], db.into_iter().map(|v| v as f32).collect())?,
    ))
}

/// Geometry of a transposed convolution, expressed as the forward conv that
/// it is the adjoint of: the conv maps the (larger) output back onto the input grid.
pub fn conv_transpose2d_geometry(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    expect_rank(x, 4, "conv_transpose2d input")?;
    expect_rank(w, 4, "conv_transpose2d weight")?;
    let (xs, ws) = (x.shape(), w.shape());
    if xs[1] != ws[0] {
        return Err(Error::shape(format!(
            "conv_transpose2d: input has {} channels but weight expects {}",
            xs[1], ws[0]
        )));
    }
    if b.shape() != [ws[1]] {
        return Err(Error::shape(format!(
            "conv_transpose2d: bias shape {:?}, expected [{}]",
            b.shape(),
            ws[1]
        )));
    }
    if stride == 0 {
        return Err(Error::shape("stride must be positive"));
    }
    let out_h = ((xs[2] - 1) * stride + ws[2])
        .checked_sub(2 * padding)
        .filter(|&h| h > 0)
        .ok_or_else(|| Error::shape("conv_transpose2d: padding exceeds output extent"))?;
    let out_w = ((xs[3] - 1) * stride + ws[3])
        .checked_sub(2 * padding)
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::shape("conv_transpose2d: padding exceeds output extent"))?;
    let g = ConvGeometry::conv(ws[1], out_h, out_w, ws[2], ws[3], stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (xs[2], xs[3]));
    Ok(g)
}

pub fn conv_transpose2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = conv_transpose2d_geometry(x, w, b, stride, padding)?;
    let (n, in_c, out_c) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    let in_len = x.item_len();
    let out_plane = g.height * g.width;
    let out_len = out_c * out_plane;
    let mut out = vec![0.0f32; n * out_len];
    let mut cols = vec![0.0f32; g.col_rows() * g.col_cols()];
    for s in 0..n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        gemm(
            g.col_rows(),
            in_c,
            g.col_cols(),
            w.data(),
            true,
            xs,
            false,
            0.0,
            &mut cols,
        );
        let y = &mut out[s * out_len..(s + 1) * out_len];
        col2im(&cols, &g, y);
        for (o, plane) in y.chunks_mut(out_plane).enumerate() {
            let bias = b.data()[o];
            plane.iter_mut().for_each(|v| *v += bias);
        }
    }
    Tensor::new(vec![n, out_c, g.height, g.width], out)
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: usize,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let bias_shape = Tensor::zeros(&[w.shape()[1]]);
    let g = conv_transpose2d_geometry(x, w, &bias_shape, stride, padding)?;
    let (n, in_c, out_c) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    let in_len = x.item_len();
    let out_plane = g.height * g.width;
    let out_len = out_c * out_plane;
    let ncols = g.col_cols();
    let mut dw = vec![0.0f32; w.len()];
    let mut db = vec![0.0f64; out_c];
    let mut dx = if need_dx {
        vec![0.0f32; x.len()]
    } else {
        Vec::new()
    };
    let mut dcols = vec![0.0f32; g.col_rows() * ncols];
    for s in 0..n {
        let dys = &dy.data()[s * out_len..(s + 1) * out_len];
        for (o, plane) in dys.chunks(out_plane).enumerate() {
            db[o] += plane.iter().map(|&v| v as f64).sum::<f64>();
        }
        im2col(dys, &g, &mut dcols);
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        gemm(
            in_c,
            ncols,
            g.col_rows(),
            xs,
            false,
            &dcols,
            true,
            1.0,
            &mut dw,
        );
        if need_dx {
            gemm(
                in_c,
                g.col_rows(),
                ncols,
                w.data(),
                false,
                &dcols,
                false,
                0.0,
                &mut dx[s * in_len..(s + 1) * in_len],
            );
        }
    }
    let dx = if need_dx {
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((
        dx,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![out_c], db.into_iter().map(|v| v as f32).collect())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_handles_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry::conv(2, 5, 4, 3, 3, 2, 1).unwrap();
        let img: Vec<f32> = (0..40).map(|i| (i as f32 * 0.37).sin()).collect();
        let cols: Vec<f32> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f32 * 0.11).cos())
            .collect();
        let mut c = vec![0.0; cols.len()];
        im2col(&img, &g, &mut c);
        let mut back = vec![0.0; img.len()];
        col2im(&cols, &g, &mut back);
        let lhs: f64 = c
            .iter()
            .zip(&cols)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        let rhs: f64 = img
            .iter()
            .zip(&back)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }
}
