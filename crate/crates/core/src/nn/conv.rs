//! Stride-1 3D convolution lowered to GEMM through an im2col buffer.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{sgemm, Layout};
use super::{spatial_dims, LayerGrads, LayerKind, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Geometry {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    padding: usize,
    input: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn output_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel * self.kernel
    }
}

/// Output extents of a stride-1 convolution: `extent + 2·padding - kernel + 1`.
pub fn conv3d_output_extents(input: [usize; 3], kernel: usize, padding: usize) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for axis in 0..3 {
        let padded = input[axis] + 2 * padding;
        if kernel == 0 || kernel > padded {
            return Err(Error::KernelTooLarge {
                axis,
                kernel,
                input: padded,
            });
        }
        out[axis] = padded - kernel + 1;
    }
    Ok(out)
}

fn geometry(input: &Tensor, params: &LayerParams) -> Result<(usize, Geometry)> {
    let LayerKind::Conv3d {
        in_channels,
        out_channels,
        kernel,
        padding,
    } = params.kind
    else {
        return Err(Error::InvalidTensor("conv3d called with dense parameters".into()));
    };
    let (batch, channels, dims) = spatial_dims(input, "conv3d input")?;
    if channels != in_channels {
        return Err(Error::ShapeMismatch {
            context: "conv3d input channels",
            axis: 1,
            expected: in_channels,
            actual: channels,
        });
    }
    let output = conv3d_output_extents(dims, kernel, padding)?;
    Ok((
        batch,
        Geometry {
            in_channels,
            out_channels,
            kernel,
            padding,
            input: dims,
            output,
        },
    ))
}

/// Output positions `[lo, hi)` along one axis whose tap at kernel offset
/// `kk` falls inside an input of extent `n`, and the input index of `lo`.
fn valid_span(out: usize, n: usize, kk: usize, pad: usize) -> (usize, usize) {
    // input index = o + kk - pad must lie in [0, n)
    let lo = pad.saturating_sub(kk).min(out);
    let hi = (n + pad).saturating_sub(kk).min(out).max(lo);
    (lo, hi)
}

/// Gathers every receptive field of one sample into a `patch × positions`
/// matrix. Rows are ordered `(channel, kd, kh, kw)` to match the weight
/// layout. Out-of-range taps are never written, so `cols` must start zeroed
/// and may then be reused for any number of samples of the same geometry.
fn im2col(g: &Geometry, sample: &[f32], cols: &mut [f32]) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let k = g.kernel;
    let pad = g.padding;
    let positions = g.output_volume();
    let mut row = 0;
    for c in 0..g.in_channels {
        let channel = &sample[c * d * h * w..(c + 1) * d * h * w];
        for kd in 0..k {
            let (z0, z1) = valid_span(od, d, kd, pad);
            for kh in 0..k {
                let (y0, y1) = valid_span(oh, h, kh, pad);
                for kw in 0..k {
                    let (x0, x1) = valid_span(ow, w, kw, pad);
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for z in z0..z1 {
                        let iz = z + kd - pad;
                        for y in y0..y1 {
                            let iy = y + kh - pad;
                            let src = (iz * h + iy) * w + x0 + kw - pad;
                            let at = (z * oh + y) * ow;
                            dst[at + x0..at + x1].copy_from_slice(&channel[src..src + (x1 - x0)]);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-adds a `patch × positions` matrix back onto one sample's input
/// gradient; the adjoint of [`im2col`].
fn col2im(g: &Geometry, cols: &[f32], sample: &mut [f32]) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let k = g.kernel;
    let pad = g.padding;
    let positions = g.output_volume();
    let mut row = 0;
    for c in 0..g.in_channels {
        let channel = &mut sample[c * d * h * w..(c + 1) * d * h * w];
        for kd in 0..k {
            let (z0, z1) = valid_span(od, d, kd, pad);
            for kh in 0..k {
                let (y0, y1) = valid_span(oh, h, kh, pad);
                for kw in 0..k {
                    let (x0, x1) = valid_span(ow, w, kw, pad);
                    let src = &cols[row * positions..(row + 1) * positions];
                    for z in z0..z1 {
                        let iz = z + kd - pad;
                        for y in y0..y1 {
                            let iy = y + kh - pad;
                            let dst = (iz * h + iy) * w + x0 + kw - pad;
                            let at = (z * oh + y) * ow;
                            for (o, &v) in channel[dst..dst + (x1 - x0)].iter_mut().zip(&src[at + x0..at + x1]) {
                                *o += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub fn conv3d_forward(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let (batch, g) = geometry(input, params)?;
    let positions = g.output_volume();
    let patch = g.patch();
    let in_len = g.in_channels * g.input_volume();
    let out_len = g.out_channels * positions;
    let mut out = vec![0.0f32; batch * out_len];
    let mut cols = vec![0.0f32; patch * positions];
    for n in 0..batch {
        im2col(&g, &input.data()[n * in_len..(n + 1) * in_len], &mut cols);
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        sgemm(
            g.out_channels,
            patch,
            positions,
            params.weights.data(),
            Layout::row_major(patch),
            &cols,
            Layout::row_major(positions),
            0.0,
            dst,
        );
        for (o, row) in dst.chunks_exact_mut(positions).enumerate() {
            let b = params.bias.data()[o];
            row.iter_mut().for_each(|v| *v += b);
        }
    }
    let [od, oh, ow] = g.output;
    Tensor::new(&[batch, g.out_channels, od, oh, ow], out)
}

/// Gradients of a convolution with respect to its input (when
/// `want_input_grad`), weights and bias.
pub fn conv3d_backward(
    input: &Tensor,
    params: &LayerParams,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<(Option<Tensor>, LayerGrads)> {
    let (batch, g) = geometry(input, params)?;
    let [od, oh, ow] = g.output;
    super::expect_shape(grad_out, &[batch, g.out_channels, od, oh, ow], "conv3d upstream gradient")?;
    let positions = g.output_volume();
    let patch = g.patch();
    let in_len = g.in_channels * g.input_volume();
    let out_len = g.out_channels * positions;

    let mut grad_w = vec![0.0f32; g.out_channels * patch];
    let mut grad_b = vec![0.0f32; g.out_channels];
    let mut grad_in: Vec<f32> = if want_input_grad {
        vec![0.0; batch * in_len]
    } else {
        Vec::new()
    };
    let mut cols = vec![0.0f32; patch * positions];
    let mut grad_cols = if want_input_grad {
        vec![0.0f32; patch * positions]
    } else {
        Vec::new()
    };

    for n in 0..batch {
        let go = &grad_out.data()[n * out_len..(n + 1) * out_len];
        im2col(&g, &input.data()[n * in_len..(n + 1) * in_len], &mut cols);
        // dW += dOut · colsᵀ
        sgemm(
            g.out_channels,
            positions,
            patch,
            go,
            Layout::row_major(positions),
            &cols,
            Layout::transposed(positions),
            1.0,
            &mut grad_w,
        );
        for (o, row) in go.chunks_exact(positions).enumerate() {
            grad_b[o] += row.iter().sum::<f32>();
        }
        if want_input_grad {
            // dCols = Wᵀ · dOut
            sgemm(
                patch,
                g.out_channels,
                positions,
                params.weights.data(),
                Layout::transposed(patch),
                go,
                Layout::row_major(positions),
                0.0,
                &mut grad_cols,
            );
            col2im(&g, &grad_cols, &mut grad_in[n * in_len..(n + 1) * in_len]);
        }
    }

    let grad_input = if want_input_grad {
        Some(Tensor::new(input.shape(), grad_in)?)
    } else {
        None
    };
    Ok((
        grad_input,
        LayerGrads {
            weights: Tensor::new(params.weights.shape(), grad_w)?,
            bias: Tensor::new(params.bias.shape(), grad_b)?,
        },
    ))
}
