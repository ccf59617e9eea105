//! Non-overlapping 3D max-pooling (stride = window, trailing remainder dropped).

use alloc::vec::Vec;

use super::spatial_dims;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `floor(extent / window)` per axis. A window of zero, or one larger than
/// any spatial extent, is rejected.
pub fn pool_output_extents(input: [usize; 3], window: usize) -> Result<[usize; 3]> {
    if window == 0 || input.iter().any(|&e| e < window) {
        return Err(Error::InvalidPoolWindow {
            window,
            extents: input,
        });
    }
    Ok(input.map(|e| e / window))
}

/// Forward pass that also returns, for every output element, the flat input
/// index it was taken from (first maximum in scan order on ties).
pub fn maxpool3d_forward_indexed(input: &Tensor, window: usize) -> Result<(Tensor, Vec<u32>)> {
    let (batch, channels, dims) = spatial_dims(input, "maxpool3d input")?;
    let [od, oh, ow] = pool_output_extents(dims, window)?;
    let [d, h, w] = dims;
    let data = input.data();
    let total = batch * channels * od * oh * ow;
    let mut out = Vec::with_capacity(total);
    let mut argmax = Vec::with_capacity(total);
    for plane in 0..batch * channels {
        let base = plane * d * h * w;
        let src = &data[base..base + d * h * w];
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let first = ((z * window) * h + y * window) * w + x * window;
                    let mut best = first;
                    let mut best_value = src[first];
                    for dz in 0..window {
                        for dy in 0..window {
                            let row = first + (dz * h + dy) * w;
                            for (dx, &v) in src[row..row + window].iter().enumerate() {
                                if v > best_value {
                                    best_value = v;
                                    best = row + dx;
                                }
                            }
                        }
                    }
                    out.push(best_value);
                    argmax.push((base + best) as u32);
                }
            }
        }
    }
    Ok((Tensor::new(&[batch, channels, od, oh, ow], out)?, argmax))
}

pub fn maxpool3d_forward(input: &Tensor, window: usize) -> Result<Tensor> {
    maxpool3d_forward_indexed(input, window).map(|(t, _)| t)
}

/// Routes each upstream gradient to the recorded argmax position.
pub fn maxpool3d_backward_indexed(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            context: "maxpool3d upstream gradient",
            axis: 0,
            expected: argmax.len(),
            actual: grad_out.len(),
        });
    }
    let mut grad = Tensor::zeros(input_shape)?;
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx as usize] += v;
    }
    Ok(grad)
}

pub fn maxpool3d_backward(input: &Tensor, window: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (out, argmax) = maxpool3d_forward_indexed(input, window)?;
    super::expect_shape(grad_out, out.shape(), "maxpool3d upstream gradient")?;
    maxpool3d_backward_indexed(input.shape(), &argmax, grad_out)
}
