use alloc::vec;

use super::gemm::{sgemm, Layout};
use super::{LayerGrads, LayerKind, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Accepts `N × in_width` or a bare `in_width` vector (treated as `N = 1`).
fn batch_geometry(input: &Tensor, params: &LayerParams) -> Result<(usize, usize, usize)> {
    let LayerKind::Dense {
        in_width,
        out_width,
    } = params.kind
    else {
        return Err(Error::InvalidTensor("dense called with conv parameters".into()));
    };
    let (batch, width, axis) = match input.shape() {
        [w] => (1, *w, 0),
        [n, w] => (*n, *w, 1),
        s => {
            return Err(Error::RankMismatch {
                context: "dense input",
                expected: 2,
                actual: s.len(),
            })
        }
    };
    if width != in_width {
        return Err(Error::ShapeMismatch {
            context: "dense input width",
            axis,
            expected: in_width,
            actual: width,
        });
    }
    Ok((batch, in_width, out_width))
}

/// `y = x · Wᵀ + b` per batch row.
pub fn dense_forward(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let (batch, in_w, out_w) = batch_geometry(input, params)?;
    let mut out = vec![0.0f32; batch * out_w];
    for row in out.chunks_exact_mut(out_w) {
        row.copy_from_slice(params.bias.data());
    }
    sgemm(
        batch,
        in_w,
        out_w,
        input.data(),
        Layout::row_major(in_w),
        params.weights.data(),
        Layout::transposed(in_w),
        1.0,
        &mut out,
    );
    if input.rank() == 1 {
        Tensor::new(&[out_w], out)
    } else {
        Tensor::new(&[batch, out_w], out)
    }
}

pub fn dense_backward(
    input: &Tensor,
    params: &LayerParams,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<(Option<Tensor>, LayerGrads)> {
    let (batch, in_w, out_w) = batch_geometry(input, params)?;
    if grad_out.len() != batch * out_w {
        return Err(Error::ShapeMismatch {
            context: "dense upstream gradient",
            axis: grad_out.rank() - 1,
            expected: out_w,
            actual: grad_out.shape()[grad_out.rank() - 1],
        });
    }
    let go = grad_out.data();
    // dW = dOutᵀ · X
    let mut grad_w = vec![0.0f32; out_w * in_w];
    sgemm(
        out_w,
        batch,
        in_w,
        go,
        Layout::transposed(out_w),
        input.data(),
        Layout::row_major(in_w),
        0.0,
        &mut grad_w,
    );
    let mut grad_b = vec![0.0f32; out_w];
    for row in go.chunks_exact(out_w) {
        for (b, g) in grad_b.iter_mut().zip(row) {
            *b += g;
        }
    }
    let grad_input = if want_input_grad {
        // dX = dOut · W
        let mut gx = vec![0.0f32; batch * in_w];
        sgemm(
            batch,
            out_w,
            in_w,
            go,
            Layout::row_major(out_w),
            params.weights.data(),
            Layout::row_major(in_w),
            0.0,
            &mut gx,
        );
        Some(Tensor::new(input.shape(), gx)?)
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
