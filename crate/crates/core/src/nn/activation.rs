use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes the upstream gradient where the forward input was strictly
/// positive; the subgradient at 0 is taken to be 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    super::expect_shape(grad_out, input.shape(), "relu upstream gradient")?;
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}
