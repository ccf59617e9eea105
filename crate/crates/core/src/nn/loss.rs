use crate::error::Result;
use crate::tensor::Tensor;

/// Squared TD error with the residual clipped to `[-1, 1]`.
///
/// Returns `mean(clip(pred - target)²)` and its gradient with respect to
/// `pred`, `2·clip(pred - target) / n`. `target` is treated as a constant.
pub fn td_squared_loss(q_pred: &Tensor, q_target: &Tensor) -> Result<(f32, Tensor)> {
    super::expect_shape(q_target, q_pred.shape(), "td loss target")?;
    let n = q_pred.len() as f32;
    let mut grad = q_pred.clone();
    let mut sum = 0.0f32;
    for (g, &t) in grad.data_mut().iter_mut().zip(q_target.data()) {
        let residual = (*g - t).clamp(-1.0, 1.0);
        sum += residual * residual;
        *g = 2.0 * residual / n;
    }
    Ok((sum / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn equal_inputs_have_zero_loss() {
        let q = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let (loss, grad) = td_squared_loss(&q, &q).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hand_arithmetic() {
        let (loss, grad) = td_squared_loss(&Tensor::new(&[1], vec![3.0]).unwrap(), &Tensor::new(&[1], vec![2.8]).unwrap()).unwrap();
        assert!((loss - 0.04).abs() < 1e-6);
        assert!((grad.data()[0] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn residual_is_clipped() {
        let (loss, grad) = td_squared_loss(&Tensor::new(&[1], vec![5.0]).unwrap(), &Tensor::new(&[1], vec![0.0]).unwrap()).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data()[0], 2.0);
        let (_, grad) = td_squared_loss(&Tensor::new(&[1], vec![-5.0]).unwrap(), &Tensor::new(&[1], vec![0.0]).unwrap()).unwrap();
        assert_eq!(grad.data()[0], -2.0);
    }
}
