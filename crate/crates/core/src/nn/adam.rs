use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
///
/// Moments and the step count are kept per parameter tensor, so a tensor
/// that receives no gradient on a step (a frozen agent's head) is left
/// exactly as it was: no value change, no moment decay, no step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    steps: Vec<u64>,
}

impl Adam {
    /// Zeroed state for parameter tensors of the given lengths.
    pub fn new(config: AdamConfig, param_lens: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = param_lens.into_iter().collect();
        Self {
            config,
            first: lens.iter().map(|&n| vec![0.0; n]).collect(),
            second: lens.iter().map(|&n| vec![0.0; n]).collect(),
            steps: vec![0; lens.len()],
        }
    }

    /// Rebuilds state from saved moments.
    pub fn from_parts(config: AdamConfig, first: Vec<Vec<f32>>, second: Vec<Vec<f32>>, steps: Vec<u64>) -> Result<Self> {
        if first.len() != second.len() || first.len() != steps.len() || first.iter().zip(&second).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::InvalidTensor("inconsistent optimizer state".to_string()));
        }
        Ok(Self {
            config,
            first,
            second,
            steps,
        })
    }

    pub fn tensor_count(&self) -> usize {
        self.steps.len()
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.second[index]
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    /// Applies one update. `params[i]` is `(name, tensor)`; `grads[i]` is its
    /// gradient or `None` to leave it untouched. All gradients are checked
    /// for finiteness before any parameter is modified.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)], grads: &[Option<&Tensor>]) -> Result<()> {
        if params.len() != self.steps.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                context: "adam parameter list",
                axis: 0,
                expected: self.steps.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (i, ((name, value), grad)) in params.iter().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            if grad.shape() != value.shape() || self.first[i].len() != value.len() {
                return Err(Error::InvalidTensor(alloc::format!("gradient shape mismatch for `{name}`")));
            }
            if !grad.all_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (i, ((_, value), grad)) in params.iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - libm::powf(beta1, t as f32);
            let c2 = 1.0 - libm::powf(beta2, t as f32);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (p, &g)) in value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *p -= lr * m_hat / (libm::sqrtf(v_hat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Tensor {
        Tensor::new(&[1], alloc::vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::new(&[3], alloc::vec![1.0, -2.0, 0.25]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), [3]);
        for _ in 0..5 {
            adam.step(&mut [("p", &mut p)], &[Some(&g)]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g| + eps).
        for &g in &[0.37f32, -4.0, 123.0] {
            let mut p = scalar(0.0);
            let cfg = AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            };
            let mut adam = Adam::new(cfg, [1]);
            adam.step(&mut [("p", &mut p)], &[Some(&scalar(g))]).unwrap();
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p.data()[0] - expected).abs() < 1e-7, "{} vs {expected}", p.data()[0]);
        }
    }

    #[test]
    fn minimises_shifted_parabola() {
        let mut x = scalar(0.0);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
            [1],
        );
        let mut reached = None;
        for step in 1..=500 {
            let g = scalar(2.0 * (x.data()[0] - 3.0));
            adam.step(&mut [("x", &mut x)], &[Some(&g)]).unwrap();
            if reached.is_none() && (x.data()[0] - 3.0).abs() < 1e-3 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some());
        assert!((x.data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_names_tensor_and_mutates_nothing() {
        let mut a = scalar(1.0);
        let mut b = scalar(2.0);
        let mut adam = Adam::new(AdamConfig::default(), [1, 1]);
        let err = adam
            .step(&mut [("head.0.weight", &mut a), ("head.1.bias", &mut b)], &[Some(&scalar(1.0)), Some(&scalar(f32::NAN))])
            .unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient("head.1.bias".into()));
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(adam.steps(), &[0, 0]);
    }

    #[test]
    fn skipped_tensors_keep_state() {
        let mut a = scalar(1.0);
        let mut b = scalar(2.0);
        let mut adam = Adam::new(AdamConfig::default(), [1, 1]);
        adam.step(&mut [("a", &mut a), ("b", &mut b)], &[Some(&scalar(1.0)), None]).unwrap();
        assert_eq!(b.data()[0], 2.0);
        assert_eq!(adam.steps(), &[1, 0]);
        assert_eq!(adam.first_moment(1), &[0.0]);
    }
}
