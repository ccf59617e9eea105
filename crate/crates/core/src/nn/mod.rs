//! Layer kernels, loss, optimizer and gradient verification.
//!
//! Every kernel is a pure function of its arguments: forward maps an input
//! to an output, backward maps (input, upstream gradient) to the input
//! gradient and parameter gradients. Spatial tensors are laid out
//! `N × C × D × H × W`, dense activations `N × width`.

mod activation;
mod adam;
mod conv;
mod dense;
mod gemm;
mod gradcheck;
mod loss;
mod network;
mod pool;

use alloc::vec::Vec;

use rand::Rng as _;

pub use activation::{relu_backward, relu_forward};
pub use adam::{Adam, AdamConfig};
pub use conv::{conv3d_backward, conv3d_forward, conv3d_output_extents};
pub use dense::{dense_backward, dense_forward};
pub use gradcheck::{grad_check, jitter_off_kinks, GradCheckConfig, GradCheckReport, LayerCheck};
pub use loss::td_squared_loss;
pub use network::{Layer, Network, Trace};
pub use pool::{
    maxpool3d_backward, maxpool3d_backward_indexed, maxpool3d_forward, maxpool3d_forward_indexed,
    pool_output_extents,
};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Structural hyper-parameters of a parameterised layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LayerKind {
    /// Stride-1 cubic convolution with symmetric zero padding.
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Dense { in_width: usize, out_width: usize },
}

impl LayerKind {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Conv3d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => alloc::vec![out_channels, in_channels, kernel, kernel, kernel],
            LayerKind::Dense {
                in_width,
                out_width,
            } => alloc::vec![out_width, in_width],
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerKind::Conv3d { out_channels, .. } => out_channels,
            LayerKind::Dense { out_width, .. } => out_width,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv3d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel * kernel,
            LayerKind::Dense { in_width, .. } => in_width,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.bias_len()
    }
}

/// Weights and bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    /// Validates that the tensors agree with `kind`.
    pub fn new(kind: LayerKind, weights: Tensor, bias: Tensor) -> Result<Self> {
        let expected = kind.weight_shape();
        if weights.shape() != expected.as_slice() {
            return Err(Error::InvalidTensor(alloc::format!(
                "weights {:?} do not match layer {:?}",
                weights.shape(),
                kind
            )));
        }
        if bias.shape() != [kind.bias_len()] {
            return Err(Error::InvalidTensor(alloc::format!(
                "bias {:?} does not match layer {:?}",
                bias.shape(),
                kind
            )));
        }
        Ok(Self {
            kind,
            weights,
            bias,
        })
    }

    pub fn zeros(kind: LayerKind) -> Result<Self> {
        Self::new(
            kind,
            Tensor::zeros(&kind.weight_shape())?,
            Tensor::zeros(&[kind.bias_len()])?,
        )
    }

    /// He-uniform weights, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero bias.
    pub fn he_uniform(kind: LayerKind, rng: &mut Rng) -> Result<Self> {
        let limit = libm::sqrtf(6.0 / kind.fan_in() as f32);
        let weights = Tensor::from_fn(&kind.weight_shape(), |_| rng.random_range(-limit..limit))?;
        Self::new(kind, weights, Tensor::zeros(&[kind.bias_len()])?)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Gradients of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerGrads {
    pub fn zeros_like(params: &LayerParams) -> Result<Self> {
        Ok(Self {
            weights: Tensor::zeros(params.weights.shape())?,
            bias: Tensor::zeros(params.bias.shape())?,
        })
    }

    pub fn add_assign(&mut self, other: &LayerGrads) -> Result<()> {
        self.weights.add_assign(&other.weights)?;
        self.bias.add_assign(&other.bias)
    }
}

/// Spatial extents `[D, H, W]` of an `N × C × D × H × W` tensor.
pub(crate) fn spatial_dims(t: &Tensor, context: &'static str) -> Result<(usize, usize, [usize; 3])> {
    let s = t.shape();
    if s.len() != 5 {
        return Err(Error::RankMismatch {
            context,
            expected: 5,
            actual: s.len(),
        });
    }
    Ok((s[0], s[1], [s[2], s[3], s[4]]))
}

pub(crate) fn expect_shape(t: &Tensor, expected: &[usize], context: &'static str) -> Result<()> {
    let actual = t.shape();
    if actual.len() != expected.len() {
        return Err(Error::RankMismatch {
            context,
            expected: expected.len(),
            actual: actual.len(),
        });
    }
    if let Some(axis) = (0..actual.len()).find(|&i| actual[i] != expected[i]) {
        return Err(Error::ShapeMismatch {
            context,
            axis,
            expected: expected[axis],
            actual: actual[axis],
        });
    }
    Ok(())
}
