//! A fixed, hand-chained layer pipeline.

use alloc::vec::Vec;

use super::*;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv3d(LayerParams),
    Dense(LayerParams),
    MaxPool3d { window: usize },
    Relu,
    /// `N × …` to `N × rest`.
    Flatten,
}

impl Layer {
    pub fn params(&self) -> Option<&LayerParams> {
        match self {
            Layer::Conv3d(p) | Layer::Dense(p) => Some(p),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams> {
        match self {
            Layer::Conv3d(p) | Layer::Dense(p) => Some(p),
            _ => None,
        }
    }

    /// Shape this layer produces from `input` without running it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv3d(p) => {
                let LayerKind::Conv3d {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                } = p.kind
                else {
                    return Err(Error::InvalidTensor("conv layer holds dense parameters".into()));
                };
                if input.len() != 5 {
                    return Err(Error::RankMismatch {
                        context: "conv3d input",
                        expected: 5,
                        actual: input.len(),
                    });
                }
                if input[1] != in_channels {
                    return Err(Error::ShapeMismatch {
                        context: "conv3d input channels",
                        axis: 1,
                        expected: in_channels,
                        actual: input[1],
                    });
                }
                let o = conv3d_output_extents([input[2], input[3], input[4]], kernel, padding)?;
                Ok(alloc::vec![input[0], out_channels, o[0], o[1], o[2]])
            }
            Layer::MaxPool3d { window } => {
                if input.len() != 5 {
                    return Err(Error::RankMismatch {
                        context: "maxpool3d input",
                        expected: 5,
                        actual: input.len(),
                    });
                }
                let o = pool_output_extents([input[2], input[3], input[4]], *window)?;
                Ok(alloc::vec![input[0], input[1], o[0], o[1], o[2]])
            }
            Layer::Dense(p) => {
                let LayerKind::Dense {
                    in_width,
                    out_width,
                } = p.kind
                else {
                    return Err(Error::InvalidTensor("dense layer holds conv parameters".into()));
                };
                let width = *input.last().ok_or(Error::Empty("dense input shape"))?;
                if width != in_width {
                    return Err(Error::ShapeMismatch {
                        context: "dense input width",
                        axis: input.len() - 1,
                        expected: in_width,
                        actual: width,
                    });
                }
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = out_width;
                Ok(out)
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(alloc::vec![input[0], input[1..].iter().product()]),
        }
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[i]` is the input to layer `i`; the last entry is the output.
    pub activations: Vec<Tensor>,
    pool_argmax: Vec<Option<Vec<u32>>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers.iter().try_fold(input.to_vec(), |shape, layer| layer.output_shape(&shape))
    }

    pub fn param_layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.layers.iter().filter_map(Layer::params)
    }

    pub fn param_layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.layers.iter_mut().filter_map(Layer::params_mut)
    }

    pub fn param_count(&self) -> usize {
        self.param_layers().map(LayerParams::param_count).sum()
    }

    fn apply(layer: &Layer, x: &Tensor) -> Result<(Tensor, Option<Vec<u32>>)> {
        Ok(match layer {
            Layer::Conv3d(p) => (conv3d_forward(x, p)?, None),
            Layer::Dense(p) => (dense_forward(x, p)?, None),
            Layer::MaxPool3d { window } => {
                let (y, idx) = maxpool3d_forward_indexed(x, *window)?;
                (y, Some(idx))
            }
            Layer::Relu => (relu_forward(x), None),
            Layer::Flatten => {
                let n = x.shape()[0];
                (x.clone().reshape(&[n, x.len() / n])?, None)
            }
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = Self::apply(layer, &x)?.0;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &Tensor) -> Result<Trace> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &self.layers {
            let (y, idx) = Self::apply(layer, activations.last().unwrap())?;
            activations.push(y);
            pool_argmax.push(idx);
        }
        Ok(Trace {
            activations,
            pool_argmax,
        })
    }

    /// Back-propagates `grad_out` through a recorded pass. Returns the input
    /// gradient (when requested) and one gradient set per parameterised
    /// layer, in layer order.
    pub fn backward(&self, trace: &Trace, grad_out: &Tensor, want_input_grad: bool) -> Result<(Option<Tensor>, Vec<LayerGrads>)> {
        expect_shape(grad_out, trace.output().shape(), "network upstream gradient")?;
        let mut grads = Vec::new();
        let mut g = grad_out.clone();
        // Layers before the first parameterised layer only matter for the input gradient.
        let first_param = self.layers.iter().position(|l| l.params().is_some()).unwrap_or(0);
        let stop = if want_input_grad { 0 } else { first_param };
        for i in (stop..self.layers.len()).rev() {
            let x = &trace.activations[i];
            let need_input = want_input_grad || i > first_param;
            match &self.layers[i] {
                Layer::Conv3d(p) => {
                    let (gx, gp) = conv3d_backward(x, p, &g, need_input)?;
                    grads.push(gp);
                    if let Some(gx) = gx {
                        g = gx;
                    }
                }
                Layer::Dense(p) => {
                    let (gx, gp) = dense_backward(x, p, &g, need_input)?;
                    grads.push(gp);
                    if let Some(gx) = gx {
                        g = gx;
                    }
                }
                Layer::MaxPool3d { .. } => {
                    let idx = trace.pool_argmax[i].as_ref().expect("pool layer records argmax");
                    g = maxpool3d_backward_indexed(x.shape(), idx, &g)?;
                }
                Layer::Relu => g = relu_backward(x, &g)?,
                Layer::Flatten => g = g.reshape(x.shape())?,
            }
        }
        grads.reverse();
        Ok((want_input_grad.then_some(g), grads))
    }
}
