//! Central finite-difference verification of analytic gradients.
//!
//! The probe loss is `L = Σ cᵢ·yᵢ` for a fixed pseudo-random `c ∈ [-1, 1]`.
//! Analytic gradients come from the f32 backward pass. The differences are
//! taken on a separate direct-loop forward pass evaluated in f64 over the
//! same f32 parameter values, so f32 round-off in the forward kernels does
//! not swamp the `2h` denominator.
//!
//! A coordinate whose ±h perturbation flips a ReLU mask or moves a pooling
//! argmax is not differentiable at the probe scale; it is counted as skipped
//! rather than compared.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;

use super::*;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f32,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Relative errors divide by `max(|analytic|, |numeric|, abs_floor)`.
    pub abs_floor: f64,
    /// Check at most this many randomly chosen entries per tensor.
    pub samples_per_tensor: Option<usize>,
    /// Also check the gradient with respect to the network input.
    pub check_input: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-3,
            abs_floor: 1e-3,
            samples_per_tensor: None,
            check_input: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    /// `"input"` or `"<layer index>:<kind>"`.
    pub label: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.checked > 0 && l.max_rel_error < self.tolerance)
    }

    pub fn skipped(&self) -> usize {
        self.layers.iter().map(|l| l.skipped).sum()
    }

    pub fn checked(&self) -> usize {
        self.layers.iter().map(|l| l.checked).sum()
    }
}

/// Moves every value with `|x| < margin` to `±margin` (zero goes to `+margin`).
pub fn jitter_off_kinks(t: &mut Tensor, margin: f32) {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    }
}

/// f64 activations of the reference pass.
struct Activation {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Direct-loop forward pass in f64 over the (f32) parameters, with the ReLU
/// masks and pooling argmaxes it produced.
fn reference_forward(net: &Network, input: &Tensor) -> Result<(Vec<f64>, Vec<u32>)> {
    let mut x = Activation {
        shape: input.shape().to_vec(),
        data: input.data().iter().map(|&v| v as f64).collect(),
    };
    let mut pattern = Vec::new();
    for layer in &net.layers {
        let out_shape = layer.output_shape(&x.shape)?;
        let mut out = alloc::vec![0.0f64; out_shape.iter().product()];
        match layer {
            Layer::Conv3d(p) => {
                let LayerKind::Conv3d {
                    in_channels: ci,
                    out_channels: co,
                    kernel: k,
                    padding: pad,
                } = p.kind
                else {
                    unreachable!()
                };
                let [d, h, w] = [x.shape[2], x.shape[3], x.shape[4]];
                let [od, oh, ow] = [out_shape[2], out_shape[3], out_shape[4]];
                let wt = p.weights.data();
                let mut i = 0;
                for n in 0..x.shape[0] {
                    for o in 0..co {
                        for z in 0..od {
                            for y in 0..oh {
                                for xx in 0..ow {
                                    let mut acc = p.bias.data()[o] as f64;
                                    for c in 0..ci {
                                        for a in 0..k {
                                            let iz = (z + a) as isize - pad as isize;
                                            if iz < 0 || iz as usize >= d {
                                                continue;
                                            }
                                            for b in 0..k {
                                                let iy = (y + b) as isize - pad as isize;
                                                if iy < 0 || iy as usize >= h {
                                                    continue;
                                                }
                                                for e in 0..k {
                                                    let ix = (xx + e) as isize - pad as isize;
                                                    if ix < 0 || ix as usize >= w {
                                                        continue;
                                                    }
                                                    let src = (((n * ci + c) * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                                    acc += wt[(((o * ci + c) * k + a) * k + b) * k + e] as f64 * x.data[src];
                                                }
                                            }
                                        }
                                    }
                                    out[i] = acc;
                                    i += 1;
                                }
                            }
                        }
                    }
                }
            }
            Layer::Dense(p) => {
                let in_w = *x.shape.last().unwrap();
                let out_w = *out_shape.last().unwrap();
                for (row_in, row_out) in x.data.chunks_exact(in_w).zip(out.chunks_exact_mut(out_w)) {
                    for (o, v) in row_out.iter_mut().enumerate() {
                        let weights = &p.weights.data()[o * in_w..(o + 1) * in_w];
                        *v = p.bias.data()[o] as f64 + weights.iter().zip(row_in).map(|(&a, &b)| a as f64 * b).sum::<f64>();
                    }
                }
            }
            Layer::MaxPool3d { window } => {
                let [d, h, w] = [x.shape[2], x.shape[3], x.shape[4]];
                let [od, oh, ow] = [out_shape[2], out_shape[3], out_shape[4]];
                let mut i = 0;
                for plane in 0..x.shape[0] * x.shape[1] {
                    for z in 0..od {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut best = usize::MAX;
                                let mut best_value = f64::NEG_INFINITY;
                                for a in 0..*window {
                                    for b in 0..*window {
                                        for e in 0..*window {
                                            let src = ((plane * d + z * window + a) * h + y * window + b) * w + xx * window + e;
                                            if best == usize::MAX || x.data[src] > best_value {
                                                best = src;
                                                best_value = x.data[src];
                                            }
                                        }
                                    }
                                }
                                out[i] = best_value;
                                pattern.push(best as u32);
                                i += 1;
                            }
                        }
                    }
                }
            }
            Layer::Relu => {
                for (o, &v) in out.iter_mut().zip(&x.data) {
                    pattern.push((v > 0.0) as u32);
                    *o = v.max(0.0);
                }
            }
            Layer::Flatten => out.copy_from_slice(&x.data),
        }
        x = Activation {
            shape: out_shape,
            data: out,
        };
    }
    Ok((x.data, pattern))
}

struct Evaluator<'a> {
    c: &'a [f32],
    base_pattern: Vec<u32>,
}

impl Evaluator<'_> {
    /// Probe loss of the reference pass, or `None` when the perturbation
    /// changed the activation pattern.
    fn central(&self, net: &Network, input: &Tensor) -> Result<Option<f64>> {
        let (y, pattern) = reference_forward(net, input)?;
        if pattern != self.base_pattern {
            return Ok(None);
        }
        Ok(Some(self.c.iter().zip(&y).map(|(&a, &b)| a as f64 * b).sum()))
    }
}

fn param_entry(net: &mut Network, layer: usize, which: usize, j: usize) -> &mut f32 {
    let p = net.layers[layer].params_mut().expect("parameterised layer");
    let t = if which == 0 { &mut p.weights } else { &mut p.bias };
    &mut t.data_mut()[j]
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn chosen_entries(len: usize, cfg: &GradCheckConfig, rng: &mut rng::Rng) -> Vec<usize> {
    match cfg.samples_per_tensor {
        Some(n) if n < len => {
            let mut v = index::sample(rng, len, n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Compares analytic and central-difference gradients for every
/// parameterised layer (and the input, if configured).
pub fn grad_check(network: &Network, input: &Tensor, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng::seeded(cfg.seed);
    let base = network.forward_trace(input)?;
    let c: Vec<f32> = (0..base.output().len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let upstream = Tensor::new(base.output().shape(), c.clone())?;
    let (grad_input, grads) = network.backward(&base, &upstream, cfg.check_input)?;
    let eval = Evaluator {
        c: &c,
        base_pattern: reference_forward(network, input)?.1,
    };
    let h = cfg.step;
    let mut layers = Vec::new();

    if let Some(gx) = grad_input {
        let mut x = input.clone();
        let mut check = LayerCheck {
            label: "input".into(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for j in chosen_entries(x.len(), cfg, &mut rng) {
            let orig = x.data()[j];
            let (up, down) = (orig + h, orig - h);
            x.data_mut()[j] = up;
            let plus = eval.central(network, &x)?;
            x.data_mut()[j] = down;
            let minus = eval.central(network, &x)?;
            x.data_mut()[j] = orig;
            match (plus, minus) {
                (Some(p), Some(m)) => {
                    let numeric = (p - m) / (up as f64 - down as f64);
                    let e = rel_error(gx.data()[j] as f64, numeric, cfg.abs_floor);
                    check.max_rel_error = check.max_rel_error.max(e);
                    check.checked += 1;
                }
                _ => check.skipped += 1,
            }
        }
        layers.push(check);
    }

    let mut net = network.clone();
    let param_layer_indices: Vec<usize> = network.layers.iter().enumerate().filter(|(_, l)| l.params().is_some()).map(|(i, _)| i).collect();
    for (slot, &li) in param_layer_indices.iter().enumerate() {
        let kind = match &network.layers[li] {
            Layer::Conv3d(_) => "conv3d",
            _ => "dense",
        };
        let mut check = LayerCheck {
            label: alloc::format!("{li}:{kind}"),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
        };
        for which in 0..2 {
            let analytic = if which == 0 { &grads[slot].weights } else { &grads[slot].bias };
            for j in chosen_entries(analytic.len(), cfg, &mut rng) {
                let orig = *param_entry(&mut net, li, which, j);
                let (up, down) = (orig + h, orig - h);
                *param_entry(&mut net, li, which, j) = up;
                let plus = eval.central(&net, input)?;
                *param_entry(&mut net, li, which, j) = down;
                let minus = eval.central(&net, input)?;
                *param_entry(&mut net, li, which, j) = orig;
                match (plus, minus) {
                    (Some(p), Some(m)) => {
                        let numeric = (p - m) / (up as f64 - down as f64);
                        let e = rel_error(analytic.data()[j] as f64, numeric, cfg.abs_floor);
                        check.max_rel_error = check.max_rel_error.max(e);
                        check.checked += 1;
                    }
                    _ => check.skipped += 1,
                }
            }
        }
        layers.push(check);
    }

    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        layers,
    })
}
