//! The shared-trunk Q-network.
//!
//! A [`CollabQNet`] stacks the four history frames as input channels, runs
//! them through one convolutional trunk, and hands the flattened features to
//! one fully-connected head per agent. Each head ends in six linear outputs,
//! one Q-value per action.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::{Layer, LayerGrads, LayerKind, LayerParams, Network, Trace};
use crate::rng;
use crate::tensor::Tensor;
use crate::{ACTIONS, HISTORY};

/// Layer sizes of the trunk and of each head.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct Architecture {
    /// Output channels of each conv layer; every conv is followed by ReLU
    /// and a max-pool.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    /// Zero padding on every side of each conv input.
    pub padding: usize,
    pub pool_window: usize,
    /// Hidden widths of each head; a linear 6-wide output layer follows.
    pub head_hidden: Vec<usize>,
}

impl Default for Architecture {
    /// The reference desk network: conv 16/32/32 with 3³ kernels, heads
    /// 128 → 64 → 6.
    fn default() -> Self {
        Self {
            conv_channels: alloc::vec![16, 32, 32],
            kernel: 3,
            padding: 1,
            pool_window: 2,
            head_hidden: alloc::vec![128, 64],
        }
    }
}

impl Architecture {
    fn conv_kinds(&self) -> Vec<LayerKind> {
        let mut in_ch = HISTORY;
        self.conv_channels
            .iter()
            .map(|&out| {
                let k = LayerKind::Conv3d {
                    in_channels: in_ch,
                    out_channels: out,
                    kernel: self.kernel,
                    padding: self.padding,
                };
                in_ch = out;
                k
            })
            .collect()
    }

    fn dense_kinds(&self, feature_width: usize) -> Vec<LayerKind> {
        let mut widths = alloc::vec![feature_width];
        widths.extend_from_slice(&self.head_hidden);
        widths.push(ACTIONS);
        widths
            .windows(2)
            .map(|w| LayerKind::Dense {
                in_width: w[0],
                out_width: w[1],
            })
            .collect()
    }

    /// Spatial extents after each conv and each pool for an `R³` input, or
    /// an error naming the first layer that does not fit.
    pub fn trunk_extents(&self, roi_extent: usize) -> Result<Vec<usize>> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::Architecture("layer widths must be nonzero and the trunk nonempty".into()));
        }
        let mut e = roi_extent;
        let mut out = Vec::new();
        for i in 0..self.conv_channels.len() {
            let padded = e + 2 * self.padding;
            if self.kernel == 0 || padded < self.kernel {
                return Err(Error::Architecture(format!(
                    "conv layer {i}: kernel {} exceeds padded extent {padded} (ROI {roi_extent})",
                    self.kernel
                )));
            }
            e = padded - self.kernel + 1;
            out.push(e);
            if self.pool_window == 0 || e < self.pool_window {
                return Err(Error::Architecture(format!(
                    "pool after conv layer {i}: window {} exceeds extent {e} (ROI {roi_extent})",
                    self.pool_window
                )));
            }
            e /= self.pool_window;
            out.push(e);
        }
        Ok(out)
    }

    /// Flattened trunk output width.
    pub fn feature_width(&self, roi_extent: usize) -> Result<usize> {
        let e = *self.trunk_extents(roi_extent)?.last().unwrap();
        Ok(self.conv_channels.last().unwrap() * e * e * e)
    }

    /// Exact parameter counts.
    pub fn param_count(&self, roi_extent: usize) -> Result<ParamCount> {
        let trunk = self.conv_kinds().iter().map(LayerKind::param_count).sum();
        let per_head = self.dense_kinds(self.feature_width(roi_extent)?).iter().map(LayerKind::param_count).sum();
        Ok(ParamCount { trunk, per_head })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub trunk: usize,
    pub per_head: usize,
}

impl ParamCount {
    /// Parameters of one shared-trunk net with `k` heads.
    pub fn total(&self, k: usize) -> usize {
        self.trunk + k * self.per_head
    }

    /// Parameters of `k` separate single-agent nets.
    pub fn separate_total(&self, k: usize) -> usize {
        k * (self.trunk + self.per_head)
    }

    /// `1 − total(k) / separate_total(k) = (k−1)·trunk / (k·(trunk+head))`.
    pub fn reduction_ratio(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        (k - 1) as f64 * self.trunk as f64 / (k as f64 * (self.trunk + self.per_head) as f64)
    }
}

/// Inputs for one agent's head: a `B × 4 × R × R × R` batch.
#[derive(Debug, Clone)]
pub struct AgentBatch {
    pub agent: usize,
    pub input: Tensor,
}

/// Recorded forward pass over several agent batches.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    trunk: Trace,
    heads: Vec<(usize, usize, Trace)>,
}

/// Gradients for every parameter tensor. Heads that took no part in the
/// pass have `None`.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub trunk: Vec<LayerGrads>,
    pub heads: Vec<Option<Vec<LayerGrads>>>,
    /// Parameterised layers per head.
    head_layers: usize,
}

impl NetGrads {
    /// Flat list aligned with [`CollabQNet::params_mut`].
    pub fn as_list(&self) -> Vec<Option<&Tensor>> {
        let mut out = Vec::new();
        for g in &self.trunk {
            out.push(Some(&g.weights));
            out.push(Some(&g.bias));
        }
        for head in &self.heads {
            match head {
                Some(gs) => {
                    for g in gs {
                        out.push(Some(&g.weights));
                        out.push(Some(&g.bias));
                    }
                }
                None => out.extend(core::iter::repeat_n(None, 2 * self.head_layers)),
            }
        }
        out
    }
}

/// Shared convolutional trunk feeding `K` independent heads.
#[derive(Debug, Clone, PartialEq)]
pub struct CollabQNet {
    arch: Architecture,
    roi_extent: usize,
    trunk: Network,
    heads: Vec<Network>,
}

impl CollabQNet {
    /// He-uniform initialization. The trunk draws from stream 0 of `seed`
    /// and head `k` from stream `k + 1`, so heads start out distinct.
    pub fn build(agent_count: usize, roi_extent: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        let head_streams: Vec<u64> = (1..=agent_count as u64).collect();
        Self::build_with_streams(agent_count, roi_extent, arch, seed, &head_streams)
    }

    /// Like [`build`](Self::build) with explicit per-head stream numbers;
    /// equal numbers give identically initialized heads.
    pub fn build_with_streams(agent_count: usize, roi_extent: usize, arch: &Architecture, seed: u64, head_streams: &[u64]) -> Result<Self> {
        if agent_count == 0 {
            return Err(Error::Architecture("at least one agent is required".into()));
        }
        if head_streams.len() != agent_count {
            return Err(Error::AgentCountMismatch {
                expected: agent_count,
                actual: head_streams.len(),
            });
        }
        let features = arch.feature_width(roi_extent)?;
        let mut r = rng::stream(seed, 0);
        let mut trunk = Vec::new();
        for kind in arch.conv_kinds() {
            trunk.push(Layer::Conv3d(LayerParams::he_uniform(kind, &mut r)?));
            trunk.push(Layer::Relu);
            trunk.push(Layer::MaxPool3d { window: arch.pool_window });
        }
        trunk.push(Layer::Flatten);
        let dense = arch.dense_kinds(features);
        let heads = head_streams
            .iter()
            .map(|&s| {
                let mut r = rng::stream(seed, s);
                let mut layers = Vec::new();
                for (i, &kind) in dense.iter().enumerate() {
                    if i > 0 {
                        layers.push(Layer::Relu);
                    }
                    layers.push(Layer::Dense(LayerParams::he_uniform(kind, &mut r)?));
                }
                Ok(Network::new(layers))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            arch: arch.clone(),
            roi_extent,
            trunk: Network::new(trunk),
            heads,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn roi_extent(&self) -> usize {
        self.roi_extent
    }

    pub fn agent_count(&self) -> usize {
        self.heads.len()
    }

    pub fn trunk(&self) -> &Network {
        &self.trunk
    }

    pub fn head(&self, k: usize) -> &Network {
        &self.heads[k]
    }

    pub fn head_mut(&mut self, k: usize) -> &mut Network {
        &mut self.heads[k]
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            trunk: self.trunk.param_count(),
            per_head: self.heads[0].param_count(),
        }
    }

    fn input_shape(&self, batch: usize) -> [usize; 5] {
        let r = self.roi_extent;
        [batch, HISTORY, r, r, r]
    }

    fn check_batches(&self, batches: &[AgentBatch]) -> Result<()> {
        for b in batches {
            if b.agent >= self.heads.len() {
                return Err(Error::Observation {
                    agent: b.agent,
                    reason: format!("no head for agent {} in a {}-agent net", b.agent, self.heads.len()),
                });
            }
            let want = self.input_shape(b.input.shape()[0]);
            if b.input.shape() != want {
                return Err(Error::Observation {
                    agent: b.agent,
                    reason: format!("input shape {:?}, expected {want:?}", b.input.shape()),
                });
            }
        }
        Ok(())
    }

    /// Q-values for several agent batches through one trunk pass. Returns one
    /// `B × 6` tensor per batch.
    pub fn q_values(&self, batches: &[AgentBatch]) -> Result<Vec<Tensor>> {
        Ok(self.forward_trace(batches)?.1)
    }

    /// One observation per agent; returns `K` six-vectors.
    pub fn forward(&self, observations: &[Observation]) -> Result<Vec<[f32; ACTIONS]>> {
        self.forward_agents(&observations.iter().enumerate().collect::<Vec<_>>())
    }

    /// Q-values for `(agent, observation)` pairs, in order.
    pub fn forward_agents(&self, pairs: &[(usize, &Observation)]) -> Result<Vec<[f32; ACTIONS]>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let frame = self.roi_extent.pow(3) * HISTORY;
        let mut data = Vec::with_capacity(pairs.len() * frame);
        for &(agent, o) in pairs {
            if agent >= self.heads.len() {
                return Err(Error::AgentCountMismatch {
                    expected: self.heads.len(),
                    actual: agent + 1,
                });
            }
            if o.roi() != self.roi_extent || o.data().len() != frame {
                return Err(Error::Observation {
                    agent,
                    reason: format!("ROI extent {}, expected {}", o.roi(), self.roi_extent),
                });
            }
            data.extend_from_slice(o.data());
        }
        let features = self.trunk.forward(&Tensor::new(&self.input_shape(pairs.len()), data)?)?;
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(agent, _))| {
                let q = self.heads[agent].forward(&features.slice_outer(i, i + 1)?)?;
                let mut out = [0.0; ACTIONS];
                out.copy_from_slice(q.data());
                Ok(out)
            })
            .collect()
    }

    /// Forward pass keeping what [`backward`](Self::backward) needs.
    pub fn forward_trace(&self, batches: &[AgentBatch]) -> Result<(BatchTrace, Vec<Tensor>)> {
        self.check_batches(batches)?;
        if batches.is_empty() {
            return Err(Error::Empty("agent batches"));
        }
        let parts: Vec<&Tensor> = batches.iter().map(|b| &b.input).collect();
        let trunk = self.trunk.forward_trace(&Tensor::concat_outer(&parts)?)?;
        let features = trunk.output();
        let mut heads = Vec::with_capacity(batches.len());
        let mut outputs = Vec::with_capacity(batches.len());
        let mut start = 0;
        for b in batches {
            let n = b.input.shape()[0];
            let t = self.heads[b.agent].forward_trace(&features.slice_outer(start, start + n)?)?;
            outputs.push(t.output().clone());
            heads.push((b.agent, start, t));
            start += n;
        }
        Ok((BatchTrace { trunk, heads }, outputs))
    }

    /// Back-propagates one upstream gradient per batch. Trunk gradients are
    /// summed over batches; each batch's gradient reaches only its own head.
    pub fn backward(&self, trace: &BatchTrace, grad_q: &[Tensor]) -> Result<NetGrads> {
        if grad_q.len() != trace.heads.len() {
            return Err(Error::AgentCountMismatch {
                expected: trace.heads.len(),
                actual: grad_q.len(),
            });
        }
        let features = trace.trunk.output();
        let mut grad_features = Tensor::zeros(features.shape())?;
        let width = features.shape()[1];
        let mut heads: Vec<Option<Vec<LayerGrads>>> = alloc::vec![None; self.heads.len()];
        for ((agent, start, t), g) in trace.heads.iter().zip(grad_q) {
            let (gx, gp) = self.heads[*agent].backward(t, g, true)?;
            let gx = gx.expect("input gradient requested");
            grad_features.data_mut()[start * width..start * width + gx.len()].copy_from_slice(gx.data());
            match &mut heads[*agent] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&gp) {
                        a.add_assign(b)?;
                    }
                }
                slot => *slot = Some(gp),
            }
        }
        let (_, trunk) = self.trunk.backward(&trace.trunk, &grad_features, false)?;
        Ok(NetGrads {
            trunk,
            heads,
            head_layers: self.heads[0].param_layers().count(),
        })
    }

    /// Parameter names in canonical order: `trunk.<layer>.{weight,bias}`,
    /// then `head<k>.<layer>.{weight,bias}`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut push = |prefix: String, net: &Network| {
            for (i, l) in net.layers.iter().enumerate() {
                if l.params().is_some() {
                    names.push(format!("{prefix}.{i}.weight"));
                    names.push(format!("{prefix}.{i}.bias"));
                }
            }
        };
        push("trunk".into(), &self.trunk);
        for (k, h) in self.heads.iter().enumerate() {
            push(format!("head{k}"), h);
        }
        names
    }

    /// Parameter tensors in the order of [`param_names`](Self::param_names).
    pub fn params(&self) -> Vec<&Tensor> {
        core::iter::once(&self.trunk)
            .chain(&self.heads)
            .flat_map(|n| n.param_layers())
            .flat_map(|p| [&p.weights, &p.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        core::iter::once(&mut self.trunk)
            .chain(&mut self.heads)
            .flat_map(|n| n.param_layers_mut())
            .flat_map(|p| [&mut p.weights, &mut p.bias])
            .collect()
    }

    /// Copies every parameter of `self` into `target`.
    pub fn sync_target(&self, target: &mut CollabQNet) -> Result<()> {
        self.check_same_shape(target)?;
        for (dst, src) in target.params_mut().into_iter().zip(self.params()) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Errors unless `other` has the same architecture, ROI and agent count.
    pub fn check_same_shape(&self, other: &CollabQNet) -> Result<()> {
        if self.arch != other.arch || self.roi_extent != other.roi_extent || self.heads.len() != other.heads.len() {
            return Err(Error::Architecture(format!(
                "mismatch: K={} R={} {:?} vs K={} R={} {:?}",
                self.heads.len(),
                self.roi_extent,
                self.arch,
                other.heads.len(),
                other.roi_extent,
                other.arch
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        Architecture {
            conv_channels: alloc::vec![2, 3],
            kernel: 3,
            padding: 1,
            pool_window: 2,
            head_hidden: alloc::vec![5],
        }
    }

    #[test]
    fn reference_desk_architecture_shapes() {
        let arch = Architecture::default();
        assert_eq!(arch.trunk_extents(15).unwrap(), [15, 7, 7, 3, 3, 1]);
        assert_eq!(arch.feature_width(15).unwrap(), 32);
        let net = CollabQNet::build(2, 15, &arch, 0).unwrap();
        let obs = Observation::new(15, alloc::vec![0.5; 4 * 15 * 15 * 15]).unwrap();
        let q = net.forward(&[obs.clone(), obs]).unwrap();
        assert_eq!(q.len(), 2);
        assert!(q.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn valid_convolutions_need_a_larger_roi() {
        let arch = Architecture {
            padding: 0,
            ..Architecture::default()
        };
        let err = arch.trunk_extents(15).unwrap_err();
        assert!(matches!(&err, Error::Architecture(m) if m.contains("conv layer 2")), "{err}");
        assert_eq!(arch.trunk_extents(45).unwrap(), [43, 21, 19, 9, 7, 3]);
    }

    #[test]
    fn counts_match_the_built_network() {
        let arch = Architecture::default();
        let net = CollabQNet::build(3, 15, &arch, 1).unwrap();
        assert_eq!(net.param_count(), arch.param_count(15).unwrap());
        let total: usize = net.params().iter().map(|t| t.len()).sum();
        assert_eq!(total, net.param_count().total(3));
        assert_eq!(net.param_names().len(), net.params().len());
    }

    #[test]
    fn reduction_ratio_examples() {
        let c = ParamCount {
            trunk: 10_000,
            per_head: 90_000,
        };
        assert_eq!(c.reduction_ratio(1), 0.0);
        assert!((c.reduction_ratio(2) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn default_heads_differ_and_equal_streams_coincide() {
        let net = CollabQNet::build(2, 7, &tiny(), 4).unwrap();
        assert_ne!(net.head(0), net.head(1));
        let same = CollabQNet::build_with_streams(2, 7, &tiny(), 4, &[1, 1]).unwrap();
        assert_eq!(same.head(0), same.head(1));
        let obs = Observation::new(7, (0..4 * 343).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let q = same.forward(&[obs.clone(), obs]).unwrap();
        assert_eq!(q[0], q[1]);
    }

    #[test]
    fn observation_mismatch_names_agent() {
        let net = CollabQNet::build(2, 7, &tiny(), 0).unwrap();
        let good = Observation::new(7, alloc::vec![0.0; 4 * 343]).unwrap();
        let bad = Observation::new(5, alloc::vec![0.0; 4 * 125]).unwrap();
        assert!(matches!(net.forward(&[good, bad]), Err(Error::Observation { agent: 1, .. })));
    }

    #[test]
    fn sync_copies_and_rejects_mismatch() {
        let net = CollabQNet::build(2, 7, &tiny(), 0).unwrap();
        let mut target = CollabQNet::build(2, 7, &tiny(), 99).unwrap();
        net.sync_target(&mut target).unwrap();
        assert_eq!(net, target);
        let mut other = CollabQNet::build(3, 7, &tiny(), 0).unwrap();
        assert!(matches!(net.sync_target(&mut other), Err(Error::Architecture(_))));
    }
}
