//! Binary checkpoints of a network, its optimizer and the training counters.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `CLDQNCKP` |
//! | 4 | format version (u32) |
//! | 8 | header length `n` (u64) |
//! | n | JSON header |
//! | rest | f32 LE payloads, at the offsets listed in the header |
//!
//! The header carries the architecture, the optimizer configuration and
//! per-tensor step counts, the update/episode counters, the RNG position and
//! a directory of tensors. Offsets are in bytes from the start of the
//! payload. Tensors are the network parameters in canonical order, then
//! the optimizer's first moments (`adam.m.<name>`), then its second moments
//! (`adam.v.<name>`).

use std::fs;
use std::path::Path;

use collabdqn_core::nn::{Adam, AdamConfig};
use collabdqn_core::qmodel::{Architecture, CollabQNet};
use collabdqn_core::rng::RngState;
use collabdqn_core::trainer::TrainerState;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CLDQNCKP";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

/// Shape of the network a checkpoint holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub agent_count: usize,
    pub roi_extent: usize,
    pub arch: Architecture,
}

impl Descriptor {
    pub fn of(net: &CollabQNet) -> Self {
        Self {
            agent_count: net.agent_count(),
            roi_extent: net.roi_extent(),
            arch: net.architecture().clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub network: Descriptor,
    pub optimizer: AdamConfig,
    pub optimizer_steps: Vec<u64>,
    pub step: u64,
    pub episode: u64,
    pub env_steps: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorEntry>,
}

fn put(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(state: &TrainerState) -> Result<Vec<u8>> {
    let net = &state.net;
    let names = net.param_names();
    let params = net.params();
    if state.adam.tensor_count() != params.len() {
        return Err(collabdqn_core::Error::Architecture("optimizer state does not match the network".into()).into());
    }
    let mut tensors = Vec::with_capacity(3 * params.len());
    let mut payload = Vec::new();
    let mut entry = |name: String, shape: &[usize], values: &[f32], payload: &mut Vec<u8>| {
        tensors.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            offset: payload.len() as u64,
        });
        put(payload, values);
    };
    for (name, t) in names.iter().zip(&params) {
        entry(name.clone(), t.shape(), t.data(), &mut payload);
    }
    for (i, (name, t)) in names.iter().zip(&params).enumerate() {
        entry(format!("adam.m.{name}"), t.shape(), state.adam.first_moment(i), &mut payload);
    }
    for (i, (name, t)) in names.iter().zip(&params).enumerate() {
        entry(format!("adam.v.{name}"), t.shape(), state.adam.second_moment(i), &mut payload);
    }
    let header = Header {
        network: Descriptor::of(net),
        optimizer: state.adam.config,
        optimizer_steps: state.adam.steps().to_vec(),
        step: state.step,
        episode: state.episode,
        env_steps: state.env_steps,
        rng: RngState::capture(&state.rng),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses the preamble and header; `path` only labels errors.
pub fn read_header(bytes: &[u8], path: &Path) -> Result<(Header, usize)> {
    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len() as u64,
    };
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            truncated(PREAMBLE as u64)
        } else {
            Error::NotACheckpoint { path: path.to_path_buf() }
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::NotACheckpoint { path: path.to_path_buf() });
    }
    if bytes.len() < PREAMBLE {
        return Err(truncated(PREAMBLE as u64));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let end = (PREAMBLE as u64).saturating_add(len);
    if end > bytes.len() as u64 {
        return Err(truncated(end));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..end as usize]).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        detail: format!("header: {e}"),
    })?;
    Ok((header, end as usize))
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<TrainerState> {
    let (header, start) = read_header(bytes, path)?;
    let corrupt = |detail: String| Error::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    let d = &header.network;
    let mut net = CollabQNet::build(d.agent_count, d.roi_extent, &d.arch, 0).map_err(|e| Error::ArchitectureMismatch {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let names = net.param_names();
    let n = names.len();
    if header.tensors.len() != 3 * n {
        return Err(Error::TensorCount {
            path: path.to_path_buf(),
            expected: 3 * n,
            found: header.tensors.len(),
        });
    }
    if header.optimizer_steps.len() != n {
        return Err(corrupt(format!("{} optimizer step counts for {n} tensors", header.optimizer_steps.len())));
    }
    let payload = &bytes[start..];
    let shapes: Vec<Vec<usize>> = net.params().iter().map(|t| t.shape().to_vec()).collect();
    let mut values: Vec<Vec<f32>> = Vec::with_capacity(3 * n);
    let mut covered = 0u64;
    for (i, entry) in header.tensors.iter().enumerate() {
        let name = match i / n {
            0 => names[i % n].clone(),
            1 => format!("adam.m.{}", names[i % n]),
            _ => format!("adam.v.{}", names[i % n]),
        };
        if entry.name != name || entry.shape != shapes[i % n] {
            return Err(corrupt(format!("tensor {i} is `{}` {:?}, expected `{name}` {:?}", entry.name, entry.shape, shapes[i % n])));
        }
        if entry.offset != covered {
            return Err(corrupt(format!("tensor `{name}` at offset {}, expected {covered}", entry.offset)));
        }
        let len: usize = entry.shape.iter().product();
        let end = covered + 4 * len as u64;
        if end > payload.len() as u64 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: start as u64 + end,
                actual: bytes.len() as u64,
            });
        }
        let raw = &payload[covered as usize..end as usize];
        values.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect());
        covered = end;
    }
    if covered != payload.len() as u64 {
        return Err(corrupt(format!("{} trailing bytes", payload.len() as u64 - covered)));
    }
    let second = values.split_off(2 * n);
    let first = values.split_off(n);
    for (t, v) in net.params_mut().into_iter().zip(values) {
        t.data_mut().copy_from_slice(&v);
    }
    let adam = Adam::from_parts(header.optimizer, first, second, header.optimizer_steps)?;
    Ok(TrainerState {
        net,
        adam,
        step: header.step,
        episode: header.episode,
        env_steps: header.env_steps,
        rng: header.rng.restore(),
    })
}

pub fn save(state: &TrainerState, path: &Path) -> Result<()> {
    let bytes = to_bytes(state)?;
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<TrainerState> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    from_bytes(&bytes, path)
}

/// Loads a checkpoint and checks that it holds the expected network.
pub fn load_expecting(path: &Path, expected: &Descriptor) -> Result<TrainerState> {
    let state = load(path)?;
    let found = Descriptor::of(&state.net);
    if &found != expected {
        let mut diffs = Vec::new();
        if found.agent_count != expected.agent_count {
            diffs.push(format!("{} agents, expected {}", found.agent_count, expected.agent_count));
        }
        if found.roi_extent != expected.roi_extent {
            diffs.push(format!("ROI {}, expected {}", found.roi_extent, expected.roi_extent));
        }
        if found.arch != expected.arch {
            diffs.push(format!("layers {:?}, expected {:?}", found.arch, expected.arch));
        }
        return Err(Error::ArchitectureMismatch {
            path: path.to_path_buf(),
            detail: diffs.join("; "),
        });
    }
    Ok(state)
}

/// Header only, for inspection without rebuilding the network.
pub fn inspect(path: &Path) -> Result<Header> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(read_header(&bytes, path)?.0)
}
