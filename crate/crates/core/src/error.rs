use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: axis {axis} expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        axis: usize,
        expected: usize,
        actual: usize,
    },
    #[error("rank mismatch in {context}: expected rank {expected}, got {actual}")]
    RankMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("kernel extent {kernel} exceeds padded input extent {input} on axis {axis}")]
    KernelTooLarge {
        axis: usize,
        kernel: usize,
        input: usize,
    },
    #[error("invalid pooling window {window} for spatial extents {extents:?}")]
    InvalidPoolWindow { window: usize, extents: [usize; 3] },
    #[error("non-finite gradient in parameter tensor `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("position {position:?} outside volume of shape {shape:?}")]
    OutOfBounds { position: [i64; 3], shape: [usize; 3] },
    #[error("invalid ROI extent {extent}: {reason}")]
    InvalidRoi { extent: usize, reason: &'static str },
    #[error("agent pose is frozen")]
    FrozenPose,
    #[error("architecture error: {0}")]
    Architecture(String),
    #[error("observation for agent {agent}: {reason}")]
    Observation { agent: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("agent {agent} has {size} transitions, below the warmup threshold {warmup}")]
    BelowWarmup {
        agent: usize,
        size: usize,
        warmup: usize,
    },
    #[error("expected {expected} landmarks for {expected} agents, got {actual}")]
    AgentCountMismatch { expected: usize, actual: usize },
    #[error("scan `{scan}` has no landmark named `{landmark}`")]
    MissingLandmark { scan: String, landmark: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("synthetic sample generation failed: {0}")]
    Synthesis(String),
}
