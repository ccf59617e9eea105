use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] collabdqn_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: malformed JSON: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: payload has {actual_bytes} bytes, header shape needs {expected} voxels ({} bytes)", path.display(), expected * 4)]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual_bytes: u64,
    },
    #[error("{}: unknown dtype `{dtype}` (supported: \"f32le\")", path.display())]
    UnknownDtype { path: PathBuf, dtype: String },
    #[error("{}: format version {found} is not supported (expected {expected})", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{}: not a checkpoint (bad magic bytes)", path.display())]
    NotACheckpoint { path: PathBuf },
    #[error("{}: truncated checkpoint: needs {expected} bytes, found {actual}", path.display())]
    Truncated { path: PathBuf, expected: u64, actual: u64 },
    #[error("{}: checkpoint holds {found} tensors, its architecture needs {expected}", path.display())]
    TensorCount { path: PathBuf, expected: usize, found: usize },
    #[error("{}: architecture mismatch: {detail}", path.display())]
    ArchitectureMismatch { path: PathBuf, detail: String },
    #[error("{}: malformed checkpoint: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },
    #[error("{}: malformed report: {detail}", path.display())]
    Report { path: PathBuf, detail: String },
    #[error("{}: output directory is not empty (pass --force to overwrite)", path.display())]
    NotEmpty { path: PathBuf },
    #[error("{}: parent directory does not exist", path.display())]
    MissingParent { path: PathBuf },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn json(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
        move |source| Error::Json {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the error stems from the configuration rather than from
    /// running it.
    pub fn is_config(&self) -> bool {
        use collabdqn_core::Error as E;
        matches!(
            self,
            Error::Config(_) | Error::Core(E::Config(_) | E::AgentCountMismatch { .. } | E::MissingLandmark { .. } | E::InvalidRoi { .. })
        )
    }

    /// Process exit code: 1 for configuration errors, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_config() {
            1
        } else {
            2
        }
    }
}
