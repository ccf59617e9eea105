//! File formats, threaded evaluation and the command line around
//! [`collabdqn_core`].
//!
//! - [`volume_io`]: the `.vol.json` / `.vol.raw` / `.landmarks.json` triplet.
//! - [`dataset`]: synthetic datasets on disk with a relocatable manifest.
//! - [`checkpoint`]: binary checkpoints of network, optimizer and counters.
//! - [`parallel`]: worker threads and the threaded evaluation protocol.
//! - [`report`]: text and CSV reports.
//! - [`config`]: the JSON run configuration.
//! - [`commands`]: `generate`, `train`, `evaluate` and `inspect`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod parallel;
pub mod report;
pub mod volume_io;

pub use collabdqn_core as core;
pub use error::{Error, Result};
