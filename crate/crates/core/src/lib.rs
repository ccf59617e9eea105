//! Collaborative multi-agent deep Q-learning for landmark localization in
//! 3D volumes.
//!
//! `K` agents search a volume for `K` landmarks at once. Each agent observes a
//! stack of the four most recent cubic crops centred on its position and picks
//! one of six axis moves. All agents are driven by a single [`CollabQNet`]:
//! one convolutional trunk whose weights are shared by every agent, feeding
//! `K` independent fully-connected heads.
//!
//! The crate is `no_std` (with `alloc`). File formats, the command line and
//! threaded evaluation live in the `collabdqn` companion crate.
//!
//! Module map:
//!
//! - [`tensor`], [`nn`]: dense f32 tensors and the layer kernels
//!   (3D convolution, max-pooling, dense, ReLU), the clipped TD loss, Adam and
//!   a finite-difference gradient checker.
//! - [`env`]: volumes, agent poses, observations, rewards and termination.
//! - [`qmodel`]: the shared-trunk network, parameter counting and target copies.
//! - [`trainer`]: replay, exploration schedule, Bellman targets and the
//!   episodic multi-agent training loop.
//! - [`eval`]: the 19-start evaluation protocol and error statistics.
//! - [`synth`]: synthetic volumes with geometrically coupled landmarks.
//!
//! All randomness goes through [`rng::Rng`] (ChaCha8), so runs are
//! reproducible for a fixed seed.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod qmodel;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use qmodel::{Architecture, CollabQNet};
pub use tensor::Tensor;

/// Number of discrete actions: a signed unit move along each of x, y, z.
pub const ACTIONS: usize = 6;

/// Frames of ROI history stacked into one observation.
pub const HISTORY: usize = 4;
