//! The volumetric search environment.
//!
//! An agent sits on an integer voxel of a [`Volume`] and sees the four most
//! recent cubic crops (side `R`, odd) centred on the positions it occupied.
//! Each of the six actions moves it `step_scale` voxels along one axis,
//! clamped at the faces. The reward is the decrease in physical distance to
//! its target, in millimetres.
//!
//! Step scales follow a descending [`ScaleLadder`] (3, 2, 1 by default). When
//! any position has been visited three times at the current scale the agent
//! is oscillating: the caller moves it down the ladder, or ends the episode
//! when it is already on the finest rung.

mod volume;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

pub use volume::{Landmark, LandmarkSet, Scan, Volume};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::{ACTIONS, HISTORY};

/// Integer voxel coordinates `(x, y, z)`.
pub type Voxel = [i64; 3];

/// Training episodes end once an agent is this close to its target.
pub const CONVERGENCE_MM: f64 = 1.0;

/// Visits to one position (at one scale) that count as oscillation.
pub const OSCILLATION_VISITS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Action {
    pub const ALL: [Action; ACTIONS] = [Action::PosX, Action::NegX, Action::PosY, Action::NegY, Action::PosZ, Action::NegZ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unit displacement.
    pub fn delta(self) -> Voxel {
        match self {
            Action::PosX => [1, 0, 0],
            Action::NegX => [-1, 0, 0],
            Action::PosY => [0, 1, 0],
            Action::NegY => [0, -1, 0],
            Action::PosZ => [0, 0, 1],
            Action::NegZ => [0, 0, -1],
        }
    }
}

/// Strictly decreasing step sizes ending at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(try_from = "Vec<u32>", into = "Vec<u32>"))]
pub struct ScaleLadder(Vec<u32>);

impl ScaleLadder {
    pub fn new(scales: Vec<u32>) -> Result<Self> {
        if scales.last() != Some(&1) {
            return Err(Error::Config(format!("scale ladder {scales:?} must end at 1")));
        }
        if scales.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(format!("scale ladder {scales:?} must be strictly decreasing")));
        }
        Ok(Self(scales))
    }

    /// Single-step mode.
    pub fn fixed() -> Self {
        Self(vec![1])
    }

    pub fn scales(&self) -> &[u32] {
        &self.0
    }
}

impl Default for ScaleLadder {
    fn default() -> Self {
        Self(vec![3, 2, 1])
    }
}

impl TryFrom<Vec<u32>> for ScaleLadder {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScaleLadder> for Vec<u32> {
    fn from(l: ScaleLadder) -> Self {
        l.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct EnvConfig {
    /// Side of the cubic ROI; odd.
    pub roi_extent: usize,
    pub ladder: ScaleLadder,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            roi_extent: 15,
            ladder: ScaleLadder::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate_for(&self, shape: [usize; 3]) -> Result<()> {
        let r = self.roi_extent;
        if r % 2 == 0 {
            return Err(Error::InvalidRoi {
                extent: r,
                reason: "must be odd",
            });
        }
        if r > 2 * shape.iter().copied().min().unwrap_or(0) {
            return Err(Error::InvalidRoi {
                extent: r,
                reason: "exceeds twice the smallest volume extent",
            });
        }
        Ok(())
    }
}

pub fn to_f64(p: Voxel) -> [f64; 3] {
    p.map(|c| c as f64)
}

/// Euclidean distance in millimetres.
pub fn mm_distance(a: [f64; 3], b: [f64; 3], spacing: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        let d = (a[i] - b[i]) * spacing[i];
        s += d * d;
    }
    libm::sqrt(s)
}

/// State of one agent within an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPose {
    position: Voxel,
    ladder: ScaleLadder,
    rung: usize,
    /// Oldest first; the last entry is the current position.
    history: [Voxel; HISTORY],
    visits: BTreeMap<Voxel, u32>,
    pub frozen: bool,
    steps: usize,
    distance_mm: f64,
}

impl AgentPose {
    pub fn position(&self) -> Voxel {
        self.position
    }

    pub fn step_scale(&self) -> u32 {
        self.ladder.0[self.rung]
    }

    pub fn at_finest_scale(&self) -> bool {
        self.rung + 1 == self.ladder.0.len()
    }

    pub fn history(&self) -> &[Voxel; HISTORY] {
        &self.history
    }

    pub fn visits(&self) -> &BTreeMap<Voxel, u32> {
        &self.visits
    }

    pub fn visit_count(&self, p: Voxel) -> u32 {
        self.visits.get(&p).copied().unwrap_or(0)
    }

    /// Steps taken since reset.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Distance to the target at the current position.
    pub fn distance_mm(&self) -> f64 {
        self.distance_mm
    }

    pub fn is_oscillating(&self) -> bool {
        self.visits.values().any(|&c| c >= OSCILLATION_VISITS)
    }

    /// Moves one rung down the ladder and restarts the visit count from the
    /// current position. Returns `false` on the finest rung.
    pub fn reduce_scale(&mut self) -> bool {
        if self.at_finest_scale() {
            return false;
        }
        self.rung += 1;
        self.visits.clear();
        self.visits.insert(self.position, 1);
        true
    }
}

/// Four stacked `R³` crops, oldest first, values in `[0, 1]` for a
/// normalized volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    roi: usize,
    data: Vec<f32>,
}

impl Observation {
    pub fn new(roi: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != HISTORY * roi * roi * roi {
            return Err(Error::InvalidRoi {
                extent: roi,
                reason: "observation length is not 4·R³",
            });
        }
        Ok(Self { roi, data })
    }

    /// Crops around each history position of `pose`.
    pub fn capture(volume: &Volume, history: &[Voxel; HISTORY], roi: usize) -> Self {
        let frame = roi * roi * roi;
        let mut data = vec![0.0; HISTORY * frame];
        for (chunk, &c) in data.chunks_exact_mut(frame).zip(history) {
            crop_into(volume, c, roi, chunk);
        }
        Self { roi, data }
    }

    pub fn roi(&self) -> usize {
        self.roi
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.roi * self.roi * self.roi;
        &self.data[i * n..(i + 1) * n]
    }
}

/// Writes the `R³` crop centred on `center` into `out`, zero outside the
/// volume.
pub fn crop_into(volume: &Volume, center: Voxel, roi: usize, out: &mut [f32]) {
    let [sx, sy, sz] = volume.shape();
    let half = (roi / 2) as i64;
    let lo = center.map(|c| c - half);
    out.fill(0.0);
    let z0 = lo[2].max(0);
    let z1 = (lo[2] + roi as i64).min(sz as i64);
    if z0 >= z1 {
        return;
    }
    for i in 0..roi {
        let x = lo[0] + i as i64;
        if x < 0 || x >= sx as i64 {
            continue;
        }
        for j in 0..roi {
            let y = lo[1] + j as i64;
            if y < 0 || y >= sy as i64 {
                continue;
            }
            let src = volume.index(x as usize, y as usize, z0 as usize);
            let dst = (i * roi + j) * roi + (z0 - lo[2]) as usize;
            let n = (z1 - z0) as usize;
            out[dst..dst + n].copy_from_slice(&volume.data()[src..src + n]);
        }
    }
}

/// Places an agent at `start` with a full-scale step and a history of four
/// copies of the starting position.
pub fn reset(volume: &Volume, target: [f64; 3], start: Voxel, cfg: &EnvConfig) -> Result<(AgentPose, Observation)> {
    let pose = reset_pose(volume, target, start, cfg)?;
    let obs = Observation::capture(volume, &pose.history, cfg.roi_extent);
    Ok((pose, obs))
}

/// [`reset`] without building the observation.
pub fn reset_pose(volume: &Volume, target: [f64; 3], start: Voxel, cfg: &EnvConfig) -> Result<AgentPose> {
    if !volume.contains(start) {
        return Err(Error::OutOfBounds {
            position: start,
            shape: volume.shape(),
        });
    }
    cfg.validate_for(volume.shape())?;
    let mut visits = BTreeMap::new();
    visits.insert(start, 1);
    Ok(AgentPose {
        position: start,
        ladder: cfg.ladder.clone(),
        rung: 0,
        history: [start; HISTORY],
        visits,
        frozen: false,
        steps: 0,
        distance_mm: mm_distance(to_f64(start), target, volume.spacing()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    /// Distance decrease in mm.
    pub reward: f64,
    /// Within [`CONVERGENCE_MM`] of the target after the move.
    pub converged: bool,
}

/// Applies `action` to `pose` without building an observation.
pub fn advance(pose: &mut AgentPose, action: Action, volume: &Volume, target: [f64; 3]) -> Result<Move> {
    if pose.frozen {
        return Err(Error::FrozenPose);
    }
    let shape = volume.shape();
    let scale = pose.step_scale() as i64;
    let d = action.delta();
    let mut next = pose.position;
    for i in 0..3 {
        next[i] = (next[i] + d[i] * scale).clamp(0, shape[i] as i64 - 1);
    }
    let distance = mm_distance(to_f64(next), target, volume.spacing());
    let reward = pose.distance_mm - distance;
    pose.position = next;
    pose.distance_mm = distance;
    pose.history.rotate_left(1);
    pose.history[HISTORY - 1] = next;
    *pose.visits.entry(next).or_insert(0) += 1;
    pose.steps += 1;
    Ok(Move {
        reward,
        converged: distance <= CONVERGENCE_MM,
    })
}

/// Applies `action` and returns the new observation with the move outcome.
pub fn step(pose: &mut AgentPose, action: Action, volume: &Volume, target: [f64; 3], roi: usize) -> Result<(Observation, Move)> {
    let m = advance(pose, action, volume, target)?;
    Ok((Observation::capture(volume, &pose.history, roi), m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Converged,
    /// Some position reached [`OSCILLATION_VISITS`] at the current scale.
    /// Above the finest scale the caller reduces the scale and carries on.
    Oscillating,
    FrameBudgetExhausted,
}

/// Classifies the pose after a step. In test mode oscillation is checked
/// before the frame budget; in train mode convergence comes first.
pub fn check_termination(pose: &AgentPose, mode: Mode, max_frames: usize) -> Termination {
    if mode == Mode::Train && pose.distance_mm <= CONVERGENCE_MM {
        return Termination::Converged;
    }
    if pose.is_oscillating() {
        return Termination::Oscillating;
    }
    if pose.steps >= max_frames {
        return Termination::FrameBudgetExhausted;
    }
    Termination::Continue
}

/// Inner box used for training starts: `[ceil(0.1·e), ceil(0.9·e))` per axis.
pub fn train_start_bounds(shape: [usize; 3]) -> [(i64, i64); 3] {
    shape.map(|e| (libm::ceil(0.1 * e as f64) as i64, libm::ceil(0.9 * e as f64) as i64))
}

/// Uniform voxel in the inner 80% box.
pub fn sample_train_start(shape: [usize; 3], rng: &mut Rng) -> Voxel {
    train_start_bounds(shape).map(|(lo, hi)| rng.random_range(lo..hi.max(lo + 1)))
}

/// The 19 evaluation starts: `{25%, 50%, 75%}` of each extent, rounded to
/// the nearest voxel, minus the 8 points that are extreme on every axis.
/// Ordered lexicographically by `(x, y, z)` level.
pub fn start_grid(shape: [usize; 3]) -> Vec<Voxel> {
    const FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];
    let levels = shape.map(|e| FRACTIONS.map(|f| (libm::round(f * e as f64) as i64).min(e as i64 - 1)));
    let mut out = Vec::with_capacity(19);
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                if i != 1 && j != 1 && k != 1 {
                    continue;
                }
                out.push([levels[0][i], levels[1][j], levels[2][k]]);
            }
        }
    }
    out
}
