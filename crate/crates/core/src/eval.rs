//! Greedy test episodes over the 19-point start grid, and error statistics.
//!
//! Every agent of a test episode starts from the same grid point and acts
//! greedily. Agents run in lockstep and stop independently:
//!
//! - oscillation above the finest scale moves the agent down the ladder;
//! - oscillation at the finest scale ends it, predicting the position of
//!   the current scale with the highest max-action Q-value;
//! - an exhausted frame budget ends it at its current position.
//!
//! A budget of zero frames gives the "never move" baseline.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::env::{self, EnvConfig, Mode, Observation, Scan, Termination, Voxel};
use crate::error::{Error, Result};
use crate::qmodel::CollabQNet;
use crate::trainer::argmax;
use crate::ACTIONS;

/// Anything that scores observations for a set of agents.
pub trait QFunction {
    fn agent_count(&self) -> usize;
    fn roi_extent(&self) -> usize;
    /// Q-values for `(agent, observation)` pairs, in order.
    fn q_values(&self, pairs: &[(usize, &Observation)]) -> Result<Vec<[f32; ACTIONS]>>;
}

impl QFunction for CollabQNet {
    fn agent_count(&self) -> usize {
        CollabQNet::agent_count(self)
    }

    fn roi_extent(&self) -> usize {
        CollabQNet::roi_extent(self)
    }

    fn q_values(&self, pairs: &[(usize, &Observation)]) -> Result<Vec<[f32; ACTIONS]>> {
        self.forward_agents(pairs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct EvalConfig {
    pub env: EnvConfig,
    /// Steps allowed per agent and episode.
    pub max_frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            max_frames: 500,
        }
    }
}

/// Result of one agent's test episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub predicted: Voxel,
    pub error_mm: f64,
    pub steps: usize,
    /// `Oscillating` or `FrameBudgetExhausted`.
    pub termination: Termination,
    pub scale_reductions: usize,
    pub final_scale: u32,
}

struct Best {
    value: f32,
    position: Voxel,
}

/// Runs all agents greedily from `start` towards their `targets`.
pub fn run_test_episode<Q: QFunction + ?Sized>(q: &Q, scan: &Scan, targets: &[[f64; 3]], start: Voxel, cfg: &EvalConfig) -> Result<Vec<TestOutcome>> {
    let k = q.agent_count();
    if targets.len() != k {
        return Err(Error::AgentCountMismatch {
            expected: k,
            actual: targets.len(),
        });
    }
    if q.roi_extent() != cfg.env.roi_extent {
        return Err(Error::Config(format!(
            "network ROI {} differs from evaluation ROI {}",
            q.roi_extent(),
            cfg.env.roi_extent
        )));
    }
    let volume = &scan.volume;
    let mut poses = targets.iter().map(|&t| env::reset_pose(volume, t, start, &cfg.env)).collect::<Result<Vec<_>>>()?;
    let mut best: Vec<Option<Best>> = (0..k).map(|_| None).collect();
    let mut outcomes: Vec<Option<TestOutcome>> = (0..k).map(|_| None).collect();
    let mut reductions = alloc::vec![0usize; k];

    let finish = |pose: &env::AgentPose, predicted: Voxel, termination, reductions, target| TestOutcome {
        predicted,
        error_mm: env::mm_distance(env::to_f64(predicted), target, volume.spacing()),
        steps: pose.steps(),
        termination,
        scale_reductions: reductions,
        final_scale: pose.step_scale(),
    };

    for a in 0..k {
        if env::check_termination(&poses[a], Mode::Test, cfg.max_frames) == Termination::FrameBudgetExhausted {
            outcomes[a] = Some(finish(&poses[a], start, Termination::FrameBudgetExhausted, 0, targets[a]));
        }
    }
    loop {
        let active: Vec<usize> = (0..k).filter(|&a| outcomes[a].is_none()).collect();
        if active.is_empty() {
            break;
        }
        let obs: Vec<Observation> = active.iter().map(|&a| Observation::capture(volume, poses[a].history(), cfg.env.roi_extent)).collect();
        let pairs: Vec<(usize, &Observation)> = active.iter().copied().zip(&obs).collect();
        let qs = q.q_values(&pairs)?;
        for (&a, qa) in active.iter().zip(&qs) {
            let pose = &mut poses[a];
            let value = qa.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            if best[a].as_ref().is_none_or(|b| value > b.value) {
                best[a] = Some(Best {
                    value,
                    position: pose.position(),
                });
            }
            let action = env::Action::from_index(argmax(qa)).unwrap();
            env::advance(pose, action, volume, targets[a])?;
            let mut t = env::check_termination(pose, Mode::Test, cfg.max_frames);
            if t == Termination::Oscillating && pose.reduce_scale() {
                reductions[a] += 1;
                best[a] = None;
                t = env::check_termination(pose, Mode::Test, cfg.max_frames);
            }
            match t {
                Termination::Continue => {}
                Termination::Oscillating => {
                    let predicted = best[a].as_ref().map_or(pose.position(), |b| b.position);
                    outcomes[a] = Some(finish(pose, predicted, t, reductions[a], targets[a]));
                }
                _ => outcomes[a] = Some(finish(pose, pose.position(), Termination::FrameBudgetExhausted, reductions[a], targets[a])),
            }
        }
    }
    Ok(outcomes.into_iter().map(Option::unwrap).collect())
}

/// Error of one agent in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeError {
    pub landmark: String,
    pub volume_id: String,
    pub start_index: usize,
    pub error_mm: f64,
}

/// Mean, population standard deviation and median.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

/// Two-pass statistics; the standard deviation divides by `n`.
pub fn aggregate(values: &[f64]) -> Result<Stats> {
    if values.is_empty() {
        return Err(Error::Empty("error list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[m] } else { (sorted[m - 1] + sorted[m]) / 2.0 };
    Ok(Stats {
        mean,
        std: libm::sqrt(var),
        median,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSummary {
    pub name: String,
    /// Over every episode of this landmark.
    pub stats: Stats,
    /// Mean error per volume, in volume order.
    pub per_volume: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    pub starts_per_volume: usize,
    pub max_frames: usize,
    pub ladder: Vec<u32>,
    pub roi_extent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub landmarks: Vec<LandmarkSummary>,
    /// Ordered by volume, start index, landmark.
    pub episodes: Vec<EpisodeError>,
}

impl EvalReport {
    /// Builds summaries from per-episode errors, keeping landmark order as
    /// given and volume order as first seen.
    pub fn from_episodes(protocol: Protocol, landmarks: &[String], episodes: Vec<EpisodeError>) -> Result<Self> {
        let mut summaries = Vec::with_capacity(landmarks.len());
        for name in landmarks {
            let mine: Vec<&EpisodeError> = episodes.iter().filter(|e| &e.landmark == name).collect();
            let values: Vec<f64> = mine.iter().map(|e| e.error_mm).collect();
            let stats = aggregate(&values)?;
            let mut volumes: Vec<&str> = Vec::new();
            for e in &mine {
                if !volumes.contains(&e.volume_id.as_str()) {
                    volumes.push(&e.volume_id);
                }
            }
            let per_volume = volumes
                .iter()
                .map(|v| {
                    let vs: Vec<f64> = mine.iter().filter(|e| e.volume_id == *v).map(|e| e.error_mm).collect();
                    (String::from(*v), vs.iter().sum::<f64>() / vs.len() as f64)
                })
                .collect();
            summaries.push(LandmarkSummary {
                name: name.clone(),
                stats,
                per_volume,
            });
        }
        Ok(Self {
            protocol,
            landmarks: summaries,
            episodes,
        })
    }
}

/// All `(scan, start)` jobs of the protocol, in report order.
pub fn jobs(scans: &[Scan]) -> Vec<(usize, usize, Voxel)> {
    let mut out = Vec::new();
    for (i, s) in scans.iter().enumerate() {
        for (j, p) in env::start_grid(s.volume.shape()).into_iter().enumerate() {
            out.push((i, j, p));
        }
    }
    out
}

/// Runs one job and returns one error per landmark.
pub fn run_job<Q: QFunction + ?Sized>(q: &Q, scan: &Scan, landmarks: &[String], start_index: usize, start: Voxel, cfg: &EvalConfig) -> Result<Vec<EpisodeError>> {
    let targets = scan.targets(landmarks)?;
    let outcomes = run_test_episode(q, scan, &targets, start, cfg)?;
    Ok(outcomes
        .into_iter()
        .zip(landmarks)
        .map(|(o, name)| EpisodeError {
            landmark: name.clone(),
            volume_id: scan.id.clone(),
            start_index,
            error_mm: o.error_mm,
        })
        .collect())
}

pub fn protocol(cfg: &EvalConfig) -> Protocol {
    Protocol {
        starts_per_volume: 19,
        max_frames: cfg.max_frames,
        ladder: cfg.env.ladder.scales().to_vec(),
        roi_extent: cfg.env.roi_extent,
    }
}

/// Checks that every scan carries every landmark, naming the first gap.
pub fn check_annotations(scans: &[Scan], landmarks: &[String]) -> Result<()> {
    for s in scans {
        s.targets(landmarks)?;
    }
    Ok(())
}

/// The full protocol, single-threaded.
pub fn evaluate<Q: QFunction + ?Sized>(q: &Q, scans: &[Scan], landmarks: &[String], cfg: &EvalConfig) -> Result<EvalReport> {
    if landmarks.len() != q.agent_count() {
        return Err(Error::AgentCountMismatch {
            expected: q.agent_count(),
            actual: landmarks.len(),
        });
    }
    check_annotations(scans, landmarks)?;
    let mut episodes = Vec::new();
    for (i, j, p) in jobs(scans) {
        episodes.extend(run_job(q, &scans[i], landmarks, j, p, cfg)?);
    }
    EvalReport::from_episodes(protocol(cfg), landmarks, episodes)
}
