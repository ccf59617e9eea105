//! Replay, exploration and the episodic multi-agent training loop.

mod replay;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

pub use replay::{ReplayBuffer, StateKey, Transition};

use crate::env::{self, Action, EnvConfig, Scan, Voxel};
use crate::error::{Error, Result};
use crate::nn::{td_squared_loss, Adam, AdamConfig};
use crate::qmodel::{AgentBatch, Architecture, CollabQNet};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::{ACTIONS, HISTORY};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub arch: Architecture,
    /// Discount factor.
    pub gamma: f32,
    pub epsilon_start: f32,
    pub epsilon_end: f32,
    /// Share of `steps` over which ε decays linearly.
    pub epsilon_decay_fraction: f32,
    pub optimizer: AdamConfig,
    /// Transitions kept per agent.
    pub replay_capacity: usize,
    /// Transitions per agent gathered with a random policy before learning.
    pub warmup: usize,
    /// Transitions sampled per agent and update.
    pub batch_size: usize,
    /// Updates between target-network copies.
    pub target_sync: u64,
    /// Environment steps between updates.
    pub update_every: u64,
    pub max_episode_steps: usize,
    /// Update budget.
    pub steps: u64,
    /// Optional cap on training episodes.
    pub episodes: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            arch: Architecture::default(),
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_fraction: 0.75,
            optimizer: AdamConfig::default(),
            replay_capacity: 50_000,
            warmup: 2_000,
            batch_size: 32,
            target_sync: 2_500,
            update_every: 1,
            max_episode_steps: 200,
            steps: 30_000,
            episodes: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f32| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("epsilon_start", self.epsilon_start)?;
        unit("epsilon_end", self.epsilon_end)?;
        unit("epsilon_decay_fraction", self.epsilon_decay_fraction)?;
        for (name, v) in [
            ("replay_capacity", self.replay_capacity as u64),
            ("batch_size", self.batch_size as u64),
            ("target_sync", self.target_sync),
            ("update_every", self.update_every),
            ("max_episode_steps", self.max_episode_steps as u64),
            ("steps", self.steps),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.episodes == Some(0) {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.warmup > self.replay_capacity {
            return Err(Error::Config(format!(
                "warmup {} exceeds replay capacity {}",
                self.warmup, self.replay_capacity
            )));
        }
        let lr = self.optimizer.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_steps: libm::ceil(self.epsilon_decay_fraction as f64 * self.steps as f64) as u64,
        }
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f32,
    pub end: f32,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f32 {
        if step >= self.decay_steps {
            return self.end;
        }
        let t = step as f64 / self.decay_steps as f64;
        (self.start as f64 + (self.end as f64 - self.start as f64) * t) as f32
    }
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax(q: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// With probability `epsilon` a uniformly random action, otherwise `None`.
/// Always consumes one draw, plus one more when exploring.
pub fn explore(epsilon: f32, rng: &mut Rng) -> Option<usize> {
    (rng.random::<f32>() < epsilon).then(|| rng.random_range(0..ACTIONS))
}

/// ε-greedy choice.
pub fn select_action(q: &[f32; ACTIONS], epsilon: f32, rng: &mut Rng) -> usize {
    explore(epsilon, rng).unwrap_or_else(|| argmax(q))
}

/// `y = r` for terminal transitions, else `r + γ·max_a′ q_next[a′]`, with
/// `q_next` a `B × 6` tensor from the target network.
pub fn bellman_targets(rewards: &[f32], terminals: &[bool], q_next: &Tensor, gamma: f32) -> Result<Vec<f32>> {
    let b = rewards.len();
    if terminals.len() != b || q_next.shape() != [b, ACTIONS] {
        return Err(Error::ShapeMismatch {
            context: "bellman target batch",
            axis: 0,
            expected: b,
            actual: if terminals.len() != b { terminals.len() } else { q_next.shape()[0] },
        });
    }
    Ok(rewards
        .iter()
        .zip(terminals)
        .zip(q_next.data().chunks_exact(ACTIONS))
        .map(|((&r, &done), q)| {
            if done {
                r
            } else {
                r + gamma * q.iter().copied().fold(f32::NEG_INFINITY, f32::max)
            }
        })
        .collect())
}

/// Summary of one training episode.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeRecord {
    pub episode: u64,
    pub scan: usize,
    /// Environment steps taken.
    pub steps: usize,
    /// Updates applied so far, over the whole run.
    pub global_step: u64,
    pub epsilon: f32,
    pub final_distance_mm: Vec<f64>,
    pub converged: Vec<bool>,
    /// Mean TD loss over the episode's updates and agents.
    pub mean_loss: Option<f32>,
}

/// What a checkpoint needs to resume training.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub net: CollabQNet,
    pub adam: Adam,
    pub step: u64,
    pub episode: u64,
    /// Environment steps of learning episodes.
    pub env_steps: u64,
    pub rng: Rng,
}

/// Positions and outcomes of one agent over an episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub positions: Vec<Voxel>,
    pub transitions: usize,
}

/// Drives training over a fixed set of scans.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    scans: &'a [Scan],
    targets: Vec<Vec<[f64; 3]>>,
    config: TrainConfig,
    schedule: EpsilonSchedule,
    net: CollabQNet,
    target: CollabQNet,
    adam: Adam,
    replay: ReplayBuffer,
    rng: Rng,
    step: u64,
    episode: u64,
    env_steps: u64,
    /// Trajectories of the last episode, one per agent.
    pub last_trajectories: Vec<Trajectory>,
}

fn adam_for(net: &CollabQNet, config: AdamConfig) -> Adam {
    Adam::new(config, net.params().iter().map(|t| t.len()))
}

impl<'a> Trainer<'a> {
    /// Validates the configuration and landmark names against every scan,
    /// then builds a fresh network from `config.seed`.
    pub fn new(scans: &'a [Scan], landmarks: &[String], config: TrainConfig) -> Result<Self> {
        let net = CollabQNet::build(landmarks.len().max(1), config.env.roi_extent, &config.arch, config.seed)?;
        let adam = adam_for(&net, config.optimizer);
        let state = TrainerState {
            net,
            adam,
            step: 0,
            episode: 0,
            env_steps: 0,
            rng: rng::stream(config.seed, 1 << 32),
        };
        Self::resume(scans, landmarks, config, state)
    }

    /// Continues from saved state. The replay buffer starts empty.
    pub fn resume(scans: &'a [Scan], landmarks: &[String], config: TrainConfig, state: TrainerState) -> Result<Self> {
        config.validate()?;
        if scans.is_empty() {
            return Err(Error::Empty("training scans"));
        }
        if landmarks.is_empty() {
            return Err(Error::Empty("landmark names"));
        }
        let k = landmarks.len();
        if state.net.agent_count() != k {
            return Err(Error::AgentCountMismatch {
                expected: state.net.agent_count(),
                actual: k,
            });
        }
        if state.net.roi_extent() != config.env.roi_extent || state.net.architecture() != &config.arch {
            return Err(Error::Architecture("checkpoint network does not match the configured architecture".into()));
        }
        let targets = scans.iter().map(|s| s.targets(landmarks)).collect::<Result<Vec<_>>>()?;
        for s in scans {
            config.env.validate_for(s.volume.shape())?;
        }
        if state.adam.tensor_count() != state.net.params().len() {
            return Err(Error::Architecture("optimizer state does not match the network".into()));
        }
        let mut adam = state.adam;
        adam.config = config.optimizer;
        Ok(Self {
            scans,
            targets,
            schedule: config.epsilon_schedule(),
            target: state.net.clone(),
            net: state.net,
            adam,
            replay: ReplayBuffer::new(k, config.replay_capacity),
            rng: state.rng,
            step: state.step,
            episode: state.episode,
            env_steps: state.env_steps,
            config,
            last_trajectories: Vec::new(),
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            net: self.net.clone(),
            adam: self.adam.clone(),
            step: self.step,
            episode: self.episode,
            env_steps: self.env_steps,
            rng: self.rng.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net(&self) -> &CollabQNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut CollabQNet {
        &mut self.net
    }

    pub fn target(&self) -> &CollabQNet {
        &self.target
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn replay_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.replay
    }

    /// Updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn agent_count(&self) -> usize {
        self.net.agent_count()
    }

    pub fn epsilon(&self) -> f32 {
        self.schedule.value(self.step)
    }

    pub fn into_net(self) -> CollabQNet {
        self.net
    }

    /// Rebuilds `B × 4 × R³` input batches from state keys.
    pub fn materialize<'k>(&self, keys: impl ExactSizeIterator<Item = &'k StateKey>) -> Result<Tensor> {
        let r = self.config.env.roi_extent;
        let frame = r * r * r;
        let n = keys.len();
        let mut data = vec![0.0; n * HISTORY * frame];
        for (chunk, key) in data.chunks_exact_mut(HISTORY * frame).zip(keys) {
            let volume = &self.scans[key.scan as usize].volume;
            for (out, &c) in chunk.chunks_exact_mut(frame).zip(&key.history) {
                env::crop_into(volume, c, r, out);
            }
        }
        Tensor::new(&[n, HISTORY, r, r, r], data)
    }

    /// One gradient update from a fresh minibatch per non-frozen agent.
    /// Returns each agent's TD loss (`None` when frozen). With every agent
    /// frozen nothing changes and the step counter stays put.
    pub fn train_batch_step(&mut self, frozen: &[bool]) -> Result<Vec<Option<f32>>> {
        let k = self.agent_count();
        if frozen.len() != k {
            return Err(Error::AgentCountMismatch {
                expected: k,
                actual: frozen.len(),
            });
        }
        let active: Vec<usize> = (0..k).filter(|&a| !frozen[a]).collect();
        let mut losses = vec![None; k];
        if active.is_empty() {
            return Ok(losses);
        }
        let samples = active
            .iter()
            .map(|&a| self.replay.sample(a, self.config.batch_size, self.config.warmup, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let batch = |keys: &mut dyn FnMut(&Transition) -> StateKey| -> Result<Vec<AgentBatch>> {
            active
                .iter()
                .zip(&samples)
                .map(|(&agent, s)| {
                    let ks: Vec<StateKey> = s.iter().map(&mut *keys).collect();
                    Ok(AgentBatch {
                        agent,
                        input: self.materialize(ks.iter())?,
                    })
                })
                .collect()
        };
        let next = batch(&mut |t| t.next_state)?;
        let states = batch(&mut |t| t.state)?;
        let q_next = self.target.q_values(&next)?;
        let (trace, q) = self.net.forward_trace(&states)?;
        let mut grad_q = Vec::with_capacity(active.len());
        for (i, s) in samples.iter().enumerate() {
            let rewards: Vec<f32> = s.iter().map(|t| t.reward).collect();
            let terminals: Vec<bool> = s.iter().map(|t| t.terminal).collect();
            let y = bellman_targets(&rewards, &terminals, &q_next[i], self.config.gamma)?;
            let picked: Vec<f32> = s.iter().enumerate().map(|(j, t)| q[i].data()[j * ACTIONS + t.action as usize]).collect();
            let n = picked.len();
            let (loss, g) = td_squared_loss(&Tensor::new(&[n], picked)?, &Tensor::new(&[n], y)?)?;
            let mut full = Tensor::zeros(&[n, ACTIONS])?;
            for (j, t) in s.iter().enumerate() {
                full.data_mut()[j * ACTIONS + t.action as usize] = g.data()[j];
            }
            grad_q.push(full);
            losses[active[i]] = Some(loss);
        }
        let grads = self.net.backward(&trace, &grad_q)?;
        let names = self.net.param_names();
        let mut params: Vec<(&str, &mut Tensor)> = names.iter().map(String::as_str).zip(self.net.params_mut()).collect();
        self.adam.step(&mut params, &grads.as_list())?;
        self.step += 1;
        if self.step % self.config.target_sync == 0 {
            self.net.sync_target(&mut self.target)?;
        }
        Ok(losses)
    }

    /// Random-policy episodes until every agent holds `warmup` transitions.
    /// Returns the number of episodes played.
    pub fn warmup(&mut self) -> Result<usize> {
        let k = self.agent_count();
        let mut episodes = 0;
        let limit = 1000 + 10 * self.config.warmup;
        while (0..k).any(|a| self.replay.len(a) < self.config.warmup) {
            if episodes >= limit {
                return Err(Error::Config(format!("warmup did not fill the replay buffers within {limit} episodes")));
            }
            let scan = self.rng.random_range(0..self.scans.len());
            let starts = self.sample_starts(scan);
            self.play(scan, &starts, false, Some(1.0))?;
            episodes += 1;
        }
        Ok(episodes)
    }

    fn sample_starts(&mut self, scan: usize) -> Vec<Voxel> {
        let shape = self.scans[scan].volume.shape();
        (0..self.agent_count()).map(|_| env::sample_train_start(shape, &mut self.rng)).collect()
    }

    /// One learning episode on a random scan from random inner starts.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let scan = self.rng.random_range(0..self.scans.len());
        let starts = self.sample_starts(scan);
        self.run_episode_from(scan, &starts)
    }

    /// One learning episode from given starts.
    pub fn run_episode_from(&mut self, scan: usize, starts: &[Voxel]) -> Result<EpisodeRecord> {
        let rec = self.play(scan, starts, true, None)?;
        self.episode += 1;
        Ok(rec)
    }

    /// Plays one episode, pushing transitions. With `learn`, runs one update
    /// every `update_every` environment steps and stops early at the update
    /// budget.
    pub fn play(&mut self, scan: usize, starts: &[Voxel], learn: bool, epsilon: Option<f32>) -> Result<EpisodeRecord> {
        let k = self.agent_count();
        if starts.len() != k {
            return Err(Error::AgentCountMismatch {
                expected: k,
                actual: starts.len(),
            });
        }
        let s = &self.scans[scan];
        let targets = self.targets[scan].clone();
        let mut poses = Vec::with_capacity(k);
        for (a, &start) in starts.iter().enumerate() {
            let mut p = env::reset_pose(&s.volume, targets[a], start, &self.config.env)?;
            p.frozen = p.distance_mm() <= env::CONVERGENCE_MM;
            poses.push(p);
        }
        let mut trajectories: Vec<Trajectory> = starts
            .iter()
            .map(|&p| Trajectory {
                positions: vec![p],
                transitions: 0,
            })
            .collect();
        let mut loss_sum = 0.0f64;
        let mut loss_count = 0usize;
        let mut steps = 0;
        let r = self.config.env.roi_extent;
        while steps < self.config.max_episode_steps && poses.iter().any(|p| !p.frozen) {
            if learn && self.step >= self.config.steps {
                break;
            }
            let eps = epsilon.unwrap_or_else(|| self.schedule.value(self.step));
            let active: Vec<usize> = (0..k).filter(|&a| !poses[a].frozen).collect();
            let mut actions: Vec<Option<usize>> = active.iter().map(|_| explore(eps, &mut self.rng)).collect();
            let greedy: Vec<usize> = active.iter().zip(&actions).filter(|(_, a)| a.is_none()).map(|(&g, _)| g).collect();
            if !greedy.is_empty() {
                let obs: Vec<env::Observation> = greedy.iter().map(|&a| env::Observation::capture(&s.volume, poses[a].history(), r)).collect();
                let pairs: Vec<(usize, &env::Observation)> = greedy.iter().copied().zip(&obs).collect();
                let q = self.net.forward_agents(&pairs)?;
                let mut qi = q.iter();
                for a in actions.iter_mut().filter(|a| a.is_none()) {
                    *a = Some(argmax(qi.next().unwrap()));
                }
            }
            for (&a, action) in active.iter().zip(&actions) {
                let action = action.unwrap();
                let pose = &mut poses[a];
                let state = StateKey {
                    scan: scan as u32,
                    history: *pose.history(),
                };
                let m = env::advance(pose, Action::from_index(action).unwrap(), &s.volume, targets[a])?;
                self.replay.push(Transition {
                    agent: a,
                    state,
                    action: action as u8,
                    reward: m.reward as f32,
                    next_state: StateKey {
                        scan: scan as u32,
                        history: *pose.history(),
                    },
                    terminal: m.converged,
                })?;
                trajectories[a].positions.push(pose.position());
                trajectories[a].transitions += 1;
                if m.converged {
                    pose.frozen = true;
                } else if pose.is_oscillating() {
                    pose.reduce_scale();
                }
            }
            steps += 1;
            if learn {
                self.env_steps += 1;
            }
            if learn && self.env_steps % self.config.update_every == 0 {
                let frozen: Vec<bool> = poses.iter().map(|p| p.frozen).collect();
                for l in self.train_batch_step(&frozen)?.into_iter().flatten() {
                    loss_sum += l as f64;
                    loss_count += 1;
                }
            }
        }
        self.last_trajectories = trajectories;
        Ok(EpisodeRecord {
            episode: self.episode,
            scan,
            steps,
            global_step: self.step,
            epsilon: epsilon.unwrap_or_else(|| self.schedule.value(self.step)),
            final_distance_mm: poses.iter().map(|p| p.distance_mm()).collect(),
            converged: poses.iter().map(|p| p.distance_mm() <= env::CONVERGENCE_MM).collect(),
            mean_loss: (loss_count > 0).then(|| (loss_sum / loss_count as f64) as f32),
        })
    }

    /// Whether the update or episode budget is spent.
    pub fn finished(&self) -> bool {
        self.step >= self.config.steps || self.config.episodes.is_some_and(|e| self.episode >= e)
    }

    /// Warmup, then learning episodes until the budget is spent. `on_episode`
    /// sees every record and may abort by returning an error.
    pub fn train(&mut self, mut on_episode: impl FnMut(&Self, &EpisodeRecord) -> Result<()>) -> Result<()> {
        self.warmup()?;
        while !self.finished() {
            let rec = self.run_episode()?;
            on_episode(self, &rec)?;
        }
        Ok(())
    }
}
