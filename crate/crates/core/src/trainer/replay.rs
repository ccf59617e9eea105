use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::env::Voxel;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::HISTORY;

/// Enough to rebuild an observation: the scan and the four history
/// positions. Crops are taken again at sampling time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub scan: u32,
    pub history: [Voxel; HISTORY],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub agent: usize,
    pub state: StateKey,
    pub action: u8,
    /// Distance decrease in mm.
    pub reward: f32,
    pub next_state: StateKey,
    pub terminal: bool,
}

/// One ring buffer per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    rings: Vec<VecDeque<Transition>>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(agents: usize, capacity: usize) -> Self {
        Self {
            capacity,
            rings: (0..agents).map(|_| VecDeque::new()).collect(),
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn agents(&self) -> usize {
        self.rings.len()
    }

    pub fn len(&self, agent: usize) -> usize {
        self.rings[agent].len()
    }

    /// Total insertions over the buffer's lifetime.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends to the transition's agent ring, evicting the oldest entry when
    /// full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.agent >= self.rings.len() || t.action as usize >= crate::ACTIONS || !t.reward.is_finite() {
            return Err(Error::Config(alloc::format!("malformed transition {t:?}")));
        }
        let ring = &mut self.rings[t.agent];
        if ring.len() == self.capacity {
            ring.pop_front();
        }
        if self.capacity > 0 {
            ring.push_back(t);
        }
        self.inserted += 1;
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self, agent: usize) -> impl Iterator<Item = &Transition> {
        self.rings[agent].iter()
    }

    /// `batch` transitions of `agent`, uniformly with replacement. Errors
    /// while the ring holds fewer than `warmup` entries.
    pub fn sample(&self, agent: usize, batch: usize, warmup: usize, rng: &mut Rng) -> Result<Vec<Transition>> {
        let ring = &self.rings[agent];
        if ring.len() < warmup.max(1) {
            return Err(Error::BelowWarmup {
                agent,
                size: ring.len(),
                warmup,
            });
        }
        Ok((0..batch).map(|_| ring[rng.random_range(0..ring.len())]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn t(agent: usize, i: u32) -> Transition {
        let key = StateKey {
            scan: i,
            history: [[0; 3]; HISTORY],
        };
        Transition {
            agent,
            state: key,
            action: 0,
            reward: i as f32,
            next_state: key,
            terminal: false,
        }
    }

    #[test]
    fn ring_keeps_the_latest() {
        let mut b = ReplayBuffer::new(2, 5);
        for i in 0..8 {
            b.push(t(1, i)).unwrap();
        }
        assert_eq!(b.len(0), 0);
        assert_eq!(b.iter(1).map(|t| t.state.scan).collect::<Vec<_>>(), [3, 4, 5, 6, 7]);
        assert_eq!(b.inserted(), 8);
    }

    #[test]
    fn sampling_respects_warmup() {
        let mut b = ReplayBuffer::new(1, 10);
        let mut r = rng::seeded(0);
        b.push(t(0, 0)).unwrap();
        assert!(matches!(b.sample(0, 4, 2, &mut r), Err(Error::BelowWarmup { agent: 0, size: 1, warmup: 2 })));
        b.push(t(0, 1)).unwrap();
        assert_eq!(b.sample(0, 4, 2, &mut r).unwrap().len(), 4);
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut b = ReplayBuffer::new(1, 10);
        assert!(b.push(t(1, 0)).is_err());
        let mut bad = t(0, 0);
        bad.action = 6;
        assert!(b.push(bad).is_err());
        bad.action = 0;
        bad.reward = f32::NAN;
        assert!(b.push(bad).is_err());
    }
}
