//! Replay memory of finished transitions, used for value regression.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::advantage::{Trajectory, Transition};
use crate::error::ReplayError;

pub const DEFAULT_CAPACITY: usize = 50_000;
/// Episode return above which the memory is wiped.
pub const DEFAULT_CLEAR_THRESHOLD: f64 = 195.0;

/// Bounded FIFO of transitions that empties itself after a solved episode.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: VecDeque<Transition>,
    capacity: usize,
    solved_clear_threshold: f64,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY, DEFAULT_CLEAR_THRESHOLD)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, solved_clear_threshold: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            storage: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
            solved_clear_threshold,
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub fn push_transition(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    /// Appends every step of `traj`, evicting the oldest entries past
    /// capacity.
    pub fn push(&mut self, traj: &Trajectory) {
        for t in &traj.transitions {
            self.push_transition(*t);
        }
    }

    /// `batch_size` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>, ReplayError> {
        if self.storage.len() < batch_size {
            return Err(ReplayError::InsufficientData {
                available: self.storage.len(),
                requested: batch_size,
            });
        }
        Ok(index::sample(rng, self.storage.len(), batch_size)
            .into_iter()
            .map(|i| self.storage[i])
            .collect())
    }

    /// Empties the memory when `episode_return` is strictly above the
    /// threshold; returns whether it did.
    pub fn clear_if_solved(&mut self, episode_return: f64) -> bool {
        if episode_return > self.solved_clear_threshold {
            self.storage.clear();
            true
        } else {
            false
        }
    }
}
