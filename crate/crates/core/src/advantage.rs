//! Discounted returns and generalized advantage estimation.

use crate::cartpole::EnvState;

/// One environment step as stored in trajectories and the replay memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub action: usize,
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    /// Step index within the episode, starting at 0.
    pub timestep: usize,
    pub return_to_go: f64,
    pub advantage: f64,
}

/// Ordered steps of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    /// Undiscounted episode return.
    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn states(&self) -> Vec<EnvState> {
        self.transitions.iter().map(|t| t.state).collect()
    }

    /// Fills `return_to_go` and `advantage` on every transition.
    ///
    /// `values` holds `V(s_t)` for each step plus the bootstrap value of the
    /// post-final state.
    pub fn annotate(&mut self, values: &[f64], gamma: f64, lambda: f64) {
        let rewards = self.rewards();
        let rtg = returns_to_go(&rewards, gamma);
        let adv = gae(&rewards, values, gamma, lambda);
        for ((t, r), a) in self.transitions.iter_mut().zip(rtg).zip(adv) {
            t.return_to_go = r;
            t.advantage = a;
        }
    }
}

/// `R_t = r_t + gamma * R_{t+1}` with `R_T = 0` past the end.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// GAE(gamma, lambda). `values` has one more entry than `rewards`: the last
/// one bootstraps the state after the final step (0 for a terminal state).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(
        values.len(),
        rewards.len() + 1,
        "gae needs one bootstrap value past the last reward"
    );
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// Shift to zero mean and scale to unit population standard deviation. When
/// the spread is below `1e-8` only the mean is removed.
pub fn normalize(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        advantages.iter().map(|a| a - mean).collect()
    } else {
        advantages.iter().map(|a| (a - mean) / std).collect()
    }
}
