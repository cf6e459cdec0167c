//! Training loop: collect whole episodes, regress the value network on the
//! replay memory, then take one trust-region policy step.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::advantage::{Trajectory, Transition};
use crate::cartpole::{Action, CartPole, EnvParams};
use crate::error::{ConfigError, NnError};
use crate::nn::{self, state_matrix, MlpArchitecture, ParamVector};
use crate::replay::{ReplayBuffer, DEFAULT_CAPACITY, DEFAULT_CLEAR_THRESHOLD};
use crate::trust_region::{trpo_step, PolicyBatch, TrustRegionConfig, UpdateDiagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    Trpo,
    Entrpo,
}

impl Algo {
    pub fn uses_entropy(self) -> bool {
        matches!(self, Algo::Entrpo)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Trpo => "trpo",
            Algo::Entrpo => "entrpo",
        })
    }
}

impl FromStr for Algo {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trpo" => Ok(Algo::Trpo),
            "entrpo" => Ok(Algo::Entrpo),
            other => Err(ConfigError::invalid("algo", format!("expected trpo or entrpo, got {other:?}"))),
        }
    }
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub normalize_advantages: bool,
    /// Includes the entropy temperature `entropy_coef`.
    pub trust_region: TrustRegionConfig,
    /// Value-regression mini-batch size.
    pub batch_size: usize,
    pub epoch_min_timesteps: usize,
    pub max_epochs: usize,
    pub value_lr: f64,
    pub value_epochs_per_update: usize,
    pub seed: u64,
    pub solved_window: usize,
    pub solved_threshold: f64,
    pub buffer_capacity: usize,
    pub buffer_clear_threshold: f64,
    pub env: EnvParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Entrpo,
            gamma: 0.85,
            gae_lambda: 0.95,
            normalize_advantages: true,
            trust_region: TrustRegionConfig::default(),
            batch_size: 32,
            epoch_min_timesteps: 1024,
            max_epochs: 200,
            value_lr: 1e-3,
            value_epochs_per_update: 5,
            seed: 0,
            solved_window: 100,
            solved_threshold: 195.0,
            buffer_capacity: DEFAULT_CAPACITY,
            buffer_clear_threshold: DEFAULT_CLEAR_THRESHOLD,
            env: EnvParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(ConfigError::invalid("gamma", format!("must be in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(ConfigError::invalid("gae_lambda", format!("must be in [0, 1], got {}", self.gae_lambda)));
        }
        self.trust_region
            .validate()
            .map_err(|reason| ConfigError::invalid("trust_region", reason))?;
        let positive = [
            ("batch_size", self.batch_size),
            ("epoch_min_timesteps", self.epoch_min_timesteps),
            ("value_epochs_per_update", self.value_epochs_per_update),
            ("solved_window", self.solved_window),
            ("buffer_capacity", self.buffer_capacity),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ConfigError::invalid(key, "must be >= 1"));
            }
        }
        if !(self.value_lr.is_finite() && self.value_lr > 0.0) {
            return Err(ConfigError::invalid("value_lr", format!("must be > 0, got {}", self.value_lr)));
        }
        if !self.solved_threshold.is_finite() {
            return Err(ConfigError::invalid("solved_threshold", "must be finite"));
        }
        if self.buffer_clear_threshold.is_nan() {
            return Err(ConfigError::invalid("buffer_clear_threshold", "must not be NaN"));
        }
        self.env.validate()?;
        Ok(())
    }
}

/// Summary of one collect/fit/update cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub episodes: usize,
    pub timesteps: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    pub diag: UpdateDiagnostics,
    /// `None` when the replay memory was too small to fit this epoch.
    pub value_loss: Option<f64>,
    pub solved: bool,
}

/// Result of [`train`]; `halted` is set when the run stopped on a numerical
/// failure, in which case `records` holds everything up to it.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub records: Vec<EpochRecord>,
    pub halted: Option<String>,
    pub policy: ParamVector,
    pub value: ParamVector,
}

impl TrainRun {
    /// First epoch whose record is marked solved.
    pub fn epochs_to_solve(&self) -> Option<usize> {
        self.records.iter().find(|r| r.solved).map(|r| r.epoch)
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Runs whole episodes until at least `epoch_min_timesteps` steps have been
/// taken. Each finished episode gets returns and GAE advantages, is offered
/// to the replay memory's clear rule and is then stored.
pub fn collect_epoch<R: Rng + ?Sized>(
    env: &mut CartPole,
    policy: &ParamVector,
    value: &ParamVector,
    cfg: &TrainConfig,
    buffer: &mut ReplayBuffer,
    rng: &mut R,
) -> Result<Vec<Trajectory>, NnError> {
    let arch = MlpArchitecture::policy();
    let mut trajectories = Vec::new();
    let mut total = 0;
    while total < cfg.epoch_min_timesteps {
        let mut state = env.reset(rng);
        let mut traj = Trajectory::default();
        loop {
            let logits = arch.forward(policy, &state.to_array())?;
            let dist = nn::PolicyDistribution::from_logits([logits[0], logits[1]]);
            let action = dist.sample(rng);
            let out = env
                .step(Action::from_index(action).expect("binary action"))
                .expect("episode is live until done");
            traj.transitions.push(Transition {
                state,
                action,
                next_state: out.next,
                reward: out.reward,
                done: out.done,
                timestep: traj.len(),
                return_to_go: 0.0,
                advantage: 0.0,
            });
            state = out.next;
            if out.done {
                break;
            }
        }
        // Failure and the step cap both end the episode with bootstrap 0.
        let mut values = nn::values(value, &traj.states())?;
        values.push(0.0);
        traj.annotate(&values, cfg.gamma, cfg.gae_lambda);
        buffer.clear_if_solved(traj.total_reward());
        buffer.push(&traj);
        total += traj.len();
        trajectories.push(traj);
    }
    Ok(trajectories)
}

/// Mini-batch squared-error regression of `V(s)` onto stored returns.
///
/// Runs `value_epochs_per_update` rounds of `ceil(epoch_min_timesteps /
/// batch_size)` optimizer steps. Returns the mean pre-step batch loss, or
/// `None` (parameters untouched) when the memory holds fewer than
/// `batch_size` transitions.
pub fn fit_value<R: Rng + ?Sized>(
    value: &mut ParamVector,
    optimizer: &mut Adam,
    buffer: &ReplayBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Option<f64>, NnError> {
    if buffer.len() < cfg.batch_size {
        return Ok(None);
    }
    let arch = MlpArchitecture::value();
    let steps_per_round = cfg.epoch_min_timesteps.div_ceil(cfg.batch_size);
    let mut total_loss = 0.0;
    let mut count = 0;
    for _ in 0..cfg.value_epochs_per_update {
        for _ in 0..steps_per_round {
            let batch = buffer.sample(cfg.batch_size, rng).expect("size checked above");
            let states: Vec<_> = batch.iter().map(|t| t.state).collect();
            let targets: Vec<f64> = batch.iter().map(|t| t.return_to_go).collect();
            let n = targets.len() as f64;
            let (loss, grad) = arch.gradient(value, state_matrix(&states).view(), |out| {
                let mut g = Array2::zeros(out.raw_dim());
                let mut loss = 0.0;
                for (i, &y) in targets.iter().enumerate() {
                    let err = out[[i, 0]] - y;
                    loss += err * err / n;
                    g[[i, 0]] = 2.0 * err / n;
                }
                (loss, g)
            })?;
            optimizer.step(value, &grad);
            total_loss += loss;
            count += 1;
        }
    }
    Ok(Some(total_loss / count as f64))
}

/// Stateful training run.
pub struct Trainer {
    cfg: TrainConfig,
    env: CartPole,
    policy: ParamVector,
    value: ParamVector,
    optimizer: Adam,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    recent_returns: VecDeque<f64>,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let policy = MlpArchitecture::policy().init_params(&mut rng);
        let value = MlpArchitecture::value().init_params(&mut rng);
        Ok(Self {
            env: CartPole::new(cfg.env)?,
            optimizer: Adam::new(value.len(), cfg.value_lr),
            buffer: ReplayBuffer::new(cfg.buffer_capacity, cfg.buffer_clear_threshold),
            recent_returns: VecDeque::with_capacity(cfg.solved_window),
            policy,
            value,
            rng,
            cfg,
            epoch: 0,
        })
    }

    pub fn policy(&self) -> &ParamVector {
        &self.policy
    }

    pub fn value(&self) -> &ParamVector {
        &self.value
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Mean over the last `solved_window` episodes, once that many exist.
    pub fn window_mean(&self) -> Option<f64> {
        (self.recent_returns.len() == self.cfg.solved_window)
            .then(|| self.recent_returns.iter().sum::<f64>() / self.recent_returns.len() as f64)
    }

    /// One collect → fit → update cycle.
    pub fn run_epoch(&mut self) -> Result<EpochRecord, String> {
        self.epoch += 1;
        let trajectories = collect_epoch(
            &mut self.env,
            &self.policy,
            &self.value,
            &self.cfg,
            &mut self.buffer,
            &mut self.rng,
        )
        .map_err(|e| e.to_string())?;
        let returns: Vec<f64> = trajectories.iter().map(|t| t.total_reward()).collect();
        for &r in &returns {
            if self.recent_returns.len() == self.cfg.solved_window {
                self.recent_returns.pop_front();
            }
            self.recent_returns.push_back(r);
        }
        let solved = self.window_mean().is_some_and(|m| m >= self.cfg.solved_threshold);

        let value_loss = fit_value(&mut self.value, &mut self.optimizer, &self.buffer, &self.cfg, &mut self.rng)
            .map_err(|e| e.to_string())?;

        let batch = PolicyBatch::from_trajectories(&trajectories, self.cfg.normalize_advantages)
            .map_err(|e| e.to_string())?;
        let (policy, diag) = trpo_step(
            &MlpArchitecture::policy(),
            &self.policy,
            &batch,
            &self.cfg.trust_region,
            self.cfg.algo.uses_entropy(),
            self.cfg.gamma,
        )
        .map_err(|e| e.to_string())?;
        self.policy = policy;

        Ok(EpochRecord {
            epoch: self.epoch,
            episodes: returns.len(),
            timesteps: batch.len(),
            mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
            min_return: returns.iter().cloned().fold(f64::INFINITY, f64::min),
            max_return: returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            diag,
            value_loss,
            solved,
        })
    }
}

/// Trains until solved or `max_epochs`, calling `on_epoch` after each record.
pub fn train_with<F: FnMut(&EpochRecord)>(cfg: TrainConfig, mut on_epoch: F) -> Result<TrainRun, ConfigError> {
    let max_epochs = cfg.max_epochs;
    let mut trainer = Trainer::new(cfg)?;
    let mut records = Vec::new();
    let mut halted = None;
    for _ in 0..max_epochs {
        match trainer.run_epoch() {
            Ok(record) => {
                on_epoch(&record);
                let finite = record.diag.is_finite() && record.value_loss.is_none_or(f64::is_finite);
                let solved = record.solved;
                records.push(record);
                if !finite {
                    halted = Some(format!("non-finite diagnostics at epoch {}", trainer.epoch));
                    break;
                }
                if solved {
                    break;
                }
            }
            Err(e) => {
                halted = Some(format!("epoch {} failed: {e}", trainer.epoch));
                break;
            }
        }
    }
    if let Some(reason) = &halted {
        log::warn!("run halted: {reason}");
    }
    Ok(TrainRun {
        records,
        halted,
        policy: trainer.policy,
        value: trainer.value,
    })
}

pub fn train(cfg: TrainConfig) -> Result<TrainRun, ConfigError> {
    train_with(cfg, |_| {})
}
