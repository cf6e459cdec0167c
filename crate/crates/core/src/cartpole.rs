//! Cart-pole balancing task.
//!
//! A pole is hinged to a cart on a frictionless track. Each step the agent
//! pushes the cart left or right with a fixed force, receives a reward of
//! `+1`, and the episode ends once the pole leans more than 15 degrees from
//! vertical, the cart leaves `[-2.4, 2.4]`, or the step cap is reached.
//!
//! Dynamics are the classical cart-pole equations of motion advanced with a
//! single explicit-Euler step:
//!
//! ```text
//! temp      = (F + m_p l θ'² sin θ) / (m_c + m_p)
//! θ''       = (g sin θ − cos θ · temp) / (l (4/3 − m_p cos² θ / (m_c + m_p)))
//! x''       = temp − m_p l θ'' cos θ / (m_c + m_p)
//! ```

use rand::Rng;

use crate::error::EnvError;

/// Pole angle (radians) beyond which an episode terminates.
pub const THETA_THRESHOLD: f64 = 15.0 * std::f64::consts::PI / 180.0;
/// Cart position beyond which an episode terminates.
pub const X_THRESHOLD: f64 = 2.4;
/// Half-width of the uniform initial-state distribution.
pub const INIT_RANGE: f64 = 0.05;

/// Physical state of the cart and pole.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnvState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl EnvState {
    pub fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self {
            x,
            x_dot,
            theta,
            theta_dot,
        }
    }

    /// Maps four unit-interval draws onto the initial-state box, so a draw
    /// of `0.5` lands on the midpoint `0.0`.
    pub fn from_unit_draws(u: [f64; 4]) -> Self {
        let f = |v: f64| INIT_RANGE * (2.0 * v - 1.0);
        Self::new(f(u[0]), f(u[1]), f(u[2]), f(u[3]))
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// True when the pole has fallen or the cart has left the track.
    pub fn out_of_bounds(&self) -> bool {
        self.x.abs() > X_THRESHOLD || self.theta.abs() > THETA_THRESHOLD
    }
}

/// Binary action: push the cart left (`0`) or right (`1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Left = 0,
    Right = 1,
}

impl Action {
    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Action::Left),
            1 => Some(Action::Right),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Physics constants and the episode step cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub step_dt: f64,
    pub max_episode_steps: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            step_dt: 0.02,
            max_episode_steps: 200,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("force_magnitude", self.force_magnitude),
            ("step_dt", self.step_dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EnvError::InvalidParam { name, value: v });
            }
        }
        if self.step_dt >= 1.0 {
            return Err(EnvError::InvalidParam {
                name: "step_dt",
                value: self.step_dt,
            });
        }
        if self.max_episode_steps == 0 {
            return Err(EnvError::InvalidParam {
                name: "max_episode_steps",
                value: 0.0,
            });
        }
        Ok(())
    }
}

/// Draws an initial state with every field uniform on `[-0.05, 0.05]`.
pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> EnvState {
    EnvState::from_unit_draws([
        rng.random::<f64>(),
        rng.random::<f64>(),
        rng.random::<f64>(),
        rng.random::<f64>(),
    ])
}

/// One Euler step of the dynamics. Reward is always `1.0`; `done` reports
/// only the angle/position bounds (the step cap lives in [`CartPole`]).
pub fn step(
    state: &EnvState,
    action: Action,
    params: &EnvParams,
) -> Result<(EnvState, f64, bool), EnvError> {
    if state.out_of_bounds() || !state.is_finite() {
        return Err(EnvError::TerminalState);
    }
    let force = match action {
        Action::Right => params.force_magnitude,
        Action::Left => -params.force_magnitude,
    };
    let total_mass = params.cart_mass + params.pole_mass;
    let pole_mass_length = params.pole_mass * params.pole_half_length;
    let (sin_t, cos_t) = state.theta.sin_cos();

    let temp = (force + pole_mass_length * state.theta_dot * state.theta_dot * sin_t) / total_mass;
    let theta_acc = (params.gravity * sin_t - cos_t * temp)
        / (params.pole_half_length
            * (4.0 / 3.0 - params.pole_mass * cos_t * cos_t / total_mass));
    let x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;

    let dt = params.step_dt;
    let next = EnvState {
        x: state.x + dt * state.x_dot,
        x_dot: state.x_dot + dt * x_acc,
        theta: state.theta + dt * state.theta_dot,
        theta_dot: state.theta_dot + dt * theta_acc,
    };
    Ok((next, 1.0, next.out_of_bounds()))
}

/// Outcome of one [`CartPole::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub done: bool,
    /// True when the episode ended on the step cap rather than a failure.
    pub truncated: bool,
}

/// Episode wrapper that enforces the step cap and refuses to step past the
/// end of an episode.
#[derive(Debug, Clone)]
pub struct CartPole {
    params: EnvParams,
    state: EnvState,
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(params: EnvParams) -> Result<Self, EnvError> {
        params.validate()?;
        Ok(Self {
            params,
            state: EnvState::default(),
            steps: 0,
            done: true,
        })
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> EnvState {
        self.state = reset(rng);
        self.steps = 0;
        self.done = false;
        self.state
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let (next, reward, failed) = step(&self.state, action, &self.params)?;
        self.steps += 1;
        let truncated = !failed && self.steps >= self.params.max_episode_steps;
        self.state = next;
        self.done = failed || truncated;
        Ok(StepOutcome {
            next,
            reward,
            done: self.done,
            truncated,
        })
    }
}
