use rand::{Rng, RngCore};

use super::{join_f64, join_usize, JointStep, MultiAgentEnv};
use crate::{Error, Result};

/// Physical constants and episode limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length (m).
    pub half_length: f64,
    pub force: f64,
    pub dt: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
    pub max_steps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            dt: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * std::f64::consts::PI / 180.0,
            max_steps: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }

    /// Bounds are inclusive: sitting exactly on a threshold ends the episode.
    pub fn out_of_bounds(&self, p: &CartPoleParams) -> bool {
        self.x.abs() >= p.x_threshold || self.theta.abs() >= p.theta_threshold
    }

    /// One explicit Euler step under a horizontal `force` (N).
    pub fn advance(self, p: &CartPoleParams, force: f64) -> Self {
        let total_mass = p.cart_mass + p.pole_mass;
        let pole_mass_length = p.pole_mass * p.half_length;
        let (sin, cos) = self.theta.sin_cos();
        let temp = (force + pole_mass_length * self.theta_dot * self.theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        Self {
            x: self.x + p.dt * self.x_dot,
            x_dot: self.x_dot + p.dt * x_acc,
            theta: self.theta + p.dt * self.theta_dot,
            theta_dot: self.theta_dot + p.dt * theta_acc,
        }
    }
}

/// Kinetic plus potential energy of cart and uniform rod (pivot height as zero).
pub fn mechanical_energy(p: &CartPoleParams, s: &CartPoleState) -> f64 {
    let total_mass = p.cart_mass + p.pole_mass;
    let l = p.half_length;
    let kinetic = 0.5 * total_mass * s.x_dot * s.x_dot
        + p.pole_mass * l * s.x_dot * s.theta_dot * s.theta.cos()
        + 0.5 * (4.0 / 3.0) * p.pole_mass * l * l * s.theta_dot * s.theta_dot;
    kinetic + p.pole_mass * p.gravity * l * s.theta.cos()
}

/// Classic cart-pole balancing task; action 0 pushes left, 1 pushes right.
#[derive(Debug, Clone)]
pub struct CartPole {
    params: CartPoleParams,
    state: CartPoleState,
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self {
            params,
            state: CartPoleState::default(),
            steps: 0,
            done: true,
        }
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: CartPoleState) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.done = false;
        state.to_vec()
    }

    /// Single-agent step: `(observation, reward, done, terminal)`.
    pub fn step_single(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool, bool)> {
        if self.done {
            return Err(Error::Usage(
                "cart-pole stepped after the episode ended".into(),
            ));
        }
        let force = match action {
            0 => -self.params.force,
            1 => self.params.force,
            a => return Err(Error::Usage(format!("cart-pole action {a} out of range"))),
        };
        self.state = self.state.advance(&self.params, force);
        self.steps += 1;
        let failed = self.state.out_of_bounds(&self.params);
        let truncated = self.steps >= self.params.max_steps;
        self.done = failed || truncated;
        Ok((self.state.to_vec(), 1.0, self.done, failed))
    }
}

impl MultiAgentEnv for CartPole {
    fn agent_count(&self) -> usize {
        1
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn action_count(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        let mut u = || rng.gen_range(-0.05..0.05);
        let state = CartPoleState {
            x: u(),
            x_dot: u(),
            theta: u(),
            theta_dot: u(),
        };
        vec![self.reset_to(state)]
    }

    fn step(&mut self, actions: &[usize], _rng: &mut dyn RngCore) -> Result<JointStep> {
        if actions.len() != 1 {
            return Err(Error::Dimension {
                context: "cart-pole joint action",
                expected: 1,
                got: actions.len(),
            });
        }
        let (obs, reward, done, terminal) = self.step_single(actions[0])?;
        Ok(JointStep {
            observations: vec![obs],
            rewards: vec![reward],
            done,
            terminal,
        })
    }

    fn trace_line(&self, step: usize, actions: &[usize], rewards: &[f64]) -> String {
        format!(
            "{step} | cart {} | a={} | r={}",
            join_f64(&self.state.to_vec()),
            join_usize(actions),
            join_f64(rewards)
        )
    }
}
