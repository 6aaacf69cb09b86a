//! Deterministic toy continuous-control tasks, their scripted experts, and
//! demonstration datasets.
//!
//! The environment reward is only reachable through [`Env::step`], which the
//! evaluation and demo code use. Learner code collects experience through
//! [`Env::step_blind`], whose result type has no reward field.

mod demos;
mod expert;
pub mod lqr;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use demos::{generate_demos, DemoDataset, DemoMeta, ReturnStats, Trajectory};
pub use expert::Expert;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    DoubleIntegrator1d,
    PointReach2d,
    CartpoleBalance,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [
        EnvKind::DoubleIntegrator1d,
        EnvKind::PointReach2d,
        EnvKind::CartpoleBalance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::DoubleIntegrator1d => "double_integrator_1d",
            EnvKind::PointReach2d => "point_reach_2d",
            EnvKind::CartpoleBalance => "cartpole_balance",
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::DoubleIntegrator1d => EnvSpec {
                kind: self,
                state_dim: 2,
                action_dim: 1,
                action_bound: 2.0,
                horizon: 200,
                dt: 0.05,
            },
            EnvKind::PointReach2d => EnvSpec {
                kind: self,
                state_dim: 6,
                action_dim: 2,
                action_bound: 1.0,
                horizon: 150,
                dt: 0.05,
            },
            EnvKind::CartpoleBalance => EnvSpec {
                kind: self,
                state_dim: 4,
                action_dim: 1,
                action_bound: 10.0,
                horizon: 200,
                dt: 0.02,
            },
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Actions live in `[-action_bound, action_bound]^action_dim`.
    pub action_bound: f64,
    pub horizon: usize,
    pub dt: f64,
}

impl EnvSpec {
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        let b = self.action_bound;
        action.iter().map(|a| a.clamp(-b, b)).collect()
    }
}

/// Double integrator goal position.
pub const DI_GOAL: f64 = 0.0;
/// Cart-pole failure thresholds.
pub const CARTPOLE_ANGLE_LIMIT: f64 = 0.2;
pub const CARTPOLE_TRACK_LIMIT: f64 = 2.4;
const CONTROL_COST: f64 = 0.01;

// Cart-pole constants.
const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const POLE_LENGTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Learner-facing step outcome. Carries no reward.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindStep {
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

/// A state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

/// One environment instance: the pure dynamics plus an episode step counter.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    steps: usize,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            spec: kind.spec(),
            steps: 0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn kind(&self) -> EnvKind {
        self.spec.kind
    }

    /// Steps taken in the current episode.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.steps = 0;
        match self.spec.kind {
            EnvKind::DoubleIntegrator1d => {
                vec![rng.random_range(-1.0..=1.0), rng.random_range(-0.1..=0.1)]
            }
            EnvKind::PointReach2d => {
                let px = rng.random_range(-1.0..=1.0);
                let py = rng.random_range(-1.0..=1.0);
                let gx = rng.random_range(-1.0..=1.0);
                let gy = rng.random_range(-1.0..=1.0);
                vec![px, py, 0.0, 0.0, gx, gy]
            }
            EnvKind::CartpoleBalance => (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect(),
        }
    }

    pub fn step(&mut self, state: &[f64], action: &[f64]) -> Result<StepResult> {
        check_dim("state", self.spec.state_dim, state.len())?;
        check_dim("action", self.spec.action_dim, action.len())?;
        if state.iter().chain(action).any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite state or action".into()));
        }
        let u = self.spec.clip_action(action);
        let (next_state, reward, failed) = dynamics(&self.spec, state, &u);
        self.steps += 1;
        Ok(StepResult {
            next_state,
            reward,
            terminal: failed,
            truncated: !failed && self.steps >= self.spec.horizon,
        })
    }

    pub fn step_blind(&mut self, state: &[f64], action: &[f64]) -> Result<BlindStep> {
        let r = self.step(state, action)?;
        Ok(BlindStep {
            next_state: r.next_state,
            terminal: r.terminal,
            truncated: r.truncated,
        })
    }
}

/// Semi-implicit Euler step of the declared dynamics with an already-clipped
/// action. Returns `(next_state, reward, failed)`; the reward is evaluated at
/// the pre-step state.
pub fn dynamics(spec: &EnvSpec, s: &[f64], u: &[f64]) -> (Vec<f64>, f64, bool) {
    let dt = spec.dt;
    match spec.kind {
        EnvKind::DoubleIntegrator1d => {
            let reward = -(s[0] - DI_GOAL).powi(2) - CONTROL_COST * u[0] * u[0];
            let vel = s[1] + u[0] * dt;
            (vec![s[0] + vel * dt, vel], reward, false)
        }
        EnvKind::PointReach2d => {
            let (dx, dy) = (s[0] - s[4], s[1] - s[5]);
            let reward = -(dx * dx + dy * dy) - CONTROL_COST * (u[0] * u[0] + u[1] * u[1]);
            let vx = s[2] + u[0] * dt;
            let vy = s[3] + u[1] * dt;
            (
                vec![s[0] + vx * dt, s[1] + vy * dt, vx, vy, s[4], s[5]],
                reward,
                false,
            )
        }
        EnvKind::CartpoleBalance => {
            let (x, x_dot, theta, theta_dot) = (s[0], s[1], s[2], s[3]);
            let total = CART_MASS + POLE_MASS;
            let pml = POLE_MASS * POLE_LENGTH;
            let (sin, cos) = theta.sin_cos();
            let temp = (u[0] + pml * theta_dot * theta_dot * sin) / total;
            let theta_acc = (GRAVITY * sin - cos * temp)
                / (POLE_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
            let x_acc = temp - pml * theta_acc * cos / total;
            let x_dot = x_dot + dt * x_acc;
            let theta_dot = theta_dot + dt * theta_acc;
            let next = vec![x + dt * x_dot, x_dot, theta + dt * theta_dot, theta_dot];
            let failed =
                next[2].abs() > CARTPOLE_ANGLE_LIMIT || next[0].abs() > CARTPOLE_TRACK_LIMIT;
            (next, 1.0, failed)
        }
    }
}

/// Goal state around which the expert regulates (zero velocity).
pub fn goal_state(spec: &EnvSpec, state: &[f64]) -> Vec<f64> {
    match spec.kind {
        EnvKind::DoubleIntegrator1d => vec![DI_GOAL, 0.0],
        EnvKind::PointReach2d => vec![state[4], state[5], 0.0, 0.0, state[4], state[5]],
        EnvKind::CartpoleBalance => vec![0.0; 4],
    }
}

/// One full episode with the true reward accumulated.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub ret: f64,
}

/// Runs `policy` from a fresh reset until termination or truncation.
pub fn rollout<R, P>(env: &mut Env, mut policy: P, rng: &mut R) -> Result<Episode>
where
    R: Rng + ?Sized,
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut state = env.reset(rng);
    let mut ep = Episode {
        states: Vec::new(),
        actions: Vec::new(),
        ret: 0.0,
    };
    loop {
        let action = env.spec().clip_action(&policy(&state)?);
        let r = env.step(&state, &action)?;
        ep.ret += r.reward;
        ep.states.push(std::mem::replace(&mut state, r.next_state));
        ep.actions.push(action);
        if r.terminal || r.truncated {
            return Ok(ep);
        }
    }
}
